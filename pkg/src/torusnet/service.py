"""Verb implementations shared by the HTTP API and the local CLI path.

Each function takes plain, JSON-friendly arguments and returns a dict.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np

from . import md, workloads
from .config import SimConfig, load_config
from .fence import build_fence_tables
from .stats import emit_stats


def config_from(config: Optional[dict] = None, path: Optional[str] = None, **overrides) -> SimConfig:
    src = path if path is not None else (config or {})
    return load_config(src, **overrides)


def build_check(cfg: SimConfig) -> dict:
    """Construct topology and the machine-wide fence table; report their shape."""
    sim = workloads.build_machine(cfg)
    g = sim.geom
    tables = build_fence_tables(g, "GC_to_GC", g.diameter)
    distinct = {g.neighbor(0, d) for d in g.active_dirs()}
    return {
        "nodes": g.num_nodes,
        "torus": list(g.dims),
        "diameter": g.diameter,
        "links_per_node": len(g.active_dirs()) * cfg.slices,
        "distinct_neighbors": len(distinct - {0}),
        "gcs_per_node": 2 * g.U * g.V,
        "icbs_per_node": cfg.slices * g.V,
        "channel_rows": list(g.channel_row),
        "link_bytes_per_cycle": cfg.link_bytes_per_cycle,
        "fence_table_entries": len(tables.entries),
        "max_expected_count": max((e.expected for e in tables.entries.values()), default=0),
    }


def pingpong(cfg: SimConfig, hops=None, pairs: int = 40, iterations: int = 2,
             src: Optional[list] = None, dst: Optional[list] = None) -> dict:
    """Either one explicit GC pair, or a sweep over hop counts with random pairs."""
    if src is not None and dst is not None:
        sim = workloads.build_machine(cfg)
        samples = workloads.pingpong_samples(sim, tuple(src), tuple(dst), iterations)
        ns = [cfg.ns(x) for x in samples]
        return {"src": list(src), "dst": list(dst), "one_way_ns_mean": float(np.mean(ns)),
                "one_way_ns_min": float(min(ns)), "iterations": iterations}
    if hops is None:
        hops = list(range(0, min(8, _diameter(cfg)) + 1))
    r = workloads.pingpong_sweep(cfg, hops, pairs, iterations)
    sim = workloads.build_machine(cfg)
    out = {"hops": r.hops, "latency_ns": r.latency_ns, "slope_ns": r.slope_ns, "intercept_ns": r.intercept_ns}
    if _diameter(cfg) >= 1:
        a, b = workloads.best_one_hop_pair(sim)
        ns = [cfg.ns(x) for x in workloads.pingpong_samples(sim, a, b, 16)]
        out["best_one_hop_min_ns"] = float(min(ns))
        out["best_one_hop_mean_ns"] = float(np.mean(ns))
    return out


def _diameter(cfg: SimConfig) -> int:
    return sum(d // 2 for d in cfg.torus)


def barrier(cfg: SimConfig, hops=None, pattern: str = "GC_to_GC", fold: bool = True) -> dict:
    if hops is None:
        hops = list(range(0, _diameter(cfg) + 1))
    r = workloads.run_barrier_sweep(cfg, hops, pattern, fold)
    return {"pattern": pattern, "hops": r.hops, "latency_ns": r.latency_ns, "slope_ns": r.slope_ns,
            "intercept_ns": r.intercept_ns}


def gen_traj(out: str, n_particles: int, n_steps: int, max_step: int = 1 << 10, max_accel: int = 16,
             init_velocity: Optional[int] = None, box_bits: int = 16, seed: int = 0) -> dict:
    traj = md.gen_trajectory(n_particles, n_steps, max_step, max_accel, init_velocity, box_bits, seed)
    traj.write(out)
    disp = np.abs(np.diff(traj.positions.astype(np.int64), axis=0))
    box = 1 << box_bits
    disp = np.minimum(disp, box - disp)  # periodic wrap is not a displacement
    return {"path": str(out), "n_particles": n_particles, "n_steps": n_steps,
            "max_displacement": int(disp.max()) if disp.size else 0,
            "mean_displacement": float(disp.mean()) if disp.size else 0.0}


def _load_traj(trajectory: Optional[str], gen: Optional[dict]) -> md.Trajectory:
    if trajectory:
        return md.Trajectory.read(trajectory)
    return md.gen_trajectory(**(gen or {"n_particles": 256, "n_steps": 4}))


def md_traffic(cfg: SimConfig, trajectory: Optional[str] = None, gen: Optional[dict] = None,
               steps: Optional[int] = None, hop_range: int = 1, gcs_per_node: Optional[int] = None,
               outdir: Optional[str] = None, warmup: int = 2) -> dict:
    traj = _load_traj(trajectory, gen)
    sim = md.run_md_traffic(cfg, traj, steps, hop_range, gcs_per_node)
    per_step = []
    for st in sim.stats.md_steps:
        raw = st["raw"].get("POSITION", 0)
        wire = st["wire"].get("POSITION", 0)
        per_step.append({"step": st["step"], "position_raw": raw, "position_wire": wire,
                         "reduction": 1 - wire / raw if raw else 0.0})
    warm = per_step[warmup:] or per_step
    raw = sum(s["position_raw"] for s in warm)
    wire = sum(s["position_wire"] for s in warm)
    result = {"steps": per_step, "warm_position_reduction": 1 - wire / raw if raw else 0.0,
              "injected": sim.stats.injected, "delivered": sim.stats.delivered}
    if outdir:
        emit_stats(sim, outdir, extra=result)
    return result


def replay(cfg: SimConfig, trajectory: Optional[str] = None, gen: Optional[dict] = None,
           steps: Optional[int] = None, hop_range: int = 1, frames_out: Optional[str] = None,
           warmup: int = 2) -> dict:
    traj = _load_traj(trajectory, gen)
    rows = md.replay_compress(cfg, traj, steps, hop_range, Path(frames_out) if frames_out else None)
    warm = rows[warmup:] or rows
    raw = sum(r["raw"] for r in warm)
    wire = sum(r["wire"] for r in warm)
    return {"steps": rows, "warm_reduction": 1 - wire / raw if raw else 0.0}

"""Latency micro-benchmarks: ping-pong and barrier sweeps."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import SimConfig
from .packet import PType, Quad, WriteMode
from .sim import Simulator

PING_ADDR = 16
PONG_ADDR = 17


def build_machine(cfg: SimConfig, **kw) -> Simulator:
    """Construct a simulator for ``cfg``; components are created lazily on first use."""
    return Simulator(cfg, **kw)


def linear_fit(xs, ys) -> tuple[float, float]:
    """Least-squares (slope, intercept)."""
    slope, intercept = np.polyfit(np.asarray(xs, float), np.asarray(ys, float), 1)
    return float(slope), float(intercept)


def run_pingpong(sim: Simulator, gc_a: tuple, gc_b: tuple, iterations: int = 4) -> float:
    """Mean one-way latency in cycles: half the average round trip."""
    return float(np.mean(pingpong_samples(sim, gc_a, gc_b, iterations)))


def pingpong_samples(sim: Simulator, gc_a: tuple, gc_b: tuple, iterations: int = 4) -> list[float]:
    """One-way latency (half round trip, cycles) of every ping-pong iteration.

    A counted-writes 16 bytes into B's ping quad, then blocks on its pong
    quad; B blocks on the ping quad and answers with a counted write into
    A's pong quad.  Each side sees released data ``gc_receive`` cycles after
    the releasing write lands.
    """
    if gc_a[0] != "G" or gc_b[0] != "G":
        raise ValueError("ping-pong endpoints must be GCs")
    cfg = sim.cfg
    rx = cfg.latency.gc_receive
    mem_a, mem_b = sim.memory(gc_a), sim.memory(gc_b)
    base_a = mem_a.cell(PONG_ADDR).counter
    base_b = mem_b.cell(PING_ADDR).counter
    starts: list[float] = []
    ends: list[float] = []

    def ping(i: int, t: float) -> None:
        starts.append(t)
        sim.send(gc_a, gc_b, PType.REQUEST_WRITE, [Quad(i, 0, 0, 0)], t=t, addr=PING_ADDR)
        got = mem_a.blocking_read(PONG_ADDR, (base_a + i + 1) & 0xFF, gc_a, t, lambda q, tr: sim.at(tr + rx, pinged, i, tr + rx))
        assert got is None

    def pinged(i: int, t: float) -> None:
        ends.append(t)
        if i + 1 < iterations:
            ping(i + 1, t)

    def pong_wait(i: int, t: float) -> None:
        got = mem_b.blocking_read(PING_ADDR, (base_b + i + 1) & 0xFF, gc_b, t, lambda q, tr: sim.at(tr + rx, pong, i, tr + rx))
        if got is not None:
            sim.at(t + rx, pong, i, t + rx)

    def pong(i: int, t: float) -> None:
        sim.send(gc_b, gc_a, PType.REQUEST_WRITE, [Quad(i, 1, 0, 0)], t=t, addr=PONG_ADDR)
        if i + 1 < iterations:
            pong_wait(i + 1, t)

    t0 = sim.now
    sim.at(t0, pong_wait, 0, t0)
    sim.at(t0, ping, 0, t0)
    sim.run()
    return [(e - s) / 2.0 for s, e in zip(starts, ends)]


def random_pair_at(sim: Simulator, hops: int, rng: random.Random) -> tuple[tuple, tuple]:
    """Uniform GC pair whose nodes are ``hops`` torus hops apart."""
    g = sim.geom
    a_node = rng.randrange(g.num_nodes)
    cands = [m for m in range(g.num_nodes) if g.distance(a_node, m) == hops]
    if not cands:
        raise ValueError(f"no node pair {hops} hops apart on {g.dims}")
    b_node = rng.choice(cands)
    a = ("G", a_node, rng.randrange(g.U), rng.randrange(g.V), rng.randrange(2))
    b = ("G", b_node, rng.randrange(g.U), rng.randrange(g.V), rng.randrange(2))
    return a, b


@dataclass
class SweepResult:
    hops: list
    latency_ns: list
    slope_ns: Optional[float] = None
    intercept_ns: Optional[float] = None
    samples: dict = field(default_factory=dict)


def pingpong_sweep(cfg: SimConfig, hops, pairs: int = 40, iterations: int = 2, seed: Optional[int] = None) -> SweepResult:
    """Average one-way latency over random GC pairs per hop count, plus a linear fit over hops >= 1."""
    rng = random.Random(f"{cfg.seed if seed is None else seed}:pairs")
    out = SweepResult(list(hops), [])
    for h in hops:
        vals = []
        sim = Simulator(cfg)  # pairs run back to back on one idle machine
        for _ in range(pairs):
            a, b = random_pair_at(sim, h, rng)
            vals.append(cfg.ns(run_pingpong(sim, a, b, iterations)))
        out.samples[h] = vals
        out.latency_ns.append(float(np.mean(vals)))
    pts = [(h, v) for h, v in zip(out.hops, out.latency_ns) if h >= 1]
    if len(pts) >= 2:
        out.slope_ns, out.intercept_ns = linear_fit(*zip(*pts))
    return out


def best_one_hop_pair(sim: Simulator) -> tuple[tuple, tuple]:
    """GC pair with the shortest 1-hop path: both tiles sit at the edge column on the channel rows.

    A dimension of extent 2 reaches its neighbor either way round with a
    random tie break, so a longer ring is preferred when one exists.
    """
    g = sim.geom
    dirs = g.active_dirs()
    d = next((d for d in dirs if g.dims[d // 2] > 2), dirs[0])
    n1 = g.neighbor(0, d)
    a = ("G", 0, 0, g.channel_row[d], 0)
    b = ("G", n1, 0, g.channel_row[d ^ 1], 0)
    return a, b


def run_barrier(cfg: SimConfig, hops: int, pattern: str = "GC_to_GC", fold: bool = True) -> dict:
    """Every GC issues one fence at t=0; returns completion stats in ns.

    Completion is the last barrier release: the fence delivery's counted
    write plus ``gc_receive``.  With ``fold`` the symmetric workload is
    simulated on one representative node.
    """
    sim = Simulator(cfg, fold=fold)
    nodes = [0] if fold else range(cfg.num_nodes)
    src_t = pattern.split("_to_")[0]
    for n in nodes:
        eps = sim.geom.gcs(n) if src_t == "GC" else sim.geom.icbs(n)
        for ep in eps:
            sim.issue_fence(ep, pattern, hops, 0.0)
    sim.run()
    inst = sim.fences.instances[0]
    if not sim.fences.quiescent():
        raise RuntimeError("fence counters left nonzero after the barrier")
    rx = cfg.latency.gc_receive
    times = [t + rx for t in inst.deliveries.values()]
    return {
        "hops": inst.hops,
        "completion_ns": cfg.ns(max(times)),
        "first_release_ns": cfg.ns(min(times)),
        "deliveries": len(times),
        "router_fires": sum(r.fired for r in sim.routers.values()),
    }


def run_barrier_sweep(cfg: SimConfig, hops, pattern: str = "GC_to_GC", fold: bool = True) -> SweepResult:
    out = SweepResult(list(hops), [])
    for h in hops:
        out.latency_ns.append(run_barrier(cfg, h, pattern, fold)["completion_ns"])
    if len(out.hops) >= 2:
        out.slope_ns, out.intercept_ns = linear_fit(out.hops, out.latency_ns)
    return out

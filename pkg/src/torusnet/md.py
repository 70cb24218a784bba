"""Synthetic MD trajectories and the position/force traffic they drive."""

from __future__ import annotations

import struct
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Optional, Union

import numpy as np

from .channel import ChannelAdapter
from .config import SimConfig
from .packet import PType, Quad, WriteMode
from .sim import Simulator
from .topology import Geometry

TRAJ_MAGIC = b"TRAJ"
TRAJ_VERSION = 1
_HDR = struct.Struct("<4sHHII")  # magic, version, reserved, n_particles, n_steps


@dataclass
class Trajectory:
    static: np.ndarray  # (n,) int32 particle ids, used as cache tags
    positions: np.ndarray  # (steps, n, 3) int32

    @property
    def n_particles(self) -> int:
        return int(self.static.shape[0])

    @property
    def n_steps(self) -> int:
        return int(self.positions.shape[0])

    def write(self, dest: Union[str, Path, BinaryIO]) -> None:
        if isinstance(dest, (str, Path)):
            with open(dest, "wb") as fh:
                return self.write(fh)
        dest.write(_HDR.pack(TRAJ_MAGIC, TRAJ_VERSION, 0, self.n_particles, self.n_steps))
        dest.write(self.static.astype("<i4").tobytes())
        dest.write(self.positions.astype("<i4").tobytes())

    @classmethod
    def read(cls, src: Union[str, Path, BinaryIO]) -> "Trajectory":
        if isinstance(src, (str, Path)):
            with open(src, "rb") as fh:
                return cls.read(fh)
        head = src.read(_HDR.size)
        if len(head) < _HDR.size:
            raise ValueError("truncated trajectory header")
        magic, version, _, n, steps = _HDR.unpack(head)
        if magic != TRAJ_MAGIC or version != TRAJ_VERSION:
            raise ValueError(f"not a version-{TRAJ_VERSION} trajectory file")
        static = np.frombuffer(src.read(4 * n), dtype="<i4")
        body = np.frombuffer(src.read(12 * n * steps), dtype="<i4")
        if static.size != n or body.size != 3 * n * steps:
            raise ValueError("truncated trajectory body")
        return cls(static.astype(np.int32), body.reshape(steps, n, 3).astype(np.int32))


def gen_trajectory(
    n_particles: int,
    n_steps: int,
    max_step: int = 1 << 10,
    max_accel: int = 16,
    init_velocity: Optional[int] = None,
    box_bits: int = 16,
    seed: int = 0,
) -> Trajectory:
    """Smooth integer trajectories in a periodic box of ``2**box_bits`` LSBs.

    Velocities start uniform in ``[-init_velocity, init_velocity]`` (default
    ``max_step // 2``), change by a uniform integer acceleration in
    ``[-max_accel, max_accel]`` each step, and are clamped so no coordinate
    moves more than ``max_step`` per step.  Coordinates are centred on zero.
    """
    if n_particles < 1 or n_steps < 1:
        raise ValueError("n_particles and n_steps must be positive")
    if max_step < 0 or max_accel < 0 or not 1 <= box_bits <= 31:
        raise ValueError("motion parameters must be non-negative and box_bits in [1, 31]")
    v0 = max_step // 2 if init_velocity is None else init_velocity
    if v0 < 0 or v0 > max_step:
        raise ValueError("init_velocity must lie in [0, max_step]")
    rng = np.random.default_rng(seed)
    box = 1 << box_bits
    half = box // 2
    pos = rng.integers(-half, half, size=(n_particles, 3), dtype=np.int64)
    vel = rng.integers(-v0, v0 + 1, size=(n_particles, 3), dtype=np.int64)
    out = np.empty((n_steps, n_particles, 3), dtype=np.int32)
    for t in range(n_steps):
        out[t] = pos
        if max_accel:
            vel = np.clip(vel + rng.integers(-max_accel, max_accel + 1, size=vel.shape), -max_step, max_step)
        pos = (pos + vel + half) % box - half
    return Trajectory(np.arange(n_particles, dtype=np.int32), out)


# -- placement --------------------------------------------------------------


class Placement:
    """Which node, GC and remote ICBs each particle uses."""

    def __init__(self, geom: Geometry, n_particles: int, hop_range: int = 1, gcs_per_node: Optional[int] = None):
        self.geom = geom
        self.hop_range = hop_range
        g = geom
        self.node_gcs = {n: g.gcs(n)[: gcs_per_node or None] for n in range(g.num_nodes)}
        self.neighbors = {
            n: [m for m in range(g.num_nodes) if m != n and g.distance(n, m) <= hop_range] for n in range(g.num_nodes)
        }
        # contiguous id blocks per node, so a node's particles spread over all cache sets
        per = -(-n_particles // g.num_nodes)
        self.home = []
        for i in range(n_particles):
            n, k = divmod(i, per)
            gcs = self.node_gcs[n]
            self.home.append(gcs[k % len(gcs)])

    def icb(self, i: int, m: int) -> tuple:
        icbs = self.geom.icbs(m)
        return icbs[(i * 7 + m) % len(icbs)]

    def per_node(self, n_particles: int) -> float:
        return n_particles / self.geom.num_nodes


def position_quad(traj: Trajectory, step: int, i: int) -> Quad:
    x, y, z = traj.positions[step, i]
    return Quad(int(x), int(y), int(z), int(traj.static[i]))


def force_quad(step: int, i: int, m: int) -> Quad:
    # small deterministic forces: a fixed-point accumulate payload that INZ can shrink
    h = (step * 1_000_003 + i * 7919 + m * 104_729) & 0xFFFFFF
    return Quad((h & 0xFFF) - 0x800, ((h >> 12) & 0xFFF) - 0x800, (h % 2047) - 1023, 0)


def _byte_totals(sim: Simulator) -> tuple[Counter, Counter]:
    raw, wire = Counter(), Counter()
    for _, a in sim.adapters():
        raw.update(a.raw_bytes)
        wire.update(a.wire_bytes)
    return raw, wire


def run_md_traffic(
    cfg: SimConfig,
    traj: Trajectory,
    steps: Optional[int] = None,
    hop_range: int = 1,
    gcs_per_node: Optional[int] = None,
) -> Simulator:
    """Drive position/force traffic for ``steps`` time steps; returns the finished simulator.

    Per step every GC streams its particles' positions to an ICB on each
    node within ``hop_range``, then issues a GC_to_ICB fence.  An ICB that
    receives the fence answers every position it got with a force packet
    (Accumulate counted write to the particle's force quad).  A GC that has
    all its forces issues a GC_to_GC fence; the step ends when that fence
    has been delivered everywhere, after which every channel carries a
    time-step marker that ages the particle caches.

    Per-step byte deltas land in ``sim.stats.md_steps``.
    """
    sim = Simulator(cfg)
    g = sim.geom
    place = Placement(g, traj.n_particles, hop_range, gcs_per_node)
    steps = traj.n_steps if steps is None else min(steps, traj.n_steps)
    rx = cfg.latency.gc_receive
    by_gc = defaultdict(list)
    for i, gc in enumerate(place.home):
        by_gc[gc].append(i)
    all_gcs = [gc for n in range(g.num_nodes) for gc in place.node_gcs[n]]
    state = {"step": 0, "forces": Counter(), "pending": defaultdict(list), "gc_fenced": 0}
    sim.stats.md_steps = []
    last = [_byte_totals(sim)]

    def start_step(s: int, t: float) -> None:
        state["step"] = s
        state["forces"] = Counter()
        state["gc_fenced"] = 0
        for gc in all_gcs:
            for i in by_gc.get(gc, ()):
                q = position_quad(traj, s, i)
                for m in place.neighbors[gc[1]]:
                    sim.send(gc, place.icb(i, m), PType.POSITION, [q], t=t, flow=f"{i}:{m}", tag=(i, gc))
            sim.issue_fence(gc, "GC_to_ICB", hop_range, t)
            _maybe_gc_fence(gc, t)

    def _expected_forces(gc) -> int:
        return len(by_gc.get(gc, ())) * len(place.neighbors[gc[1]])

    def _maybe_gc_fence(gc, t) -> None:
        if state["forces"][gc] == _expected_forces(gc):
            state["forces"][gc] = -1  # fenced for this step
            sim.issue_fence(gc, "GC_to_GC", hop_range, t)

    def on_deliver(ep, pkt, t):
        if pkt.ptype == PType.POSITION:
            state["pending"][ep].append((pkt.tag, pkt.dst[1]))
        elif pkt.ptype == PType.FORCE:
            state["forces"][ep] += 1
            sim.at(t + rx, _maybe_gc_fence, ep, t + rx)

    def on_fence(ep, inst, t):
        if ep[0] == "I":
            for (i, gc), m in state["pending"].pop(ep, []):
                sim.send(ep, gc, PType.FORCE, [force_quad(state["step"], i, m)], t=t,
                         mode=WriteMode.ACCUMULATE, addr=i % 4096)
        elif inst.retired_at is not None and inst.pattern == "GC_to_GC":
            end_step(t + rx)

    def end_step(t: float) -> None:
        sim.tick_caches()
        raw, wire = _byte_totals(sim)
        raw0, wire0 = last[0]
        last[0] = (raw, wire)
        sim.stats.md_steps.append({
            "step": state["step"],
            "end_cycle": t,
            "raw": dict(raw - raw0),
            "wire": dict(wire - wire0),
        })
        if state["step"] + 1 < steps:
            sim.at(t, start_step, state["step"] + 1, t)

    sim.on_deliver = on_deliver
    sim.on_fence = on_fence
    if steps > 0:
        sim.at(0.0, start_step, 0, 0.0)
    sim.run()
    for _, a in sim.adapters():
        a.check_synchronized()
    return sim


def replay_compress(
    cfg: SimConfig,
    traj: Trajectory,
    steps: Optional[int] = None,
    hop_range: int = 1,
    frames_out: Optional[Path] = None,
) -> list[dict]:
    """Codec-only replay: push each step's position records through the
    channel adapters on their flow-hashed routes, without timing.

    Returns per-step {"raw": bytes, "wire": bytes} over all links.
    """
    import random

    g = Geometry(cfg)
    place = Placement(g, traj.n_particles, hop_range)
    steps = traj.n_steps if steps is None else min(steps, traj.n_steps)
    adapters: dict = {}
    routes: dict = {}
    out = []
    for s in range(steps):
        raw = wire = 0
        for i, gc in enumerate(place.home):
            q = position_quad(traj, s, i)
            for m in place.neighbors[gc[1]]:
                key = (i, m)
                links = routes.get(key)
                if links is None:
                    choice = g.random_choice(random.Random(f"{cfg.seed}:{i}:{m}"))
                    links = routes[key] = g.route(gc, place.icb(i, m), choice).links
                for node, side, d, _ in links:
                    a = adapters.get((node, side, d))
                    if a is None:
                        a = adapters[(node, side, d)] = ChannelAdapter(
                            cfg.inz, cfg.pcache, cfg.pcache_threshold, cfg.frame_bytes, frames_out is not None)
                    recs = a.egress(i & 0xFFFF, PType.POSITION, [q])
                    back = a.ingress(recs, PType.POSITION)
                    if back[0].words != q.words:
                        raise AssertionError(f"replay altered particle {i} at step {s}")
                    raw += 25
                    wire += sum(r.wire_bytes for r in recs)
        for a in adapters.values():
            a.tick()
        out.append({"step": s, "raw": raw, "wire": wire})
    if frames_out is not None:
        from .inz import write_frame_dump

        frames_out.mkdir(parents=True, exist_ok=True)
        for (node, side, d), a in sorted(adapters.items()):
            a.flush_frames()
            with open(frames_out / f"link_n{node}_s{side}_d{d}.inzf", "wb") as fh:
                write_frame_dump(fh, a.frames, cfg.frame_bytes)
    return out

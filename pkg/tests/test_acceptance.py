"""End-to-end acceptance checks, one test per criterion.

Each test fills ``report["detail"]`` with the measured values; conftest prints
one pass/fail line per criterion in the terminal summary.
"""

import random
import time

import numpy as np
import pytest

from torusnet.config import SimConfig
from torusnet.inz import RecordKind, decode_batch, decode_quad, encode_batch, encode_quad
from torusnet.md import gen_trajectory, replay_compress
from torusnet.packet import Quad
from torusnet.pcache import CachePair, PositionPacket, receive_side_process, send_side_process
from torusnet.sim import Simulator
from torusnet.stats import emit_stats
from torusnet.traffic import fence_trial, run_request_response
from torusnet.workloads import best_one_hop_pair, pingpong_samples, pingpong_sweep, run_barrier_sweep

BIG = (4, 4, 8)


def criterion(n):
    def mark(fn):
        fn.criterion = f"criterion {n}"
        return pytest.mark.slow(fn)

    return mark


@pytest.fixture
def report():
    return {"detail": ""}


@criterion(1)
def test_inz_round_trip(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    # mix of small magnitudes (the common case) and full-range words
    small = rng.integers(-(2**12), 2**12, size=(500_000, 4))
    wide = rng.integers(-(2**31), 2**31, size=(500_000, 4))
    quads = np.concatenate([small, wide]).astype(np.int64)
    sizes, blocks = encode_batch(quads)
    back = decode_batch(sizes, blocks)
    assert np.array_equal(np.asarray(back, dtype=np.int64), quads)
    grid = range(-3, 4)
    n = 0
    for w in np.array(np.meshgrid(grid, grid, grid, grid)).T.reshape(-1, 4):
        q = Quad(*map(int, w))
        assert decode_quad(encode_quad(q)) == q
        n += 1
    assert encode_quad(Quad()).nbytes == 0
    abandoned = encode_quad(Quad(-(2**31), 2**31 - 1, 5, -7))
    assert abandoned.nbytes == 16 and len(abandoned.data) == 16
    elapsed = time.perf_counter() - t0
    report["detail"] = f"{len(quads)} random + {n} grid quads in {elapsed:.1f} s"
    assert elapsed < 10


@criterion(2)
def test_extrapolator_exact(report):
    rng = random.Random(7)
    cases = 0
    # differences are held in DIFF_BITS signed bits: |b| + 23|c| stays below 2047 over 12 steps
    for _ in range(2000):
        a = [rng.randint(-(2**28), 2**28) for _ in range(3)]
        b = [rng.randint(-1000, 1000) for _ in range(3)]
        c = [rng.randint(-40, 40) for _ in range(3)]
        pair = CachePair()
        for t in range(12):
            x = [a[k] + b[k] * t + c[k] * t * t for k in range(3)]
            rec, _ = pair.transfer(PositionPacket(t, *x, 99))
            if t >= 4:  # t=0 allocates, t=4 is the 4th consecutive hit
                assert rec.kind == RecordKind.COMPRESSED_POSITION and rec.payload.nbytes == 0
        cases += 1
    report["detail"] = f"{cases} quadratic trajectories, zero residual from hit 4"


@criterion(3)
def test_cache_synchrony(report):
    rng = random.Random(3)
    pair = CachePair(threshold=2)
    pos = {}
    kinds = set()
    for t in range(10_000):
        pid = rng.randrange(64) * 256 + rng.randrange(6) if rng.random() < 0.7 else rng.randrange(5000)
        old = pos.get(pid, (0, 0, 0))
        r = rng.random()
        if r < 0.03:
            new = tuple(rng.getrandbits(32) - 2**31 for _ in range(3))
        elif r < 0.1:
            new = old
        else:
            new = tuple(c + rng.randint(-700, 700) for c in old)
        pos[pid] = new
        p = PositionPacket(t & 0xFFFF, *new, pid ^ 0x3C3C)
        rec = send_side_process(pair.send, p)
        kinds.add(rec.kind)
        assert receive_side_process(pair.recv, rec) == p
        assert pair.send.state() == pair.recv.state()
        if t % 50 == 49:
            pair.tick()
    c = pair.send
    assert c.hits and c.misses and c.bypasses and c.evictions
    report["detail"] = f"10000 records, hits={c.hits} misses={c.misses} bypasses={c.bypasses} evictions={c.evictions}"


@criterion(4)
def test_latency_calibration(report):
    t0 = time.perf_counter()
    cfg = SimConfig(torus=BIG)
    sim = Simulator(cfg)
    a, b = best_one_hop_pair(sim)
    best = cfg.ns(min(pingpong_samples(sim, a, b, 16)))
    sweep = pingpong_sweep(cfg, range(1, 9), pairs=60, iterations=1)
    elapsed = time.perf_counter() - t0
    report["detail"] = (f"1-hop {best:.1f} ns, slope {sweep.slope_ns:.1f} ns, "
                        f"intercept {sweep.intercept_ns:.1f} ns, {elapsed:.0f} s")
    assert abs(best - 55) <= 2
    assert sweep.slope_ns == pytest.approx(34.2, rel=0.10)
    assert sweep.intercept_ns == pytest.approx(55.9, rel=0.10)
    assert elapsed < 60


@criterion(5)
def test_barrier(report):
    t0 = time.perf_counter()
    cfg = SimConfig(torus=BIG)
    fence = run_barrier_sweep(cfg, range(0, 9))
    unicast = pingpong_sweep(cfg, range(1, 9), pairs=20, iterations=1)
    elapsed = time.perf_counter() - t0
    zero, eight = fence.latency_ns[0], fence.latency_ns[8]
    report["detail"] = (f"0-hop {zero:.1f} ns, 8-hop {eight:.1f} ns, fence slope {fence.slope_ns:.1f} "
                        f"vs unicast {unicast.slope_ns:.1f} ns/hop, {elapsed:.0f} s")
    assert zero == pytest.approx(51.5, rel=0.10)
    assert eight == pytest.approx(504, rel=0.10)
    assert fence.slope_ns > unicast.slope_ns
    assert elapsed < 120


@criterion(6)
def test_fence_ordering(report):
    bad, fences, deliveries = [], 0, 0
    for seed in range(100):
        sim, problems = fence_trial(seed)
        fences += len(sim.fences.instances)
        deliveries += sum(len(i.deliveries) for i in sim.fences.instances)
        if problems:
            bad.append((seed, problems[:3]))
    report["detail"] = f"100 runs, {fences} fences, {deliveries} deliveries, {len(bad)} runs with violations"
    assert not bad, bad[:5]


@criterion(7)
@pytest.mark.parametrize("pattern", ["uniform", "neighbor"])
def test_deadlock_freedom(report, pattern):
    cfg = SimConfig(torus=BIG, core_u=4, core_v=6, inz=False, pcache=False)
    sim = run_request_response(cfg, pattern, load=0.9, duration=100)
    st = sim.stats
    report["detail"] = (f"{pattern}: {st.delivered}/{st.injected} delivered, "
                        f"{len(sim.route_violations)} route violations")
    assert st.injected > 0 and st.delivered == st.injected and st.conservation_ok()
    assert not sim.route_violations


def _warm_reduction(cfg, traj, warm=2):
    rows = replay_compress(cfg, traj)[warm:]
    return 1 - sum(r["wire"] for r in rows) / sum(r["raw"] for r in rows)


@criterion(8)
def test_compression_reduction(report):
    t0 = time.perf_counter()
    base = SimConfig(torus=(2, 2, 2))
    traj = gen_trajectory(8 * 256, 4, max_step=1 << 10, seed=0)
    inz_only = _warm_reduction(base.model_copy(update={"pcache": False}), traj, warm=0)
    both = _warm_reduction(base, traj)
    trend = []
    for ppn in (1024, 2048, 4096, 8192):
        trend.append(_warm_reduction(base, gen_trajectory(8 * ppn, 4, max_step=1 << 10, seed=0)))
    elapsed = time.perf_counter() - t0
    report["detail"] = (f"INZ {inz_only:.3f}, INZ+cache {both:.3f}, trend "
                        + "/".join(f"{r:.3f}" for r in trend) + f", {elapsed:.0f} s")
    assert inz_only >= 0.25
    assert both >= 0.40
    assert all(x >= y for x, y in zip(trend, trend[1:]))
    assert elapsed < 300


@criterion(9)
def test_determinism(report, tmp_path):
    cfg = SimConfig(torus=(2, 2, 2), core_u=4, core_v=6, seed=11)
    outs, digests = [], []
    for k in range(2):
        sim = run_request_response(cfg, "uniform", load=0.6, duration=120, fences=[(60, "GC_to_GC", 2)])
        d = tmp_path / f"run{k}"
        emit_stats(sim, d)
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
        digests.append(sim.trace_digest)
    report["detail"] = f"{len(outs[0])} stats files, trace {digests[0][:12]}"
    assert outs[0] == outs[1]
    assert digests[0] == digests[1]

"""Synthetic request/response traffic for stress and deadlock testing."""

from __future__ import annotations

import random
from typing import Optional

from .config import SimConfig
from .packet import PType, Quad
from .sim import OrderingAudit, Simulator

RECORD_BYTES = 25


def saturation_rate(sim: Simulator, mean_hops: float) -> float:
    """Requests per cycle per node that would saturate the torus links.

    Every request is answered by one equal-sized response, so each request
    costs ``2 * mean_hops`` link-slice traversals spread over all slices.
    """
    g = sim.geom
    slices = len(g.active_dirs()) * sim.cfg.slices
    per_node_capacity = slices * sim.cfg.link_bytes_per_cycle / RECORD_BYTES
    return per_node_capacity / (2.0 * max(mean_hops, 1e-9))


def mean_distance(sim: Simulator, dests: dict) -> float:
    g = sim.geom
    tot = cnt = 0
    for n, ms in dests.items():
        for m in ms:
            tot += g.distance(n, m)
            cnt += 1
    return tot / cnt if cnt else 0.0


def run_request_response(
    cfg: SimConfig,
    pattern: str = "uniform",
    load: float = 0.5,
    duration: int = 200,
    sources_per_node: int = 8,
    neighbor_bias: float = 0.75,
    audit: bool = False,
    fences: Optional[list] = None,
    endpoints: str = "gc",
) -> Simulator:
    """Inject requests for ``duration`` cycles, answer each with a response, drain.

    ``pattern`` is "uniform" (any node, any GC) or "neighbor" (a torus
    neighbor with probability ``neighbor_bias``, else uniform).  ``load`` is
    the offered request rate as a fraction of :func:`saturation_rate`.
    ``fences`` is an optional list of (cycle, pattern, hops) fences issued by
    every source endpoint of that fence pattern, interleaved with the traffic.
    ``endpoints`` is "gc" (GC to GC only) or "all" (GCs and ICBs both send
    and receive requests).
    """
    if pattern not in ("uniform", "neighbor"):
        raise ValueError(f"unknown traffic pattern {pattern!r}")
    if endpoints not in ("gc", "all"):
        raise ValueError(f"unknown endpoint set {endpoints!r}")
    sim = Simulator(cfg)
    g = sim.geom
    rng = random.Random(f"{cfg.seed}:traffic")
    if audit:
        sim.audit = OrderingAudit(g)
    nodes = range(g.num_nodes)
    neigh = {n: sorted({g.neighbor(n, d) for d in g.active_dirs()} - {n}) for n in nodes}
    everyone = {n: list(nodes) for n in nodes}
    mh_uniform = mean_distance(sim, everyone)
    mh_neigh = mean_distance(sim, neigh) if any(neigh.values()) else 0.0
    mh = mh_uniform if pattern == "uniform" else neighbor_bias * mh_neigh + (1 - neighbor_bias) * mh_uniform
    rate = load * saturation_rate(sim, mh) if g.num_nodes > 1 else load
    def pick_ep(m: int) -> tuple:
        if endpoints == "all" and rng.random() < 0.5:
            return ("I", m, rng.randrange(cfg.slices), rng.randrange(g.V))
        return ("G", m, rng.randrange(g.U), rng.randrange(g.V), rng.randrange(2))

    gcs = {n: [pick_ep(n) for _ in range(sources_per_node)] for n in nodes}
    per_source = rate / sources_per_node

    def pick_dst(n: int) -> tuple:
        if pattern == "neighbor" and neigh[n] and rng.random() < neighbor_bias:
            m = rng.choice(neigh[n])
        else:
            m = rng.randrange(g.num_nodes)
        return pick_ep(m)

    # precompute injection times so the schedule does not depend on network timing
    for n in nodes:
        for src in gcs[n]:
            t = rng.expovariate(per_source) if per_source > 0 else duration
            while t < duration:
                dst = pick_dst(n)
                nfl = 1 + (rng.random() < 0.25)
                payload = [Quad(rng.getrandbits(32), rng.getrandbits(16), 0, i) for i in range(nfl)]
                sim.send(src, dst, PType.REQUEST_WRITE, payload, t=t, addr=rng.randrange(64) * 2)
                t += rng.expovariate(per_source)

    all_gcs = [gc for n in nodes for gc in gcs[n]]
    for t_f, fpat, hops in fences or ():
        sim.at(t_f, _issue_all, sim, fpat, hops, t_f)

    sim.route_violations = []

    def on_deliver(ep, pkt, t):
        problem = route_problem(sim, pkt)
        if problem:
            sim.route_violations.append((pkt.pid, problem))
        if not pkt.response:
            sim.send(ep, pkt.src, PType.RESPONSE, [Quad(pkt.pid & 0xFFFF, 0, 0, 0)], t=t, response=True,
                     addr=4096 + (pkt.pid % 64))

    sim.on_deliver = on_deliver
    sim.traffic_sources = all_gcs
    sim.run()
    return sim


def route_problem(sim: Simulator, pkt) -> Optional[str]:
    """Name a routing rule the delivered packet broke, or None."""
    r = pkt.route
    if r is None:
        return None
    g = sim.geom
    # responses see the torus as a mesh, so their minimal distance ignores wrap links
    need = (g.mesh_distance if pkt.response else g.distance)(pkt.src[1], pkt.dst[1])
    if len(r.links) != need:
        return f"non-minimal: {len(r.links)} links for distance {need}"
    if pkt.response and any(wrap for *_, wrap in r.links):
        return "response crossed a wrap link"
    return None


def _issue_all(sim: Simulator, pattern: str, hops: int, t: float) -> None:
    g = sim.geom
    src_t = pattern.split("_to_")[0]
    for n in range(g.num_nodes):
        for ep in (g.gcs(n) if src_t == "GC" else g.icbs(n)):
            sim.issue_fence(ep, pattern, hops, t)


def fence_trial(seed: int, dims=None, max_fences: int = 14, duration: int = 150, load: float = 0.5):
    """One randomized fence-ordering run on a small machine.

    Draws a torus, a fence schedule of up to ``max_fences`` fences (each
    hop-limited or global), and mixed GC/ICB request traffic.  Returns
    ``(sim, problems)`` where ``problems`` lists ordering violations,
    unretired fences and leftover counters.
    """
    rng = random.Random(f"fence-trial:{seed}")
    if dims is None:
        dims = rng.choice([(2, 1, 1), (2, 2, 1), (3, 1, 1), (2, 2, 2), (3, 2, 1), (4, 2, 1)])
    cfg = SimConfig(torus=dims, core_u=2, core_v=6, seed=seed, inz=rng.random() < 0.5, pcache=False)
    geom_diameter = sum(d // 2 for d in dims)
    # instance k is machine-wide, so one run draws fences from one source class
    pool = ["ICB_to_GC"] if rng.random() < 0.25 else ["GC_to_GC", "GC_to_ICB"]
    fences = []
    for _ in range(rng.randint(1, max_fences)):
        hops = geom_diameter if rng.random() < 0.4 else rng.randint(0, max(geom_diameter - 1, 0))
        fences.append((rng.uniform(0, duration), rng.choice(pool), hops))
    fences.sort()
    pattern = rng.choice(["uniform", "neighbor"])
    sim = run_request_response(cfg, pattern, load, duration, sources_per_node=6, audit=True,
                               fences=fences, endpoints="all")
    problems = list(sim.audit.check())
    issued = sum(1 for inst in sim.fences.instances)
    if issued != len(fences):
        problems.append(("instances", issued, len(fences)))
    problems += [("unretired", inst.index) for inst in sim.fences.instances if inst.retired_at is None]
    if not sim.fences.quiescent():
        problems.append(("counters", len(sim.fences.counters)))
    if sim.fence_stalled:
        problems.append(("stalled", len(sim.fence_stalled)))
    return sim, problems

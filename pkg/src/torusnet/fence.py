"""Network fences: table construction, counters, multicast and delivery.

A fence table is a DAG over *fence points*.  A point is a router input
port qualified by a hop budget; fences arriving at a point are counted
per (virtual channel, fence id) and a single fence is multicast to every
output in the point's mask once the count reaches the expected value.

Budgets: fences leave their source with the requested hop count and
lose one per channel crossing.  Keeping the budget in the counter key
means two fence streams only merge when they are the same distance from
their sources, which keeps the DAG acyclic on torus rings.  Row adapters
facing the core merge every budget (their downstream core points carry
the ``INB`` key), as do the destination endpoints.

Tables only depend on a node's local structure, so one table serves all
nodes; points are keyed by component ids with the node index dropped.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

from .topology import DIRS, INNER_COLUMNS, ORDERS, REQUEST_VCS, Geometry, opposite

log = logging.getLogger(__name__)

INB = -1  # budget key of core points fed by row adapters
ANY = -2  # budget key of points that merge every budget
MAX_FENCE_IDS = 14

PATTERNS = {
    "GC_to_GC": ("G", "G"),
    "GC_to_ICB": ("G", "I"),
    "ICB_to_GC": ("I", "G"),
}


class FenceProtocolError(RuntimeError):
    pass


def local(comp: tuple) -> tuple:
    """Drop the node index from a component id."""
    return (comp[0],) + comp[2:]


def merges_vcs(comp: tuple, in_port: str) -> bool:
    """Points that count fences from every request VC together."""
    k = comp[0]
    return k in ("L", "I") or (k == "R" and in_port == "edge")


def budget_key(comp: tuple, in_port: str, budget: int) -> int:
    k = comp[0]
    if k in ("G", "I") or (k == "R" and in_port == "edge"):
        return ANY
    return budget


@dataclass
class FenceTableEntry:
    expected: int
    outputs: tuple

    @property
    def counter_bits(self) -> int:
        return max(1, self.expected.bit_length())


@dataclass
class FenceTables:
    pattern: str
    hops: int
    entries: dict = field(default_factory=dict)  # (local comp, in_port, bkey) -> entry
    sources: list = field(default_factory=list)  # local endpoint ids

    def entry(self, comp: tuple, in_port: str, bkey: int) -> FenceTableEntry:
        try:
            return self.entries[(local(comp), in_port, bkey)]
        except KeyError:
            raise FenceProtocolError(f"no fence table entry for {comp} port {in_port} budget {bkey}") from None

    def edges(self):
        for (comp, in_port, b), e in self.entries.items():
            for out in e.outputs:
                yield (comp, in_port, b), out


def node_transitions(geom: Geometry, hops: int):
    """Per-node view of every minimal torus path of length <= ``hops``.

    Returns (first, mid, last): first-hop directions, (travel dir in,
    travel dir out, budget) turns at intermediate nodes, and (travel dir
    in, budget) arrivals at the destination node.
    """
    import itertools

    first, mid, last = set(), set(), set()
    for m in range(geom.num_nodes):
        offs = geom.offsets(0, m)
        k = sum(s for s, _, _ in offs)
        if k == 0 or k > hops:
            continue
        tie_opts = [(1, -1) if offs[d][2] else (1,) for d in range(3)]
        for order in ORDERS:
            for ties in itertools.product(*tie_opts):
                dirs = []
                for dim in order:
                    steps, sign, tie = offs[dim]
                    if tie:
                        sign = ties[dim]
                    dirs += [dim * 2 + (0 if sign > 0 else 1)] * steps
                first.add(dirs[0])
                for i in range(1, k):
                    mid.add((dirs[i - 1], dirs[i], hops - i))
                last.add((dirs[-1], hops - k))
    return first, mid, last


class _Builder:
    def __init__(self, geom: Geometry, hops: int):
        self.g = geom
        self.hops = hops
        self.out = defaultdict(set)  # point -> outputs
        self.starts: set = set()

    def point(self, comp, in_port, budget):
        return (local(comp), in_port, budget_key(comp, in_port, budget))

    def chain(self, comp, in_port, budget, hops):
        """Record a hop list that enters ``comp`` through ``in_port``."""
        g = self.g
        for hop_comp, port in hops:
            assert hop_comp == comp, (hop_comp, comp)
            self.out[self.point(comp, in_port, budget)].add(port)
            if comp[0] == "L":
                budget -= 1
            elif comp[0] == "R" and port == "core":
                budget = INB
            comp, in_port = g.downstream(comp, port)
        return comp, in_port, budget

    def core_flood(self, starts, budget):
        """Union of U-then-V paths from each start to every tile."""
        g = self.g
        U, V = g.U, g.V
        seen = set()
        stack = list(starts)
        while stack:
            comp, in_port = stack.pop()
            if (comp, in_port) in seen:
                continue
            seen.add((comp, in_port))
            _, n, u, v = comp
            outs = ["g0", "g1"]
            vert = []
            if v + 1 < V:
                vert.append("V+")
            if v > 0:
                vert.append("V-")
            if in_port == "V-":
                outs += ["V+"] if v + 1 < V else []
            elif in_port == "V+":
                outs += ["V-"] if v > 0 else []
            else:
                outs += vert
                if in_port != "U+" and u + 1 < U:
                    outs.append("U+")
                if in_port != "U-" and u > 0:
                    outs.append("U-")
            p = self.point(comp, in_port, budget)
            for port in outs:
                self.out[p].add(port)
                nxt = g.downstream(comp, port)
                if nxt[0][0] == "C":
                    stack.append(nxt)
                else:
                    self.out[self.point(nxt[0], nxt[1], budget)]  # endpoint point

    def inbound_core(self, side, row):
        """Row adapter at (side, row) delivering into the core, budget INB."""
        g = self.g
        ra = ("R", 0, side, row)
        comp, in_port = g.downstream(ra, "core")
        self.core_flood([(comp, in_port)], INB)


def build_fence_tables(geom: Geometry, pattern: str, hops: int) -> FenceTables:
    """Precompute the fence DAG for ``pattern`` with hop budget ``hops``."""
    if pattern not in PATTERNS:
        raise ValueError(f"unknown fence pattern {pattern!r}; known: {sorted(PATTERNS)}")
    if hops < 0:
        raise ValueError("hops must be >= 0")
    if hops > geom.diameter:
        log.warning("fence hops %d exceed diameter %d; clamping", hops, geom.diameter)
        hops = geom.diameter
    src_t, dst_t = PATTERNS[pattern]
    g = geom
    b = _Builder(g, hops)
    first, mid, last = node_transitions(g, hops)
    sides = range(g.cfg.slices)
    cols = INNER_COLUMNS
    tables = FenceTables(pattern, hops)

    # -- source node --------------------------------------------------------
    # (side, row) pairs where a source's fence enters its side's edge network
    edge_entries = set()
    if src_t == "G":
        for v in range(g.V):
            for u in range(g.U):
                for k in (0, 1):
                    comp, port = g.attach(("G", 0, u, v, k))
                    b.starts.add(b.point(comp, port, hops))
                    tables.sources.append(("G", u, v, k))
                    if first or dst_t == "I":
                        for s in sides:
                            path = g.core_path(0, u, v, ("edge", s)) + [(("R", 0, s, v), "edge")]
                            b.chain(comp, port, hops, path)
                            edge_entries.add((s, v, "ra"))
                    if dst_t == "G":
                        b.core_flood([(comp, port)], hops)
    else:
        for s in sides:
            for r in range(g.V):
                comp, port = g.attach(("I", 0, s, r))
                b.starts.add(b.point(comp, port, hops))
                tables.sources.append(("I", s, r))
                edge_entries.add((s, r, "icb"))

    for s, row, in_port in edge_entries:
        start = ("E", 0, s, 2, row)
        for d in first:
            for c in cols:
                path = g.edge_path(0, s, 2, row, 0, g.channel_row[d], "ch", c) + [(("L", 0, s, d), "out")]
                b.chain(start, in_port, hops, path)
        # 0-hop deliveries inside the source node
        if dst_t == "I":
            for r in range(g.V):
                for c in cols:
                    b.chain(start, in_port, hops, g.edge_path(0, s, 2, row, 2, r, "icb", c))
        elif in_port == "icb":
            for c in cols:
                end = b.chain(start, in_port, hops, g.edge_path(0, s, 2, row, 2, row, "ra", c))
                b.chain(end[0], end[1], end[2], [(("R", 0, s, row), "core")])
            b.inbound_core(s, row)

    # -- intermediate nodes ---------------------------------------------------
    for d_in, d_out, budget in mid:
        arr_row = g.channel_row[opposite(d_in)]
        through = d_in == d_out
        for s in sides:
            start = ("E", 0, s, 0, arr_row)
            for c in ((0,) if through else cols):
                path = g.edge_path(0, s, 0, arr_row, 0, g.channel_row[d_out], "ch", c) + [(("L", 0, s, d_out), "out")]
                b.chain(start, "ch", budget, path)

    # -- destination nodes ----------------------------------------------------
    for d_in, budget in last:
        arr_row = g.channel_row[opposite(d_in)]
        for s in sides:
            start = ("E", 0, s, 0, arr_row)
            if dst_t == "I":
                for r in range(g.V):
                    for c in cols:
                        b.chain(start, "ch", budget, g.edge_path(0, s, 0, arr_row, 2, r, "icb", c))
            else:
                for c in cols:
                    end = b.chain(start, "ch", budget, g.edge_path(0, s, 0, arr_row, 2, arr_row, "ra", c))
                    b.chain(end[0], end[1], end[2], [(("R", 0, s, arr_row), "core")])
                b.inbound_core(s, arr_row)

    # -- expected counts --------------------------------------------------------
    preds = defaultdict(set)
    for p, outs in b.out.items():
        for port in outs:
            q_comp, q_in = g.downstream(_with_node(p[0]), port)
            budget = p[2]
            if p[0][0] == "L":
                budget -= 1
            elif p[0][0] == "R" and port == "core":
                budget = INB
            q = (local(q_comp), q_in, budget_key(q_comp, q_in, budget))
            preds[q].add(p)
    for p in set(b.out) | set(preds):
        comp = _with_node(p[0])
        copies = 4 if merges_vcs(comp, p[1]) else 1
        expected = 0
        for pr in preds.get(p, ()):
            expected += copies if pr[0][0] == "E" else 1
        if p in b.starts:
            expected += 1
        tables.entries[p] = FenceTableEntry(expected, tuple(sorted(b.out.get(p, ()))))
    return tables


def _with_node(lcomp: tuple, n: int = 0) -> tuple:
    return (lcomp[0], n) + lcomp[1:]


def emission_copies(comp: tuple, out_port: str, budget: int) -> list[tuple[int, int]]:
    """(vc, budget) of every fence copy a fired point sends on ``out_port``."""
    k = comp[0]
    if k == "L":
        return [(vc, budget - 1) for vc in REQUEST_VCS]
    if k == "R":
        if out_port == "edge":
            return [(vc, budget) for vc in REQUEST_VCS]
        return [(0, INB)]
    return [(None, budget)]  # same VC as the arriving copy


# -- runtime ---------------------------------------------------------------


@dataclass
class FenceInstance:
    index: int
    fid: int
    pattern: str
    hops: int
    tables: FenceTables
    issue_times: dict = field(default_factory=dict)  # source endpoint -> time
    deliveries: dict = field(default_factory=dict)  # destination endpoint -> time
    expected_deliveries: int = 0
    retired_at: Optional[float] = None


class FenceManager:
    """Fence id window, counters and delivery bookkeeping for one machine."""

    def __init__(self, geom: Geometry, window: int = MAX_FENCE_IDS, nodes: Optional[int] = None):
        self.geom = geom
        self.nodes = geom.num_nodes if nodes is None else nodes
        self.window = window
        self._tables: dict = {}
        self.instances: list[FenceInstance] = []
        self.active: dict[int, FenceInstance] = {}  # fid -> instance
        self.free_ids = list(range(window))
        self.issued = defaultdict(int)  # source endpoint -> fences issued
        self.counters: dict = {}
        self.waiting: list = []  # (instance index, issue callback) stalled on the window
        self.trace: list = []

    def tables(self, pattern: str, hops: int) -> FenceTables:
        hops = min(hops, self.geom.diameter)
        key = (pattern, hops)
        t = self._tables.get(key)
        if t is None:
            t = self._tables[key] = build_fence_tables(self.geom, pattern, hops)
        return t

    def instance_for(self, src: tuple, pattern: str, hops: int) -> Optional[FenceInstance]:
        """Bind the next fence of ``src`` to a machine-wide instance.

        Returns None when the instance needs a fresh id and the window is
        full; the caller stalls and retries after a retirement.
        """
        hops = min(hops, self.geom.diameter)
        idx = self.issued[src]
        if idx < len(self.instances):
            inst = self.instances[idx]
            if (inst.pattern, inst.hops) != (pattern, hops):
                raise FenceProtocolError(
                    f"fence #{idx} from {src} is {pattern}/{hops} but the instance is {inst.pattern}/{inst.hops}"
                )
            if inst.fid < 0:
                return None
        else:
            if not self.free_ids:
                return None
            inst = FenceInstance(idx, self.free_ids.pop(0), pattern, hops, self.tables(pattern, hops))
            inst.expected_deliveries = self._count_destinations(pattern)
            self.instances.append(inst)
            self.active[inst.fid] = inst
        self.issued[src] += 1
        return inst

    def _count_destinations(self, pattern: str) -> int:
        g = self.geom
        dst_t = PATTERNS[pattern][1]
        per_node = 2 * g.U * g.V if dst_t == "G" else g.cfg.slices * g.V
        return per_node * self.nodes

    def arrive(self, comp: tuple, in_port: str, vc: int, budget: int, fid: int):
        """Count one fence copy; return the fired entry or None."""
        inst = self.active.get(fid)
        if inst is None:
            raise FenceProtocolError(f"fence id {fid} is not active")
        bkey = budget_key(comp, in_port, budget)
        entry = inst.tables.entry(comp, in_port, bkey)
        vkey = -1 if merges_vcs(comp, in_port) else vc
        key = (comp, in_port, vkey, bkey, fid)
        c = self.counters.get(key, 0) + 1
        if c > entry.expected:
            raise FenceProtocolError(f"fence counter {c} exceeds expected {entry.expected} at {key}")
        if c == entry.expected:
            self.counters.pop(key, None)
            return entry
        self.counters[key] = c
        return None

    def delivered(self, fid: int, dst: tuple, now: float) -> FenceInstance:
        inst = self.active[fid]
        if dst in inst.deliveries:
            raise FenceProtocolError(f"fence #{inst.index} delivered twice to {dst}")
        inst.deliveries[dst] = now
        self.trace.append(("deliver", now, inst.index, dst))
        if len(inst.deliveries) == inst.expected_deliveries:
            self._retire(inst, now)
        return inst

    def _retire(self, inst: FenceInstance, now: float) -> None:
        left = [k for k in self.counters if k[4] == inst.fid]
        if left:
            raise FenceProtocolError(f"fence #{inst.index} retired with {len(left)} nonzero counters")
        inst.retired_at = now
        del self.active[inst.fid]
        self.free_ids.append(inst.fid)
        self.free_ids.sort()
        inst.fid = -1 - inst.fid
        self.trace.append(("retire", now, inst.index))

    def quiescent(self) -> bool:
        return not self.counters

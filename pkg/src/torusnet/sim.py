"""Packet-level discrete-event model of the machine network.

Every router (core, row adapter, edge, channel) is a :class:`Router` with
per-(input port, VC) FIFO queues, per-output busy times and round-robin
arbitration.  Flow control is virtual cut-through: a packet is granted an
output only when the downstream queue has room for all of its flits.

Routes are computed once at injection (oblivious routing); the route's
hop list names each router, its output port and the VC at the next input.
Fences are not routed: routers hand them to the :class:`FenceManager` and
multicast the merged copy on the outputs of the fired table entry.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import random
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from .channel import ChannelAdapter
from .config import SimConfig
from .fence import FenceManager, emission_copies
from .packet import (
    MAX_FENCE_IDS,
    Endpoint,
    NodeCoord,
    PacketHeader,
    PType,
    Quad,
    TClass,
    TileCoord,
    WriteMode,
    encode_header,
)
from .pcache import ProtocolError
from .sync_memory import DeadlockError, SyncMemory
from .topology import CORE_REQ_VC, Geometry, RouteChoice

INF = float("inf")
UNBOUNDED_PORTS = ("g0", "g1", "icb")  # endpoint injection ports


class Packet:
    __slots__ = (
        "pid", "src", "dst", "ptype", "hops", "idx", "nflits", "payloads", "mode", "addr",
        "t_inject", "t_deliver", "route", "response", "fid", "budget", "vc", "tag", "header_word",
    )

    def __init__(self, pid, src, dst, ptype, nflits=1, payloads=(), mode=WriteMode.OVERWRITE, addr=0):
        self.pid = pid
        self.src = src
        self.dst = dst
        self.ptype = ptype
        self.nflits = nflits
        self.payloads = list(payloads)
        self.mode = mode
        self.addr = addr
        self.hops = None
        self.idx = 0
        self.t_inject = 0.0
        self.t_deliver = None
        self.route = None
        self.response = False
        self.fid = None
        self.budget = None
        self.vc = 0
        self.tag = None
        self.header_word = None

    @property
    def is_fence(self) -> bool:
        return self.ptype == PType.FENCE


class Router:
    __slots__ = ("sim", "id", "kind", "queues", "order", "busy", "rr", "wake_at", "emit", "lat", "is_link", "adapter", "fired")

    def __init__(self, sim: "Simulator", comp: tuple):
        self.sim = sim
        self.id = comp
        self.kind = comp[0]
        self.queues: dict = {}  # (in_port, vc) -> deque[[ready, pkt, upstream]]
        self.order: list = []  # sorted queue keys, for deterministic round robin
        self.busy: dict = {}  # out_port -> cycle the output frees up
        self.rr: dict = {}  # out_port -> index of last granted requester
        self.wake_at = None
        self.emit: dict = {}  # out_port -> deque of fence copies awaiting the output
        self.is_link = self.kind == "L"
        self.adapter: Optional[ChannelAdapter] = None
        self.fired = 0
        lb = sim.cfg.latency
        if self.kind == "C":
            self.lat = {"U+": lb.core_u_hop, "U-": lb.core_u_hop, "V+": lb.core_v_hop, "V-": lb.core_v_hop,
                        "g0": lb.core_eject, "g1": lb.core_eject}
        elif self.kind == "R":
            self.lat = {"edge": lb.row_adapter, "core": lb.row_adapter}
        elif self.kind == "E":
            self.lat = dict.fromkeys(("O", "I", "N", "S", "ch", "ra", "icb"), lb.edge_hop)
        else:
            self.lat = {"out": lb.ca_egress + lb.wire + lb.ca_ingress}

    def queue(self, key) -> deque:
        q = self.queues.get(key)
        if q is None:
            q = self.queues[key] = deque()
            self.order.append(key)
            self.order.sort()
        return q


@dataclass
class RunStats:
    """Counters and samples collected during a run."""

    injected: int = 0
    delivered: int = 0
    injected_by_type: Counter = field(default_factory=Counter)
    delivered_by_type: Counter = field(default_factory=Counter)
    latencies: list = field(default_factory=list)  # (src, dst, torus hops, cycles)
    fence_events: list = field(default_factory=list)
    activity: Counter = field(default_factory=Counter)  # (bucket, component kind) -> flits forwarded
    md_steps: list = field(default_factory=list)  # per-step byte deltas from MD traffic runs
    end_time: float = 0.0

    def conservation_ok(self) -> bool:
        return self.injected == self.delivered


class Simulator:
    """Event engine plus all network state for one run."""

    def __init__(self, cfg: SimConfig, keep_frames: bool = False, bucket_cycles: int = 1000, fold: bool = False):
        """``fold=True`` simulates node 0 only, with every channel looping back
        into node 0.  This is exact for translation-symmetric workloads (every
        node doing the same thing at the same time, e.g. a barrier issued by
        all GCs at once) and costs 1/N of the full run.
        """
        self.cfg = cfg
        self.fold = fold
        self.geom = Geometry(cfg)
        self.now = 0.0
        self._heap: list = []
        self._seq = itertools.count()
        self._pid = itertools.count()
        self.routers: dict = {}
        self.occ: Counter = Counter()  # (comp, in_port, vc) -> flits queued or reserved
        self.cap = cfg.queue_flits
        self.bw = cfg.link_bytes_per_cycle
        self.keep_frames = keep_frames
        self.bucket = bucket_cycles
        self.rng_route = random.Random(f"{cfg.seed}:route")
        self.memories: dict = {}
        self.fences = FenceManager(self.geom, nodes=1 if fold else None)
        self.stats = RunStats()
        self.in_flight = 0
        self.last_progress = 0.0
        self.trace = hashlib.sha256()
        self.trace_events = 0
        self.on_deliver: Optional[Callable] = None
        self.on_fence: Optional[Callable] = None
        self.audit: Optional["OrderingAudit"] = None
        self.fence_stalled: list = []
        self.barrier_addr = 8191
        self.check_transparency = True

    # -- event queue ------------------------------------------------------

    def at(self, t: float, fn, *args) -> None:
        heapq.heappush(self._heap, (t, next(self._seq), fn, args))

    def run(self, until: float = INF) -> float:
        heap = self._heap
        wd = self.cfg.watchdog_cycles
        while heap:
            t = heap[0][0]
            if t > until:
                break
            if self.in_flight and t - self.last_progress > wd:
                raise DeadlockError(f"no packet progress for {t - self.last_progress:.0f} cycles with {self.in_flight} in flight")
            _, _, fn, args = heapq.heappop(heap)
            self.now = t
            fn(*args)
        if not heap and self.in_flight:
            raise DeadlockError(f"event queue drained with {self.in_flight} packets blocked")
        for m in self.memories.values():
            if m.blocked and not heap:
                b = m.blocked[0]
                raise DeadlockError(f"blocking read at quad {b.addr} (threshold {b.threshold}) never released")
        self.stats.end_time = max(self.stats.end_time, self.now)
        return self.now

    def _log(self, *fields) -> None:
        self.trace.update(repr(fields).encode())
        self.trace_events += 1

    @property
    def trace_digest(self) -> str:
        return self.trace.hexdigest()

    # -- components -----------------------------------------------------------

    def router(self, comp: tuple) -> Router:
        r = self.routers.get(comp)
        if r is None:
            r = self.routers[comp] = Router(self, comp)
            if r.is_link:
                c = self.cfg
                r.adapter = ChannelAdapter(c.inz, c.pcache, c.pcache_threshold, c.frame_bytes, self.keep_frames)
        return r

    def memory(self, gc: tuple) -> SyncMemory:
        m = self.memories.get(gc)
        if m is None:
            m = self.memories[gc] = SyncMemory(max_blocked=self.cfg.max_blocked_reads)
        return m

    def adapters(self):
        for comp, r in sorted(self.routers.items()):
            if r.adapter is not None:
                yield comp, r.adapter

    # -- injection --------------------------------------------------------------

    def choose_route(self, src, dst, response=False, flow=None):
        g = self.geom
        if flow is not None:
            choice = g.random_choice(random.Random(f"{self.cfg.seed}:{flow}"), response)
        else:
            choice = g.random_choice(self.rng_route, response)
        return g.route(src, dst, choice, response)

    def send(self, src: tuple, dst: tuple, ptype: PType = PType.REQUEST_WRITE, payloads=None,
             t: Optional[float] = None, mode: WriteMode = WriteMode.OVERWRITE, addr: int = 0,
             response: bool = False, flow=None, tag=None, choice: Optional[RouteChoice] = None) -> Packet:
        """Inject a packet at endpoint ``src`` at time ``t`` (default: now)."""
        t = self.now if t is None else t
        if payloads is None:
            payloads = [Quad()]
        pkt = Packet(next(self._pid), src, dst, ptype, len(payloads), payloads, mode, addr)
        pkt.response = response
        pkt.tag = tag
        route = self.geom.route(src, dst, choice, response) if choice is not None else self.choose_route(src, dst, response, flow)
        pkt.route = route
        pkt.hops = route.hops
        pkt.t_inject = t
        self.stats.injected += 1
        self.stats.injected_by_type[ptype.name] += 1
        self.in_flight += 1
        if self.audit is not None:
            self.audit.on_send(pkt, t)
        comp, port = self.geom.attach(src)
        vc = 1 if (response and comp[0] == "C") else (route.hops[0][2] if comp[0] == "E" else 0)
        self.at(t + self.cfg.latency.gc_send, self._arrive, comp, port, vc, pkt, None)
        return pkt

    def header_of(self, pkt: Packet, flit: int = 0) -> int:
        g = self.geom
        dst = pkt.dst
        node = NodeCoord(*g.coord(dst[1]))
        if dst[0] == "G":
            tile = TileCoord(dst[2], dst[3], Endpoint.GC0 if dst[4] == 0 else Endpoint.GC1)
        else:
            tile = TileCoord(dst[2], dst[3], Endpoint.ICB)
        ptype = pkt.ptype
        h = PacketHeader(
            ptype=ptype,
            tclass=TClass.RESPONSE if pkt.response else TClass.REQUEST,
            vc=pkt.vc,
            dest_node=node,
            dest_tile=tile,
            hop_budget=max(pkt.budget, 0) if pkt.budget is not None else 0,
            fence_id=pkt.fid or 0,
            seq=pkt.pid & 0xFFFF,
            continuation=flit > 0,
            mode=pkt.mode,
        )
        return encode_header(h)

    # -- router mechanics -----------------------------------------------------

    def _wake(self, r: Router, t: float) -> None:
        if r.wake_at is None or t < r.wake_at:
            r.wake_at = t
            self.at(t, self._service, r, t)

    def _arrive(self, comp, in_port, vc, pkt: Packet, upstream) -> None:
        kind = comp[0]
        if kind == "G" or kind == "I":
            self._deliver(comp, pkt, upstream)
            return
        r = self.router(comp)
        r.queue((in_port, vc)).append([self.now, pkt, upstream])
        self._wake(r, self.now)

    def _space(self, comp, in_port, vc, n) -> bool:
        if comp[0] in ("G", "I") or in_port in UNBOUNDED_PORTS:
            return True
        return self.occ[(comp, in_port, vc)] + n <= self.cap

    def _service(self, r: Router, t: float) -> None:
        if r.wake_at != t:
            return  # superseded by an earlier wake
        r.wake_at = None
        now = self.now
        g = self.geom
        requests: dict = {}
        nxt = INF
        for key in r.order:
            q = r.queues[key]
            while q:
                ready, pkt, up = q[0]
                if ready > now:
                    nxt = min(nxt, ready)
                    break
                if pkt.ptype == PType.FENCE:
                    q.popleft()
                    self._release(r.id, key, pkt, up)
                    self._fence_arrival(r, key, pkt)
                    continue
                comp, port, vc2 = pkt.hops[pkt.idx]
                requests.setdefault(port, []).append(key)
                break
        for port, fq in r.emit.items():
            if fq:
                if fq[0][0] > now:
                    nxt = min(nxt, fq[0][0])
                else:
                    requests.setdefault(port, []).append(("~emit", port))
        for port in sorted(requests):
            busy = r.busy.get(port, 0.0)
            if busy > now:
                nxt = min(nxt, busy)
                continue
            keys = requests[port]
            down = g.downstream(r.id, port)
            if self.fold and r.is_link:
                down = ((down[0][0], 0) + down[0][2:], down[1])
            # round robin: start after the last granted requester
            last = r.rr.get(port)
            if last is not None and len(keys) > 1:
                keys = sorted(keys, key=lambda k: (k <= last, k))
            for key in keys:
                if key[0] == "~emit":
                    _, pkt, vc2 = r.emit[port][0]
                else:
                    pkt = r.queues[key][0][1]
                    vc2 = pkt.hops[pkt.idx][2]
                if not self._space(down[0], down[1], vc2, pkt.nflits):
                    continue
                if key[0] == "~emit":
                    r.emit[port].popleft()
                    up = None
                else:
                    _, pkt, up = r.queues[key].popleft()
                    pkt.idx += 1
                    self._release(r.id, key, pkt, up)
                r.rr[port] = key
                self._forward(r, port, down, vc2, pkt)
                nxt = min(nxt, r.busy[port])
                break
        if nxt < INF:
            self._wake(r, nxt)

    def _release(self, comp, key, pkt, up) -> None:
        """Free the input-queue slot ``pkt`` held and wake its upstream router."""
        if key[0] in UNBOUNDED_PORTS:
            return
        self.occ[(comp, key[0], key[1])] -= pkt.nflits
        if up is not None:
            self._wake(up, self.now)

    def _forward(self, r: Router, port, down, vc2, pkt: Packet) -> None:
        now = self.now
        self.last_progress = now
        dcomp, din = down
        if dcomp[0] not in ("G", "I") and din not in UNBOUNDED_PORTS:
            self.occ[(dcomp, din, vc2)] += pkt.nflits
        if r.is_link:
            pkt.vc = vc2
            recs = r.adapter.egress(self.header_of(pkt), pkt.ptype, pkt.payloads if pkt.ptype != PType.FENCE else [])
            nbytes = sum(x.wire_bytes for x in recs)
            ser = nbytes / self.bw
            r.busy[port] = now + ser
            t_arr = now + r.lat[port] + ser
            self.at(t_arr, self._link_arrive, r, recs, dcomp, din, vc2, pkt)
        else:
            r.busy[port] = now + pkt.nflits
            self.at(now + r.lat[port], self._arrive, dcomp, din, vc2, pkt, r)
        self.stats.activity[(int(now // self.bucket), r.kind)] += pkt.nflits

    def _link_arrive(self, link: Router, recs, comp, in_port, vc, pkt: Packet) -> None:
        quads = link.adapter.ingress(recs, pkt.ptype)
        if self.check_transparency and pkt.ptype != PType.FENCE:
            if [q.words for q in quads] != [q.words for q in pkt.payloads]:
                raise ProtocolError(f"link {link.id} altered packet {pkt.pid}")
        self._arrive(comp, in_port, vc, pkt, link)

    # -- fences -------------------------------------------------------------------

    def issue_fence(self, src: tuple, pattern: str, hops: int, t: Optional[float] = None) -> bool:
        """Inject the next fence of endpoint ``src``; stalls if the id window is full."""
        t = self.now if t is None else t
        inst = self.fences.instance_for(src, pattern, hops)
        if inst is None:
            self.fence_stalled.append((src, pattern, hops))
            return False
        inst.issue_times[src] = t
        if self.audit is not None:
            self.audit.on_fence_issue(src, inst, t)
        self._log("fence", t, src, inst.index)
        comp, port = self.geom.attach(src)
        vcs = [0] if comp[0] == "C" else [0, 1, 2, 3]
        for vc in vcs:
            f = Packet(next(self._pid), src, src, PType.FENCE)
            f.fid, f.budget, f.vc = inst.fid, inst.hops, vc
            self.in_flight += 1
            self.at(t + self.cfg.latency.gc_send, self._arrive, comp, port, vc, f, None)
        return True

    def _fence_arrival(self, r: Router, key, pkt: Packet) -> None:
        self.in_flight -= 1
        in_port, vc = key
        entry = self.fences.arrive(r.id, in_port, vc, pkt.budget, pkt.fid)
        if entry is None:
            return
        r.fired += 1
        ready = self.now + (self.cfg.latency.fence_merge if r.is_link else 0)
        for port in entry.outputs:
            for cvc, budget in emission_copies(r.id, port, pkt.budget):
                f = Packet(next(self._pid), pkt.src, pkt.dst, PType.FENCE)
                f.fid, f.budget = pkt.fid, budget
                f.vc = vc if cvc is None else cvc
                f.hops = ((r.id, port, f.vc),)
                self.in_flight += 1
                q = r.emit.get(port)
                if q is None:
                    q = r.emit[port] = deque()
                q.append((ready, f, f.vc))

    def _deliver(self, ep: tuple, pkt: Packet, upstream) -> None:
        now = self.now
        self.last_progress = now
        self.in_flight -= 1
        if pkt.ptype == PType.FENCE:
            entry = self.fences.arrive(ep, "in", pkt.vc, pkt.budget, pkt.fid)
            if entry is None:
                return
            inst = self.fences.delivered(pkt.fid, ep, now)
            self._log("fdeliver", now, ep, inst.index)
            if self.audit is not None:
                self.audit.on_fence_deliver(ep, inst, now)
            if ep[0] == "G":
                self.memory(ep).counted_write(self.barrier_addr, Quad(), WriteMode.ACCUMULATE, now)
            if inst.retired_at is not None:
                self._retry_stalled_fences()
            if self.on_fence is not None:
                self.on_fence(ep, inst, now)
            return
        pkt.t_deliver = now
        st = self.stats
        st.delivered += 1
        st.delivered_by_type[pkt.ptype.name] += 1
        st.latencies.append((pkt.src, pkt.dst, len(pkt.route.links), now - pkt.t_inject))
        self._log("deliver", now, pkt.pid, ep)
        if self.audit is not None:
            self.audit.on_deliver(pkt, now)
        if ep[0] == "G" and pkt.ptype in (PType.REQUEST_WRITE, PType.FORCE, PType.RESPONSE):
            for i, q in enumerate(pkt.payloads):
                self.memory(ep).counted_write(pkt.addr + i, q, pkt.mode, now)
        if self.on_deliver is not None:
            self.on_deliver(ep, pkt, now)

    def _retry_stalled_fences(self) -> None:
        stalled, self.fence_stalled = self.fence_stalled, []
        for src, pattern, hops in stalled:
            self.issue_fence(src, pattern, hops)

    # -- end of time step ---------------------------------------------------------

    def tick_caches(self) -> None:
        """Send the time-step marker over every channel and age both caches."""
        for _, a in self.adapters():
            a.tick()


class OrderingAudit:
    """Checks the fence guarantee from the send/deliver event log.

    For every fence instance and destination D, every request packet sent
    to D by an in-range source before that source issued the fence must be
    delivered at D before the fence is.
    """

    def __init__(self, geom: Geometry):
        self.geom = geom
        # (time, call order) decides "before": a send and a fence can share a cycle,
        # and sends may be scheduled ahead of their injection time
        self._order = itertools.count()
        self.sent: dict = {}  # pid -> (src, dst, (t, order))
        self.delivered: dict = {}  # pid -> order
        self.issues: dict = {}  # (instance index, src) -> order
        self.fence_deliveries: list = []  # (instance, dst, order)
        self.violations: list = []

    def on_send(self, pkt: Packet, t: float) -> None:
        if not pkt.response:
            self.sent[pkt.pid] = (pkt.src, pkt.dst, (t, next(self._order)))

    def on_deliver(self, pkt: Packet, t: float) -> None:
        self.delivered[pkt.pid] = (t, next(self._order))

    def on_fence_issue(self, src, inst, t) -> None:
        self.issues[(inst.index, src)] = (t, next(self._order))

    def on_fence_deliver(self, dst, inst, t) -> None:
        self.fence_deliveries.append((inst, dst, (t, next(self._order))))

    def check(self) -> list:
        from .fence import PATTERNS

        by_dst: dict = {}
        for pid, (src, dst, t) in self.sent.items():
            by_dst.setdefault(dst, []).append((pid, src, t))
        g = self.geom
        seen = set()
        for inst, dst, t_f in self.fence_deliveries:
            if (inst.index, dst) in seen:
                self.violations.append((inst.index, "duplicate", dst))
            seen.add((inst.index, dst))
            st, dt = PATTERNS[inst.pattern]
            for pid, src, t_s in by_dst.get(dst, ()):
                if src[0] != st:
                    continue
                t_issue = self.issues.get((inst.index, src))
                if t_issue is None or t_s > t_issue:
                    continue
                if g.distance(src[1], dst[1]) > inst.hops:
                    continue
                t_d = self.delivered.get(pid)
                if t_d is None or t_d > t_f:
                    self.violations.append((inst.index, pid, src, dst, t_d, t_f))
        return self.violations

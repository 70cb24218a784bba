"""Particle cache: synchronized send/receive caches that replace position
packets by INZ-encoded extrapolation residuals.

A full position payload is ``(x, y, z, static)``; the static word doubles as
the particle tag, and its low 8 bits select the set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .inz import EncodedPayload, Record, RecordKind, decode_quad, encode_quad
from .packet import Quad, to_signed32

SETS = 256
WAYS = 4
DIFF_BITS = 12
DIFF_MIN = -(1 << (DIFF_BITS - 1))
DIFF_MAX = (1 << (DIFF_BITS - 1)) - 1


class ProtocolError(RuntimeError):
    """Send and receive caches disagree; the run cannot continue."""


def _wrap(v: int) -> int:
    return to_signed32(v)


@dataclass
class ParticleCacheEntry:
    tag: int = 0
    static: int = 0
    d0: list[int] = field(default_factory=lambda: [0, 0, 0])
    d1: list[int] = field(default_factory=lambda: [0, 0, 0])
    d2: list[int] = field(default_factory=lambda: [0, 0, 0])
    last_hit_step: int = 0
    valid: bool = False

    def snapshot(self) -> tuple:
        return (self.valid, self.tag, self.static, tuple(self.d0), tuple(self.d1), tuple(self.d2), self.last_hit_step)


def extrapolate(entry: ParticleCacheEntry) -> tuple[int, int, int]:
    return tuple(_wrap(entry.d0[c] + entry.d1[c] + entry.d2[c]) for c in range(3))


def update_history(entry: ParticleCacheEntry, actual) -> ParticleCacheEntry:
    """Advance the finite-difference state in place (and return it).

    A coordinate whose new first or second difference does not fit in
    12 signed bits restarts as a constant predictor.
    """
    for c in range(3):
        x = _wrap(actual[c])
        d1 = _wrap(x - entry.d0[c])
        d2 = _wrap(x - entry.d0[c] - entry.d1[c])
        if not (DIFF_MIN <= d1 <= DIFF_MAX and DIFF_MIN <= d2 <= DIFF_MAX):
            d1 = d2 = 0
        entry.d0[c], entry.d1[c], entry.d2[c] = x, d1, d2
    return entry


@dataclass(frozen=True)
class PositionPacket:
    header: int
    x: int
    y: int
    z: int
    static: int

    @property
    def quad(self) -> Quad:
        return Quad(self.x, self.y, self.z, self.static)

    @classmethod
    def from_quad(cls, header: int, q: Quad) -> "PositionPacket":
        return cls(header, q.w0, q.w1, q.w2, q.w3)


class ParticleCache:
    def __init__(self, threshold: int = 2, sets: int = SETS, ways: int = WAYS):
        self.sets = sets
        self.ways = ways
        self.threshold = threshold
        self.step_counter = 0
        self.entries = [ParticleCacheEntry() for _ in range(sets * ways)]
        self.hits = self.misses = self.bypasses = self.evictions = 0

    def set_of(self, tag: int) -> int:
        return (tag & 0xFFFFFFFF) % self.sets

    def lookup(self, tag: int) -> Optional[int]:
        base = self.set_of(tag) * self.ways
        for i in range(base, base + self.ways):
            e = self.entries[i]
            if e.valid and e.tag == tag:
                return i
        return None

    def evictable(self, entry: ParticleCacheEntry) -> bool:
        return self.step_counter - entry.last_hit_step > self.threshold

    def choose_way(self, tag: int) -> Optional[int]:
        base = self.set_of(tag) * self.ways
        for i in range(base, base + self.ways):
            if not self.entries[i].valid:
                return i
        for i in range(base, base + self.ways):
            if self.evictable(self.entries[i]):
                return i
        return None

    def allocate(self, index: int, pkt: PositionPacket) -> None:
        e = self.entries[index]
        if e.valid:
            self.evictions += 1
        e.valid = True
        e.tag = pkt.static
        e.static = pkt.static
        e.d0 = [_wrap(pkt.x), _wrap(pkt.y), _wrap(pkt.z)]
        e.d1 = [0, 0, 0]
        e.d2 = [0, 0, 0]
        e.last_hit_step = self.step_counter

    def tick_timestep(self) -> None:
        self.step_counter += 1

    def state(self) -> tuple:
        return (self.step_counter, tuple(e.snapshot() for e in self.entries))


def send_side_process(cache: ParticleCache, pkt: PositionPacket) -> Record:
    idx = cache.lookup(pkt.static)
    if idx is not None:
        e = cache.entries[idx]
        pred = extrapolate(e)
        actual = (pkt.x, pkt.y, pkt.z)
        delta = Quad(*(actual[c] - pred[c] for c in range(3)), 0)
        update_history(e, actual)
        e.last_hit_step = cache.step_counter
        cache.hits += 1
        rec = Record(pkt.header, encode_quad(delta), RecordKind.COMPRESSED_POSITION, idx)
        full = Record(pkt.header, encode_quad(pkt.quad), RecordKind.POSITION_REFRESH)
        # never let a hit cost more wire bytes than the plain packet
        return rec if rec.wire_bytes <= full.wire_bytes else full
    cache.misses += 1
    way = cache.choose_way(pkt.static)
    if way is None:
        cache.bypasses += 1
        return Record(pkt.header, encode_quad(pkt.quad), RecordKind.POSITION_BYPASS)
    cache.allocate(way, pkt)
    return Record(pkt.header, encode_quad(pkt.quad), RecordKind.POSITION_ALLOCATE)


def receive_side_process(cache: ParticleCache, rec: Record) -> PositionPacket:
    if rec.kind == RecordKind.COMPRESSED_POSITION:
        if not 0 <= rec.index < len(cache.entries) or not cache.entries[rec.index].valid:
            raise ProtocolError(f"compressed record names invalid cache entry {rec.index}")
        e = cache.entries[rec.index]
        pred = extrapolate(e)
        delta = decode_quad(rec.payload).words
        actual = tuple(_wrap(pred[c] + delta[c]) for c in range(3))
        update_history(e, actual)
        e.last_hit_step = cache.step_counter
        return PositionPacket(rec.header, *actual, e.static)
    pkt = PositionPacket.from_quad(rec.header, decode_quad(rec.payload))
    if rec.kind == RecordKind.POSITION_REFRESH:
        idx = cache.lookup(pkt.static)
        if idx is None:
            raise ProtocolError(f"refresh record for uncached tag {pkt.static:#x}")
        e = cache.entries[idx]
        update_history(e, (pkt.x, pkt.y, pkt.z))
        e.last_hit_step = cache.step_counter
    elif rec.kind == RecordKind.POSITION_ALLOCATE:
        way = cache.choose_way(pkt.static)
        if way is None or cache.lookup(pkt.static) is not None:
            raise ProtocolError(f"receive side cannot mirror allocation of tag {pkt.static:#x}")
        cache.allocate(way, pkt)
    elif rec.kind != RecordKind.POSITION_BYPASS:
        raise ProtocolError(f"unexpected record kind {rec.kind!r} on the position path")
    return pkt


class CachePair:
    """Both ends of one channel direction, for codec-level replay and tests."""

    def __init__(self, threshold: int = 2):
        self.send = ParticleCache(threshold)
        self.recv = ParticleCache(threshold)

    def transfer(self, pkt: PositionPacket) -> tuple[Record, PositionPacket]:
        rec = send_side_process(self.send, pkt)
        return rec, receive_side_process(self.recv, rec)

    def tick(self) -> None:
        self.send.tick_timestep()
        self.recv.tick_timestep()

    def synchronized(self) -> bool:
        return self.send.state() == self.recv.state()


def full_record(pkt: PositionPacket, inz: bool = True) -> Record:
    payload = encode_quad(pkt.quad) if inz else EncodedPayload.raw(pkt.quad)
    return Record(pkt.header, payload, RecordKind.DATA)

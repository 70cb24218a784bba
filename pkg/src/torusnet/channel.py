"""Channel adapters: per-link-direction compression and framing state."""

from __future__ import annotations

from collections import Counter
from typing import Optional

from .inz import EncodedPayload, FramePacker, Record, RecordKind, decode_quad, encode_quad
from .packet import PType, Quad
from .pcache import ParticleCache, PositionPacket, ProtocolError, receive_side_process, send_side_process

FULL_RECORD_BYTES = 1 + 8 + 16
CONTROL_RECORD_BYTES = 1 + 8


class ChannelAdapter:
    """Send and receive ends of one channel direction.

    ``egress`` runs at the sending node in transmission order; ``ingress`` at
    the receiving node in arrival order.  The link is FIFO, so both caches
    see one access stream.
    """

    def __init__(self, inz: bool = True, pcache: bool = True, threshold: int = 2,
                 frame_bytes: int = 64, keep_frames: bool = False):
        self.inz = inz
        self.pcache = pcache
        self.send_cache: Optional[ParticleCache] = ParticleCache(threshold) if pcache else None
        self.recv_cache: Optional[ParticleCache] = ParticleCache(threshold) if pcache else None
        self.packer = FramePacker(frame_bytes)
        self.keep_frames = keep_frames
        self.frames: list[bytes] = []
        self.wire_bytes: Counter = Counter()
        self.raw_bytes: Counter = Counter()
        self.records = 0
        # totals on each end of the link, for the conservation check
        self.bytes_out = 0
        self.bytes_in = 0

    def _encode(self, q: Quad) -> EncodedPayload:
        return encode_quad(q) if self.inz else EncodedPayload.raw(q)

    def egress(self, header_word: int, ptype: PType, payloads: list) -> list[Record]:
        if ptype in (PType.FENCE, PType.CONTROL):
            recs = [Record(header_word, EncodedPayload(0, b""), RecordKind.CONTROL)]
            raw = CONTROL_RECORD_BYTES
        elif ptype == PType.POSITION and self.send_cache is not None:
            q = payloads[0]
            recs = [send_side_process(self.send_cache, PositionPacket.from_quad(header_word, q))]
            raw = FULL_RECORD_BYTES
        else:
            recs = [Record(header_word, self._encode(q)) for q in payloads]
            raw = FULL_RECORD_BYTES * len(payloads)
        name = ptype.name
        self.raw_bytes[name] += raw
        for r in recs:
            self.wire_bytes[name] += r.wire_bytes
            self.bytes_out += r.wire_bytes
            self.records += 1
            frames = self.packer.push(r)
            if self.keep_frames:
                self.frames += frames
        return recs

    def ingress(self, recs: list[Record], ptype: PType) -> list[Quad]:
        self.bytes_in += sum(r.wire_bytes for r in recs)
        if ptype in (PType.FENCE, PType.CONTROL):
            return []
        if ptype == PType.POSITION and self.recv_cache is not None:
            pkt = receive_side_process(self.recv_cache, recs[0])
            return [pkt.quad]
        return [decode_quad(r.payload) for r in recs]

    def tick(self) -> None:
        """Time-step marker: crosses the link like any control record."""
        self.raw_bytes["CONTROL"] += CONTROL_RECORD_BYTES
        self.wire_bytes["CONTROL"] += CONTROL_RECORD_BYTES
        if self.send_cache is not None:
            self.send_cache.tick_timestep()
            self.recv_cache.tick_timestep()

    def check_synchronized(self) -> None:
        if self.send_cache is not None and self.send_cache.state() != self.recv_cache.state():
            raise ProtocolError("send- and receive-side particle caches diverged")

    def flush_frames(self) -> None:
        frames = self.packer.flush()
        if self.keep_frames:
            self.frames += frames

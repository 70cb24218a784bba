"""Interleaved non-zero (INZ) payload encoding and byte-granular channel framing.

Encoded vector layout: the 2-bit index of the most significant non-zero word
sits in bits 0-1, and bit ``i`` of (inverted) word ``j`` lands on bit
``i * (k + 1) + j + 2`` where ``k`` is that index.  The vector is sent
little-endian with its most-significant zero bytes stripped.  A 16-byte
result always means "raw payload".
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from enum import IntEnum
from typing import BinaryIO, Iterable, Iterator, Sequence, Union

import numpy as np

from .packet import MASK32, Quad, to_signed32

RAW_BYTES = 16
DEFAULT_FRAME_BYTES = 64
FRAME_MAGIC = b"INZF"
FRAME_VERSION = 1


class CodecError(ValueError):
    pass


class TruncatedStreamError(CodecError):
    def __init__(self, offset: int, needed: int):
        super().__init__(f"truncated record at stream byte offset {offset} ({needed} more bytes expected)")
        self.offset = offset


def invert_word(w: int) -> int:
    w &= MASK32
    sign = w >> 31
    rest = w & 0x7FFFFFFF
    if sign:
        rest ^= 0x7FFFFFFF
    return (rest << 1) | sign


def uninvert_word(v: int) -> int:
    v &= MASK32
    sign = v & 1
    rest = v >> 1
    if sign:
        rest ^= 0x7FFFFFFF
    return to_signed32(rest | (sign << 31))


def _spread_table(stride: int) -> list[int]:
    table = []
    for byte in range(256):
        out = 0
        for i in range(8):
            if byte >> i & 1:
                out |= 1 << (i * stride)
        table.append(out)
    return table


_SPREAD = {s: _spread_table(s) for s in (1, 2, 3, 4)}


def _spread(word: int, stride: int) -> int:
    table = _SPREAD[stride]
    out = 0
    for m in range(4):
        out |= table[(word >> (8 * m)) & 0xFF] << (8 * m * stride)
    return out


_GATHER = {s: {v: b for b, v in enumerate(_SPREAD[s])} for s in (1, 2, 3, 4)}
_LANE = {s: _SPREAD[s][0xFF] for s in (1, 2, 3, 4)}


def _compact(vec: int, stride: int) -> int:
    if stride == 1:
        return vec & MASK32
    table, lane, width = _GATHER[stride], _LANE[stride], 8 * stride
    out = 0
    for m in range(4):
        out |= table[(vec >> (width * m)) & lane] << (8 * m)
    return out


@dataclass(frozen=True)
class EncodedPayload:
    nbytes: int
    data: bytes

    def __post_init__(self) -> None:
        if not 0 <= self.nbytes <= RAW_BYTES:
            raise CodecError(f"nbytes={self.nbytes} outside [0, 16]")
        if len(self.data) != self.nbytes:
            raise CodecError(f"payload length {len(self.data)} != nbytes {self.nbytes}")

    @property
    def abandoned(self) -> bool:
        return self.nbytes == RAW_BYTES

    @classmethod
    def raw(cls, q: Quad) -> "EncodedPayload":
        return cls(RAW_BYTES, q.to_bytes())


def encode_quad(q: Quad) -> EncodedPayload:
    words = q.words
    k = -1
    for j in range(3, -1, -1):
        if words[j]:
            k = j
            break
    if k < 0:
        return EncodedPayload(0, b"")
    stride = k + 1
    vec = 0
    for j in range(stride):
        vec |= _spread(invert_word(words[j]), stride) << j
    vec = (vec << 2) | k
    nbytes = (vec.bit_length() + 7) // 8
    if nbytes >= RAW_BYTES:
        # >128 bits abandons; exactly 16 bytes gains nothing over raw
        return EncodedPayload.raw(q)
    return EncodedPayload(nbytes, vec.to_bytes(nbytes, "little"))


def decode_quad(e: EncodedPayload) -> Quad:
    if e.nbytes > RAW_BYTES or len(e.data) != e.nbytes:
        raise CodecError(f"malformed encoded payload of {e.nbytes} bytes")
    if e.nbytes == 0:
        return Quad()
    if e.nbytes == RAW_BYTES:
        return Quad.from_bytes(e.data)
    vec = int.from_bytes(e.data, "little")
    k = vec & 3
    body = vec >> 2
    stride = k + 1
    words = [0, 0, 0, 0]
    for j in range(stride):
        words[j] = uninvert_word(_compact(body >> j, stride))
    return Quad(*words)


# -- vectorized batch path ----------------------------------------------------


def _invert_np(w: np.ndarray) -> np.ndarray:
    w = w.astype(np.uint64) & np.uint64(MASK32)
    sign = w >> np.uint64(31)
    rest = (w & np.uint64(0x7FFFFFFF)) ^ (sign * np.uint64(0x7FFFFFFF))
    return (rest << np.uint64(1)) | sign


def _uninvert_np(v: np.ndarray) -> np.ndarray:
    sign = v & np.uint64(1)
    rest = (v >> np.uint64(1)) ^ (sign * np.uint64(0x7FFFFFFF))
    return (rest | (sign << np.uint64(31))).astype(np.uint32).view(np.int32)


def _bytelen(x: np.ndarray) -> np.ndarray:
    n = np.zeros(x.shape, dtype=np.int64)
    for b in range(8):
        n += (x >> np.uint64(8 * b)) != 0
    return n


def encode_batch(quads: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Encode an (N, 4) int32 array.

    Returns ``(nbytes, blocks)`` where ``blocks`` is an (N, 16) uint8 array
    holding each encoded payload left-aligned (trailing bytes zero).
    """
    quads = np.asarray(quads, dtype=np.int64).astype(np.int32)
    n = len(quads)
    nonzero = quads != 0
    k = np.where(nonzero.any(axis=1), 3 - np.argmax(nonzero[:, ::-1], axis=1), -1)
    lo = np.zeros(n, dtype=np.uint64)
    hi = np.zeros(n, dtype=np.uint64)
    top = np.zeros(n, dtype=np.uint64)
    inv = _invert_np(quads.view(np.uint32).astype(np.uint64))
    for kk in range(4):
        rows = np.nonzero(k == kk)[0]
        if rows.size == 0:
            continue
        stride = kk + 1
        l = np.full(rows.size, kk, dtype=np.uint64)
        h = np.zeros(rows.size, dtype=np.uint64)
        t = np.zeros(rows.size, dtype=np.uint64)
        for j in range(stride):
            col = inv[rows, j]
            for i in range(32):
                bit = (col >> np.uint64(i)) & np.uint64(1)
                p = i * stride + j + 2
                if p < 64:
                    l |= bit << np.uint64(p)
                elif p < 128:
                    h |= bit << np.uint64(p - 64)
                else:
                    t |= bit << np.uint64(p - 128)
        lo[rows], hi[rows], top[rows] = l, h, t
    nbytes = np.where(hi != 0, 8 + _bytelen(hi), _bytelen(lo))
    nbytes = np.where(k < 0, 0, nbytes)
    raw = (top != 0) | (nbytes >= RAW_BYTES)
    nbytes = np.where(raw, RAW_BYTES, nbytes)
    blocks = np.zeros((n, 16), dtype=np.uint8)
    blocks[:, :8] = lo.astype("<u8").view(np.uint8).reshape(n, 8)
    blocks[:, 8:] = hi.astype("<u8").view(np.uint8).reshape(n, 8)
    blocks[raw] = quads[raw].astype("<i4").view(np.uint8).reshape(-1, 16)
    keep = np.arange(16)[None, :] < nbytes[:, None]
    blocks[~keep] = 0
    return nbytes, blocks


def decode_batch(nbytes: np.ndarray, blocks: np.ndarray) -> np.ndarray:
    nbytes = np.asarray(nbytes)
    blocks = np.ascontiguousarray(blocks, dtype=np.uint8)
    n = len(nbytes)
    if np.any((nbytes < 0) | (nbytes > RAW_BYTES)):
        raise CodecError("malformed encoded payload length")
    out = np.zeros((n, 4), dtype=np.int32)
    raw = nbytes == RAW_BYTES
    out[raw] = blocks[raw].view("<i4").reshape(-1, 4)
    lo = blocks[:, :8].copy().view("<u8").reshape(n).astype(np.uint64)
    hi = blocks[:, 8:].copy().view("<u8").reshape(n).astype(np.uint64)
    k = (lo & np.uint64(3)).astype(np.int64)
    active = (nbytes > 0) & ~raw
    for kk in range(4):
        rows = np.nonzero(active & (k == kk))[0]
        if rows.size == 0:
            continue
        stride = kk + 1
        l, h = lo[rows], hi[rows]
        for j in range(stride):
            acc = np.zeros(rows.size, dtype=np.uint64)
            for i in range(32):
                p = i * stride + j + 2
                src = l if p < 64 else h
                q = p if p < 64 else p - 64
                acc |= ((src >> np.uint64(q)) & np.uint64(1)) << np.uint64(i)
            out[rows, j] = _uninvert_np(acc)
    return out


# -- records and frames -------------------------------------------------------


class RecordKind(IntEnum):
    DATA = 0
    COMPRESSED_POSITION = 1
    POSITION_ALLOCATE = 2
    POSITION_BYPASS = 3
    CONTROL = 4
    POSITION_REFRESH = 5
    PAD = 7


@dataclass(frozen=True)
class Record:
    header: int
    payload: EncodedPayload
    kind: RecordKind = RecordKind.DATA
    index: int = 0

    @property
    def wire_bytes(self) -> int:
        extra = 2 if self.kind == RecordKind.COMPRESSED_POSITION else 0
        return 1 + 8 + extra + self.payload.nbytes

    def to_bytes(self) -> bytes:
        out = bytearray([(int(self.kind) << 5) | self.payload.nbytes])
        out += self.header.to_bytes(8, "little")
        if self.kind == RecordKind.COMPRESSED_POSITION:
            out += self.index.to_bytes(2, "little")
        out += self.payload.data
        return bytes(out)


RecordLike = Union[Record, tuple]


def _as_record(r: RecordLike) -> Record:
    if isinstance(r, Record):
        return r
    header, payload = r
    return Record(int(header), payload)


class FramePacker:
    """Send-side framing state machine for one link direction."""

    def __init__(self, frame_bytes: int = DEFAULT_FRAME_BYTES):
        if frame_bytes < 2:
            raise ValueError("frame length must be at least 2 bytes")
        self.frame_bytes = frame_bytes
        self._buf = bytearray()
        self.frames_out = 0
        self.bytes_in = 0

    @property
    def pending(self) -> int:
        return len(self._buf)

    def push(self, record: RecordLike) -> list[bytes]:
        raw = _as_record(record).to_bytes()
        self.bytes_in += len(raw)
        self._buf += raw
        return self._drain()

    def _drain(self) -> list[bytes]:
        out = []
        while len(self._buf) >= self.frame_bytes:
            out.append(bytes(self._buf[: self.frame_bytes]))
            del self._buf[: self.frame_bytes]
        self.frames_out += len(out)
        return out

    def flush(self) -> list[bytes]:
        if not self._buf:
            return []
        pad = self.frame_bytes - len(self._buf)
        self._buf += bytes([int(RecordKind.PAD) << 5]) + bytes(pad - 1)
        return self._drain()


class FrameUnpacker:
    def __init__(self, frame_bytes: int = DEFAULT_FRAME_BYTES):
        self.frame_bytes = frame_bytes
        self._buf = bytearray()
        self._base = 0  # stream offset of _buf[0]

    def feed(self, frame: bytes) -> list[Record]:
        if len(frame) != self.frame_bytes:
            raise CodecError(f"frame of {len(frame)} bytes, expected {self.frame_bytes}")
        self._buf += frame
        return self._parse()

    def _parse(self) -> list[Record]:
        out = []
        pos = 0
        buf = self._buf
        while pos < len(buf):
            desc = buf[pos]
            kind = desc >> 5
            if kind == RecordKind.PAD:
                frame_end = ((self._base + pos) // self.frame_bytes + 1) * self.frame_bytes - self._base
                pos = frame_end
                continue
            try:
                kind = RecordKind(kind)
            except ValueError:
                raise CodecError(f"unknown record kind {kind} at offset {self._base + pos}") from None
            nbytes = desc & 0x1F
            if nbytes > RAW_BYTES:
                raise CodecError(f"record length {nbytes} > 16 at offset {self._base + pos}")
            size = 1 + 8 + (2 if kind == RecordKind.COMPRESSED_POSITION else 0) + nbytes
            if pos + size > len(buf):
                break
            header = int.from_bytes(buf[pos + 1 : pos + 9], "little")
            index = 0
            body = pos + 9
            if kind == RecordKind.COMPRESSED_POSITION:
                index = int.from_bytes(buf[body : body + 2], "little")
                body += 2
            out.append(Record(header, EncodedPayload(nbytes, bytes(buf[body : body + nbytes])), kind, index))
            pos += size
        consumed = min(pos, len(buf))
        del self._buf[:consumed]
        self._base += consumed
        return out

    def finish(self) -> None:
        """Mark the stream complete; a dangling partial record is an error."""
        if self._buf:
            desc = self._buf[0]
            size = 9 + (desc & 0x1F) + (2 if desc >> 5 == RecordKind.COMPRESSED_POSITION else 0)
            raise TruncatedStreamError(self._base, size - len(self._buf))


def pack_records(records: Iterable[RecordLike], frame_bytes: int = DEFAULT_FRAME_BYTES, flush: bool = True) -> list[bytes]:
    packer = FramePacker(frame_bytes)
    frames: list[bytes] = []
    for r in records:
        frames += packer.push(r)
    if flush:
        frames += packer.flush()
    return frames


def unpack_records(frames: Iterable[bytes], frame_bytes: int = DEFAULT_FRAME_BYTES, complete: bool = True) -> list[Record]:
    unpacker = FrameUnpacker(frame_bytes)
    out: list[Record] = []
    for f in frames:
        out += unpacker.feed(f)
    if complete:
        unpacker.finish()
    return out


def write_frame_dump(fh: BinaryIO, frames: Sequence[bytes], frame_bytes: int = DEFAULT_FRAME_BYTES) -> None:
    fh.write(FRAME_MAGIC + bytes([FRAME_VERSION]) + frame_bytes.to_bytes(2, "little"))
    for f in frames:
        if len(f) != frame_bytes:
            raise CodecError("all frames in a dump must share one length")
        fh.write(f)


def read_frame_dump(fh: BinaryIO) -> tuple[int, list[bytes]]:
    head = fh.read(7)
    if len(head) != 7 or head[:4] != FRAME_MAGIC:
        raise CodecError("not an INZF frame dump")
    if head[4] != FRAME_VERSION:
        raise CodecError(f"unsupported frame dump version {head[4]}")
    frame_bytes = int.from_bytes(head[5:7], "little")
    body = fh.read()
    if len(body) % frame_bytes:
        raise CodecError("frame dump ends mid-frame")
    return frame_bytes, [body[i : i + frame_bytes] for i in range(0, len(body), frame_bytes)]


def iter_frames(data: bytes) -> Iterator[bytes]:
    _, frames = read_frame_dump(io.BytesIO(data))
    yield from frames

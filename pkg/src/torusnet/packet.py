"""Wire-level packet vocabulary: coordinates, headers, flits and quads.

Header bit layout (LSB first), 64 bits total::

    bits  0-2   ptype            3
    bit   3     tclass           1
    bits  4-6   vc               3
    bits  7-11  dest x           5
    bits 12-16  dest y           5
    bits 17-21  dest z           5
    bits 22-26  dest u           5
    bits 27-30  dest v           4
    bits 31-33  dest endpoint    3
    bits 34-38  hop_budget       5
    bits 39-42  fence_id         4
    bits 43-58  seq             16
    bit  59     continuation     1   (second flit of a two-flit packet)
    bit  60     write mode       1   (0 = overwrite, 1 = accumulate)
    bits 61-63  reserved, must be zero

For ICB endpoints the ``u`` field carries the chip side (0 left, 1 right) and
``v`` the edge row.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Optional

HEADER_BITS = 64
PAYLOAD_BITS = 128
FLIT_BITS = HEADER_BITS + PAYLOAD_BITS
MAX_FENCE_IDS = 14

MASK32 = 0xFFFFFFFF


class PType(IntEnum):
    REQUEST_WRITE = 0
    RESPONSE = 1
    FENCE = 2
    POSITION = 3
    COMPRESSED_POSITION = 4
    FORCE = 5
    CONTROL = 6


class TClass(IntEnum):
    REQUEST = 0
    RESPONSE = 1


class Endpoint(IntEnum):
    GC0 = 0
    GC1 = 1
    BC = 2
    ICB = 3
    ROW_ADAPTER = 4


class WriteMode(IntEnum):
    OVERWRITE = 0
    ACCUMULATE = 1


class HeaderError(ValueError):
    """Raised when a header field is out of range or a word fails to decode."""


# (name, offset, width)
_LAYOUT = (
    ("ptype", 0, 3),
    ("tclass", 3, 1),
    ("vc", 4, 3),
    ("x", 7, 5),
    ("y", 12, 5),
    ("z", 17, 5),
    ("u", 22, 5),
    ("v", 27, 4),
    ("endpoint", 31, 3),
    ("hop_budget", 34, 5),
    ("fence_id", 39, 4),
    ("seq", 43, 16),
    ("continuation", 59, 1),
    ("mode", 60, 1),
)
_RESERVED_MASK = ((1 << 64) - 1) ^ ((1 << 61) - 1)


@dataclass(frozen=True, order=True)
class NodeCoord:
    x: int = 0
    y: int = 0
    z: int = 0

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.x, self.y, self.z)


@dataclass(frozen=True, order=True)
class TileCoord:
    u: int = 0
    v: int = 0
    endpoint: Endpoint = Endpoint.GC0


@dataclass(frozen=True)
class PacketHeader:
    ptype: PType = PType.REQUEST_WRITE
    tclass: TClass = TClass.REQUEST
    dest_node: NodeCoord = field(default_factory=NodeCoord)
    dest_tile: TileCoord = field(default_factory=TileCoord)
    vc: int = 0
    hop_budget: int = 0
    fence_id: int = 0
    seq: int = 0
    continuation: bool = False
    mode: WriteMode = WriteMode.OVERWRITE

    def __post_init__(self) -> None:
        if self.ptype == PType.FENCE and self.tclass != TClass.REQUEST:
            raise HeaderError("fence packets must use the request class")


def _fields(h: PacketHeader) -> dict[str, int]:
    return {
        "ptype": int(h.ptype),
        "tclass": int(h.tclass),
        "vc": h.vc,
        "x": h.dest_node.x,
        "y": h.dest_node.y,
        "z": h.dest_node.z,
        "u": h.dest_tile.u,
        "v": h.dest_tile.v,
        "endpoint": int(h.dest_tile.endpoint),
        "hop_budget": h.hop_budget,
        "fence_id": h.fence_id,
        "seq": h.seq,
        "continuation": int(h.continuation),
        "mode": int(h.mode),
    }


def encode_header(
    h: PacketHeader,
    torus: Optional[tuple[int, int, int]] = None,
    grid: Optional[tuple[int, int]] = None,
) -> int:
    """Pack ``h`` into a 64-bit integer.

    ``torus`` and ``grid`` optionally tighten the coordinate checks to the
    configured machine extents (otherwise only the field widths apply).
    """
    values = _fields(h)
    if torus is not None:
        for name, extent in zip("xyz", torus):
            if not 0 <= values[name] < extent:
                raise HeaderError(f"dest_node.{name}={values[name]} outside torus extent {extent}")
    if grid is not None and h.dest_tile.endpoint != Endpoint.ICB:
        for name, extent in zip("uv", grid):
            if not 0 <= values[name] < extent:
                raise HeaderError(f"dest_tile.{name}={values[name]} outside grid extent {extent}")
    if values["fence_id"] >= MAX_FENCE_IDS:
        raise HeaderError(f"fence_id={values['fence_id']} must be < {MAX_FENCE_IDS}")
    word = 0
    for name, offset, width in _LAYOUT:
        value = values[name]
        if not 0 <= value < (1 << width):
            raise HeaderError(f"{name}={value} does not fit in {width} bits")
        word |= value << offset
    return word


def decode_header(word: int) -> PacketHeader:
    if not 0 <= word < (1 << 64):
        raise HeaderError("header word must be an unsigned 64-bit value")
    if word & _RESERVED_MASK:
        raise HeaderError("reserved header bits are set")
    v = {name: (word >> offset) & ((1 << width) - 1) for name, offset, width in _LAYOUT}
    try:
        ptype = PType(v["ptype"])
        endpoint = Endpoint(v["endpoint"])
    except ValueError as exc:
        raise HeaderError(str(exc)) from None
    if v["fence_id"] >= MAX_FENCE_IDS:
        raise HeaderError(f"fence_id={v['fence_id']} must be < {MAX_FENCE_IDS}")
    return PacketHeader(
        ptype=ptype,
        tclass=TClass(v["tclass"]),
        dest_node=NodeCoord(v["x"], v["y"], v["z"]),
        dest_tile=TileCoord(v["u"], v["v"], endpoint),
        vc=v["vc"],
        hop_budget=v["hop_budget"],
        fence_id=v["fence_id"],
        seq=v["seq"],
        continuation=bool(v["continuation"]),
        mode=WriteMode(v["mode"]),
    )


def to_signed32(w: int) -> int:
    w = int(w) & MASK32
    return w - (1 << 32) if w & 0x80000000 else w


@dataclass(frozen=True)
class Quad:
    """Four signed 32-bit words; values are normalized to the signed range."""

    w0: int = 0
    w1: int = 0
    w2: int = 0
    w3: int = 0

    def __post_init__(self) -> None:
        for name in ("w0", "w1", "w2", "w3"):
            w = getattr(self, name)
            if type(w) is not int or not -0x80000000 <= w <= 0x7FFFFFFF:
                object.__setattr__(self, name, to_signed32(w))

    @classmethod
    def of(cls, words) -> "Quad":
        return cls(*words)

    @property
    def words(self) -> tuple[int, int, int, int]:
        return (self.w0, self.w1, self.w2, self.w3)

    def to_bytes(self) -> bytes:
        return b"".join((w & MASK32).to_bytes(4, "little") for w in self.words)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Quad":
        if len(raw) != 16:
            raise ValueError(f"quad needs 16 bytes, got {len(raw)}")
        return cls(*(int.from_bytes(raw[i : i + 4], "little") for i in range(0, 16, 4)))

    def __add__(self, other: "Quad") -> "Quad":
        return Quad(*(a + b for a, b in zip(self.words, other.words)))


ZERO_QUAD = Quad()


@dataclass(frozen=True)
class Flit:
    header: PacketHeader
    payload: Quad = ZERO_QUAD

    def to_bytes(self) -> bytes:
        return encode_header(self.header).to_bytes(8, "little") + self.payload.to_bytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Flit":
        if len(raw) != FLIT_BITS // 8:
            raise ValueError(f"flit needs {FLIT_BITS // 8} bytes, got {len(raw)}")
        return cls(decode_header(int.from_bytes(raw[:8], "little")), Quad.from_bytes(raw[8:]))


def packet_flits(header: PacketHeader, payloads: list[Quad]) -> list[Flit]:
    """Split a packet into one or two flits sharing one logical header."""
    if not 1 <= len(payloads) <= 2:
        raise ValueError("a packet comprises one or two flits")
    flits = [Flit(header, payloads[0])]
    if len(payloads) == 2:
        flits.append(Flit(replace(header, continuation=True), payloads[1]))
    return flits


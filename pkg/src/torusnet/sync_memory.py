"""Per-GC SRAM with an 8-bit arrival counter on every quad."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .packet import Quad, WriteMode

SRAM_BYTES = 128 * 1024
QUAD_BYTES = 16


class MemoryFault(IndexError):
    pass


class DeadlockError(RuntimeError):
    pass


@dataclass
class QuadCell:
    data: Quad = field(default_factory=Quad)
    counter: int = 0


@dataclass
class BlockedReader:
    reader: Any
    addr: int
    threshold: int
    issue_time: float
    on_release: Optional[Callable[[Quad, float], None]] = None


class SyncMemory:
    """Quad-addressed SRAM. Addresses are quad indices, not byte offsets."""

    def __init__(self, n_quads: int = SRAM_BYTES // QUAD_BYTES, max_blocked: int = 1):
        self.n_quads = n_quads
        self.max_blocked = max_blocked
        self.cells: dict[int, QuadCell] = {}
        self.blocked: list[BlockedReader] = []
        self.log: list[tuple] = []

    def _check(self, addr: int) -> None:
        if not 0 <= addr < self.n_quads:
            raise MemoryFault(f"quad address {addr} outside [0, {self.n_quads})")

    def cell(self, addr: int) -> QuadCell:
        self._check(addr)
        c = self.cells.get(addr)
        if c is None:
            c = self.cells[addr] = QuadCell()
        return c

    def counted_write(self, addr: int, q: Quad, mode: WriteMode = WriteMode.OVERWRITE, now: float = 0.0) -> list[BlockedReader]:
        """Apply a counted write; returns the readers it released."""
        c = self.cell(addr)
        c.data = c.data + q if mode == WriteMode.ACCUMULATE else q
        c.counter = (c.counter + 1) & 0xFF
        self.log.append(("write", now, addr, c.counter))
        released = [b for b in self.blocked if b.addr == addr and c.counter >= b.threshold]
        for b in released:
            self.blocked.remove(b)
            self.log.append(("release", now, addr, b.threshold))
            if b.on_release is not None:
                b.on_release(c.data, now)
        return released

    def blocking_read(
        self,
        addr: int,
        threshold: int,
        reader: Any = None,
        now: float = 0.0,
        on_release: Optional[Callable[[Quad, float], None]] = None,
    ) -> Optional[Quad]:
        """Return the quad if its counter has reached ``threshold``, else stall.

        A stalled reader is released (``on_release(data, time)``) by the
        counted write that brings the counter up to the threshold.
        """
        if not 0 <= threshold <= 0xFF:
            raise ValueError(f"threshold {threshold} outside [0, 255]")
        c = self.cell(addr)
        if c.counter >= threshold:
            return c.data
        if len(self.blocked) >= self.max_blocked:
            raise RuntimeError(f"more than {self.max_blocked} outstanding blocking reads")
        self.blocked.append(BlockedReader(reader, addr, threshold, now, on_release))
        self.log.append(("block", now, addr, threshold))
        return None

    def reset_region(self, start: int, stop: int) -> None:
        self._check(start)
        if stop > self.n_quads or stop < start:
            raise MemoryFault(f"bad region [{start}, {stop})")
        for b in self.blocked:
            if start <= b.addr < stop:
                raise RuntimeError(f"reset would orphan a blocked read at quad {b.addr}")
        for a in [a for a in self.cells if start <= a < stop]:
            del self.cells[a]

    def check_watchdog(self, now: float, timeout: float) -> None:
        for b in self.blocked:
            if now - b.issue_time > timeout:
                raise DeadlockError(
                    f"blocking read at quad {b.addr} (threshold {b.threshold}) stalled since t={b.issue_time}"
                )

    def dump(self) -> dict[int, tuple]:
        return {a: (c.data.words, c.counter) for a, c in sorted(self.cells.items())}

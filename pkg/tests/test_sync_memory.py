import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from torusnet.packet import Quad, WriteMode
from torusnet.sync_memory import DeadlockError, MemoryFault, SyncMemory

ACC = WriteMode.ACCUMULATE


def test_counted_write_overwrite():
    m = SyncMemory()
    m.counted_write(5, Quad(1, 2, 3, 4))
    c = m.cell(5)
    assert c.counter == 1 and c.data == Quad(1, 2, 3, 4)
    m.counted_write(5, Quad(9))
    assert c.counter == 2 and c.data == Quad(9)


def test_accumulate_example():
    m = SyncMemory()
    for q in (Quad(1, 2, 3, 0), Quad(10, 0, 0, 0), Quad(0, 0, 0, 4)):
        m.counted_write(0, q, ACC)
    assert m.cell(0).data == Quad(11, 2, 3, 4) and m.cell(0).counter == 3


def test_counter_wraps_and_reset_restores():
    m = SyncMemory()
    for _ in range(256):
        m.counted_write(3, Quad(1))
    assert m.cell(3).counter == 0
    m.reset_region(0, 8)
    assert m.blocking_read(3, 0) == Quad()


def test_address_fault():
    m = SyncMemory(n_quads=16)
    with pytest.raises(MemoryFault):
        m.counted_write(16, Quad())
    with pytest.raises(MemoryFault):
        m.blocking_read(-1, 0)


def test_blocking_read_release_examples():
    m = SyncMemory()
    assert m.blocking_read(1, 0) == Quad()
    got = []
    assert m.blocking_read(1, 1, now=0.0, on_release=lambda q, t: got.append((q, t))) is None
    m.counted_write(1, Quad(7), now=12.5)
    assert got == [(Quad(7), 12.5)]


def test_integrator_pattern():
    m = SyncMemory()
    got = []
    m.blocking_read(2, 5, on_release=lambda q, t: got.append(q))
    for i in range(5):
        assert not got
        m.counted_write(2, Quad(i, -i, 1, 0), ACC, now=i)
    assert got == [Quad(10, -10, 5, 0)]


def test_outstanding_limit_and_reset_guard():
    m = SyncMemory(max_blocked=1)
    m.blocking_read(4, 2)
    with pytest.raises(RuntimeError):
        m.blocking_read(5, 1)
    with pytest.raises(RuntimeError, match="orphan"):
        m.reset_region(0, 10)


def test_watchdog_names_address_and_threshold():
    m = SyncMemory()
    m.blocking_read(9, 3, now=0.0)
    m.check_watchdog(50.0, 100.0)
    with pytest.raises(DeadlockError, match="quad 9.*threshold 3"):
        m.check_watchdog(200.0, 100.0)


@given(st.integers(1, 40), st.integers(0, 2**31))
def test_release_exactly_at_threshold(threshold, seed):
    # event-log oracle: the release must follow the write whose count reaches the threshold
    rng = random.Random(seed)
    m = SyncMemory()
    m.blocking_read(0, threshold, now=0.0)
    for t in range(1, threshold + 5):
        m.counted_write(0, Quad(rng.randrange(100)), ACC, now=t)
    log = m.log
    rel = [i for i, e in enumerate(log) if e[0] == "release"]
    assert len(rel) == 1
    prev = log[rel[0] - 1]
    assert prev[0] == "write" and prev[3] == threshold


@given(st.lists(st.tuples(*[st.integers(-(2**31), 2**31 - 1)] * 4), min_size=1, max_size=20), st.randoms())
def test_accumulate_order_independent(qs, rnd):
    a, b = SyncMemory(), SyncMemory()
    for q in qs:
        a.counted_write(0, Quad(*q), ACC)
    shuffled = list(qs)
    rnd.shuffle(shuffled)
    for q in shuffled:
        b.counted_write(0, Quad(*q), ACC)
    assert a.dump() == b.dump()

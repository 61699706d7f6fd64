import pytest
from hypothesis import given, strategies as st

from asyncfl.sim.engine import CausalityError, EventKind, EventQueue


@given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=200))
def test_pops_in_time_then_insertion_order(times):
    q = EventQueue()
    for t in times:
        q.schedule(t, EventKind.CHECK_IN)
    out = [q.pop() for _ in times]
    assert [(e.timestamp, e.seq) for e in out] == sorted((e.timestamp, e.seq) for e in out)
    assert q.processed == len(times) and q.now == max(times)


def test_ties_break_by_scheduling_order():
    q = EventQueue()
    a = q.schedule(1.0, EventKind.TRAIN_DONE, "a")
    b = q.schedule(1.0, EventKind.CHECK_IN, "b")
    assert q.pop() is a and q.pop() is b


def test_cannot_schedule_in_the_past():
    q = EventQueue()
    q.schedule(2.0, EventKind.HEARTBEAT)
    q.pop()
    with pytest.raises(CausalityError):
        q.schedule(1.0, EventKind.HEARTBEAT)
    assert q.peek_time() is None

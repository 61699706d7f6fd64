import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asyncfl.orchestrator.buffer import AggregationBuffer, DuplicateUpdate
from asyncfl.secagg.fixed_point import GroupConfig


def test_finalizes_exactly_at_goal():
    buf = AggregationBuffer(goal=3, length=2)
    assert not buf.submit(np.array([1.0, 0.0]), 1.0).ready
    assert not buf.submit(np.array([0.0, 1.0]), 2.0).ready
    sub = buf.submit(np.array([1.0, 1.0]), 1.0)
    assert sub.ready and sub.finalized.count == 3
    np.testing.assert_allclose(sub.finalized.weighted_sum, [2.0, 3.0])
    assert sub.finalized.total_weight == 4.0
    assert buf.generation == 1 and buf.count == 0 and buf.finalized_count == 1


def test_duplicate_keys_rejected_across_generations():
    buf = AggregationBuffer(goal=1, length=1)
    buf.submit(np.ones(1), 1.0, key=(1, 1))
    with pytest.raises(DuplicateUpdate):
        buf.submit(np.ones(1), 1.0, key=(1, 1))
    assert buf.finalized_count == 1


def test_rejects_bad_shape_and_weight():
    buf = AggregationBuffer(goal=2, length=3)
    with pytest.raises(ValueError):
        buf.submit(np.ones(2), 1.0)
    with pytest.raises(ValueError):
        buf.submit(np.ones(3), 0.0)


def test_group_mode_wraps():
    g = GroupConfig(vector_length=2, modulus_bits=8)
    buf = AggregationBuffer(goal=2, length=2, group=g)
    buf.submit(np.array([200, 1], dtype=np.uint64), 1.0)
    sub = buf.submit(np.array([100, 2], dtype=np.uint64), 3.0)
    np.testing.assert_array_equal(sub.finalized.weighted_sum, [44, 3])
    assert sub.finalized.total_weight == 4.0


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.lists(st.floats(0.1, 10), min_size=1, max_size=40))
def test_sharding_does_not_change_the_sum(goal, shards, weights):
    rng = np.random.default_rng(len(weights))
    vecs = rng.normal(size=(len(weights), 3))
    a = AggregationBuffer(goal, 3, shards=1)
    b = AggregationBuffer(goal, 3, shards=shards)
    out_a, out_b = [], []
    for i, (v, w) in enumerate(zip(vecs, weights)):
        for buf, out in ((a, out_a), (b, out_b)):
            sub = buf.submit(v, w, worker=i)
            if sub.ready:
                out.append(sub.finalized)
    assert len(out_a) == len(out_b) == len(weights) // goal
    for x, y in zip(out_a, out_b):
        np.testing.assert_allclose(x.weighted_sum, y.weighted_sum, rtol=1e-12, atol=1e-12)
        assert x.count == y.count == goal


def test_concurrent_submitters_finalize_each_generation_once():
    goal, threads, per_thread = 7, 8, 250
    buf = AggregationBuffer(goal, 4, shards=4)
    finals = []
    lock = threading.Lock()
    barrier = threading.Barrier(threads)

    def worker(t):
        barrier.wait()
        for i in range(per_thread):
            sub = buf.submit(np.full(4, 1.0), 1.0, worker=t, key=(t, i))
            if sub.ready:
                with lock:
                    finals.append(sub.finalized)

    pool = [threading.Thread(target=worker, args=(t,)) for t in range(threads)]
    for th in pool:
        th.start()
    for th in pool:
        th.join()
    total = threads * per_thread
    assert len(finals) == total // goal == buf.finalized_count
    assert sorted(f.generation for f in finals) == list(range(total // goal))
    for f in finals:
        assert f.count == goal and f.total_weight == goal
        np.testing.assert_array_equal(f.weighted_sum, np.full(4, float(goal)))
    seen = [k for f in finals for k in f.keys]
    assert len(seen) == len(set(seen))
    assert buf.count == total % goal

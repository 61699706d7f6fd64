import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asyncfl.model import (
    ClientUpdate,
    ModelError,
    ServerModel,
    ServerOptimizerState,
    SyntheticTask,
    compute_staleness,
    fedadam_step,
    finalize_aggregate,
    local_train,
    staleness_weight,
    update_weight,
)


def test_staleness_weight_examples():
    assert staleness_weight(0) == 1.0
    assert staleness_weight(3) == 0.5
    assert staleness_weight(8) == pytest.approx(1 / 3, rel=1e-15)
    with pytest.raises(ModelError):
        staleness_weight(-1)


@given(st.integers(min_value=0, max_value=10**6))
def test_staleness_weight_matches_formula(s):
    assert staleness_weight(s) == pytest.approx((1 + s) ** -0.5, rel=4.5e-16, abs=0)  # within 2 ulp


@given(st.integers(0, 10**5), st.integers(0, 10**5))
def test_staleness_weight_monotone(a, b):
    if a <= b:
        assert staleness_weight(a) >= staleness_weight(b)


def test_compute_staleness():
    assert compute_staleness(3, 7) == 4
    assert compute_staleness(5, 5) == 0
    with pytest.raises(ModelError):
        compute_staleness(7, 3)
    with pytest.raises(ModelError):
        compute_staleness(-1, 3)


@given(st.integers(1, 10**6), st.integers(0, 10**4))
def test_update_weight_is_product(n, s):
    assert update_weight(n, s) == n * staleness_weight(s)


def test_update_weight_rejects_empty_clients():
    with pytest.raises(ModelError):
        update_weight(0, 1)


def test_finalize_aggregate_is_weighted_mean():
    deltas = np.array([[1.0, 2.0], [3.0, -2.0]])
    weights = np.array([1.0, 3.0])
    got = finalize_aggregate(weights @ deltas, weights.sum())
    np.testing.assert_allclose(got, np.average(deltas, axis=0, weights=weights))
    with pytest.raises(ModelError):
        finalize_aggregate(np.zeros(2), 0.0)


def _adam_oracle(params, grads, lr, b1, b2, eps):
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g**2
        params = params - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    return params


def test_fedadam_matches_adam_on_negated_delta(rng):
    size = 7
    deltas = [rng.normal(size=size) for _ in range(5)]
    state = ServerOptimizerState.fresh(size, learning_rate=0.1)
    model = ServerModel.initial(size)
    for d in deltas:
        state, model = fedadam_step(state, model, d)
    expected = _adam_oracle(np.zeros(size), [-d for d in deltas], 0.1, 0.9, 0.999, 1e-8)
    np.testing.assert_allclose(model.params, expected, rtol=1e-12)
    assert model.version == 5 and state.step_count == 5


def test_fedadam_first_step_moves_along_delta():
    state = ServerOptimizerState.fresh(3, learning_rate=0.01)
    _, model = fedadam_step(state, ServerModel.initial(3), np.array([1.0, -2.0, 0.0]))
    # bias-corrected first step has magnitude ~lr per nonzero coordinate
    np.testing.assert_allclose(model.params, [0.01, -0.01, 0.0], atol=1e-9)


def test_fedadam_rejects_shape_mismatch():
    state = ServerOptimizerState.fresh(3)
    with pytest.raises(ModelError):
        fedadam_step(state, ServerModel.initial(3), np.zeros(4))


def test_fedadam_does_not_mutate_inputs(rng):
    state = ServerOptimizerState.fresh(4)
    model = ServerModel.initial(4)
    before = model.params.copy()
    fedadam_step(state, model, rng.normal(size=4))
    np.testing.assert_array_equal(model.params, before)
    assert state.step_count == 0 and not state.first_moment.any()


def test_client_update_validation():
    with pytest.raises(ModelError):
        ClientUpdate(0, 0, np.zeros(2), 0)
    with pytest.raises(ModelError):
        ClientUpdate(0, -1, np.zeros(2), 1)


def test_local_train_deterministic_and_descends(small_task):
    data = small_task.client_dataset(11, 200, 0.0)
    start = np.zeros(small_task.size)
    a = local_train(start, small_task, data, 0.05, 16, client_id=11, initial_version=2, seed=1)
    b = local_train(start, small_task, data, 0.05, 16, client_id=11, initial_version=2, seed=1)
    np.testing.assert_array_equal(a.delta, b.delta)
    assert small_task.loss(start + a.delta, data) < small_task.loss(start, data)
    c = local_train(start, small_task, data, 0.05, 16, client_id=11, initial_version=3, seed=1)
    assert not np.array_equal(a.delta, c.delta)


def test_local_train_full_batch_is_one_gradient_step(small_task):
    data = small_task.client_dataset(5, 40, 0.3)
    w = np.ones(small_task.size)
    upd = local_train(w, small_task, data, 0.1, batch_size=40)
    grad = data.x.T @ (data.x @ w - data.y) / len(data)
    np.testing.assert_allclose(upd.delta, -0.1 * grad, rtol=1e-12)


def test_local_train_rejects_bad_inputs(small_task):
    data = small_task.client_dataset(5, 10, 0.0)
    with pytest.raises(ModelError):
        local_train(np.zeros(small_task.size + 1), small_task, data, 0.1)
    with pytest.raises(ModelError):
        local_train(np.zeros(small_task.size), small_task, data, 0.0)


def test_client_datasets_depend_on_volume(small_task):
    heavy = small_task.client_params(2.0, np.random.default_rng(0))
    light = small_task.client_params(-2.0, np.random.default_rng(0))
    gap = heavy - light
    np.testing.assert_allclose(gap, 4.0 * small_task.shift_scale * small_task.shift_direction)


def test_bank_and_fresh_features_agree_in_distribution():
    banked = SyntheticTask(input_dim=8, bank_size=256)
    fresh = SyntheticTask(input_dim=8, bank_size=0)
    a = banked.client_dataset(1, 4000, 0.0)
    b = fresh.client_dataset(1, 4000, 0.0)
    assert a.rows is not None and b.rows is None
    np.testing.assert_array_equal(a.x, banked.features[a.rows])
    assert abs(a.x.std() - 1.0) < 0.1 and abs(b.x.std() - 1.0) < 0.05


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 500), st.integers(0, 50)), min_size=1, max_size=12))
def test_weighted_mean_lies_in_convex_hull(items):
    rng = np.random.default_rng(len(items))
    deltas = rng.normal(size=(len(items), 3))
    w = np.array([update_weight(n, s) for n, s in items])
    agg = finalize_aggregate(w @ deltas, w.sum())
    assert np.all(agg <= deltas.max(axis=0) + 1e-12)
    assert np.all(agg >= deltas.min(axis=0) - 1e-12)


def test_logistic_task_loss_is_finite():
    task = SyntheticTask(kind="logistic-classification", input_dim=5)
    data = task.client_dataset(0, 50, 0.0)
    assert set(np.unique(data.y)) <= {0.0, 1.0}
    assert math.isfinite(task.loss(np.full(5, 1e3), data))

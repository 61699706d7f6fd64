import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from asyncfl import metrics
from asyncfl.orchestrator.eventlog import EventLog


def _log():
    log = EventLog()
    log.emit(0.0, "session/1", "selected", "t", 0)
    log.emit(0.0, "session/1", "downloading", "t", 0)
    log.emit(1.0, "session/2", "downloading", "t", 0)
    log.emit(2.0, "task/t", "eval", "t", 0, loss=5.0)
    log.emit(3.0, "session/1", "done", "t", 0)
    log.emit(3.0, "task/t", "model_updated", "t", 1, count=1)
    log.emit(3.0, "task/t", "eval", "t", 1, loss=2.0)
    log.emit(4.0, "session/2", "aborted", "t", 1)
    log.emit(5.0, "session/3", "downloading", "t", 1)
    log.emit(6.0, "task/t", "model_updated", "t", 2, count=1)
    return log


def test_utilization_series_and_average():
    s = metrics.utilization_series(_log(), "t")["t"]
    assert s.t.tolist() == [0.0, 1.0, 3.0, 4.0, 5.0]
    assert s.value.tolist() == [1, 2, 1, 0, 1]
    # 1*1 + 2*2 + 1*1 + 0*1 + 1*1 over [0, 6]
    assert metrics.time_average(s, 0.0, 6.0) == pytest.approx(7 / 6)
    assert metrics.window_minimum(s, 3.0, 6.0) == 0.0
    np.testing.assert_array_equal(metrics.round_troughs(s, np.array([0.0, 3.0, 6.0])), [1.0, 0.0])


def test_time_to_target_and_rates():
    log = _log()
    assert metrics.time_to_target_loss(log, 2.5) == 3.0
    assert metrics.time_to_target_loss(log, 1.0) is metrics.NOT_REACHED
    assert metrics.update_rate(log, "t", 0.0, 6.0) == pytest.approx(2 * 3600 / 6)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=1, max_size=60), st.lists(st.integers(0, 30), min_size=1, max_size=60))
def test_ks_distance_matches_scipy(a, b):
    assert metrics.ks_distance(a, b) == pytest.approx(stats.ks_2samp(a, b).statistic, abs=1e-12)


def test_ks_p_value_is_asymptotic_kolmogorov():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=400), rng.normal(0.2, size=500)
    res = metrics.ks_two_sample(a, b)
    assert res.d_statistic == pytest.approx(stats.ks_2samp(a, b).statistic)
    lam = res.d_statistic * np.sqrt(400 * 500 / 900)
    k = np.arange(1, 200)
    series = 2 * np.sum((-1.0) ** (k - 1) * np.exp(-2 * k**2 * lam**2))
    assert res.p_value == pytest.approx(series, rel=1e-9)
    assert metrics.ks_two_sample([1, 2], [1, 2]).p_value == 1.0
    with pytest.raises(ValueError):
        metrics.ks_two_sample([], [1])


def test_participant_cutoff():
    log = EventLog()
    log.emit(1.0, "task/t", "update_accepted", "t", 0, session=1, client=1, n=10, staleness=0, selected_at=0.5)
    log.emit(9.0, "task/t", "update_accepted", "t", 0, session=2, client=2, n=99, staleness=0, selected_at=8.0)
    assert metrics.participant_examples(log, "t").tolist() == [10, 99]
    assert metrics.participant_examples(log, "t", selected_before=5.0).tolist() == [10]


def test_percentile_eval_buckets(small_population, small_task):
    out = metrics.percentile_eval(np.zeros(small_task.size), small_task, small_population, clients_per_bucket=50,
                                  limit=32)
    assert set(out) == {"all", "p75", "p99"}
    assert all(v > 0 for v in out.values())


def test_series_csvs(tmp_path):
    paths = metrics.write_series_csvs(_log(), tmp_path, ["t"])
    names = sorted(p.name for p in paths)
    assert names == ["eval_t.csv", "updates_per_hour_t.csv", "utilization_t.csv"]
    assert (tmp_path / "eval_t.csv").read_text().splitlines()[0] == "t_seconds,version,loss"

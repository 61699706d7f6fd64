"""Quantities computed from a run's event log.

Everything except :func:`percentile_eval` is a pure function of the log, so a
persisted log replays to the same numbers.
"""

from __future__ import annotations

import csv
import math
import pathlib
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import stats

from .model import SyntheticTask, label_seed
from .orchestrator.eventlog import EventLog
from .orchestrator.session import SessionState

SUMMARY_SCHEMA = "asyncfl.summary/1"
NOT_REACHED = None

_WORKING = {s.value for s in SessionState if s.working}
_STATES = {s.value for s in SessionState}


class Series(NamedTuple):
    """Right-continuous step function: ``value[i]`` holds on ``[t[i], t[i+1])``."""

    t: np.ndarray
    value: np.ndarray

    def __len__(self) -> int:
        return self.t.shape[0]


def utilization_series(log: EventLog, task: str | None = None) -> dict[str, Series]:
    """Number of sessions downloading, training, reporting or uploading, per task."""
    state: dict[str, str] = {}
    points: dict[str, list] = {}
    level: dict[str, int] = {}
    for r in log:
        if r.transition not in _STATES or not r.entity.startswith("session/"):
            continue
        if task is not None and r.task != task:
            continue
        prev = state.get(r.entity)
        state[r.entity] = r.transition
        delta = (r.transition in _WORKING) - (prev in _WORKING)
        if not delta:
            continue
        lvl = level.get(r.task, 0) + delta
        level[r.task] = lvl
        pts = points.setdefault(r.task, [])
        if pts and pts[-1][0] == r.t:
            pts[-1] = (r.t, lvl)
        else:
            pts.append((r.t, lvl))
    out = {}
    for name, pts in points.items():
        arr = np.array(pts, dtype=np.float64)
        out[name] = Series(arr[:, 0], arr[:, 1])
    return out


def time_average(series: Series, start: float, end: float) -> float:
    if end <= start or len(series) == 0:
        return float("nan")
    t = np.clip(np.append(series.t, end), start, end)
    widths = np.diff(t)
    # value before the first point is zero
    return float(np.sum(widths * series.value) / (end - start))


def window_minimum(series: Series, start: float, end: float) -> float:
    """Smallest value the step function takes on ``[start, end)``."""
    if len(series) == 0:
        return 0.0
    i = np.searchsorted(series.t, start, side="right") - 1
    j = np.searchsorted(series.t, end, side="left")
    vals = series.value[max(i, 0):j]
    if i < 0:
        vals = np.append(vals, 0.0)
    return float(vals.min()) if vals.size else float("nan")


def model_update_times(log: EventLog, task: str | None = None) -> np.ndarray:
    return np.array([r.t for r in log.select("model_updated", task=task)], dtype=np.float64)


def round_troughs(series: Series, update_times: np.ndarray) -> np.ndarray:
    """Minimum utilization within each interval between consecutive model updates."""
    edges = np.asarray(update_times, dtype=np.float64)
    return np.array([window_minimum(series, a, b) for a, b in zip(edges[:-1], edges[1:])])


def server_updates_per_hour(log: EventLog, window: float = 3600.0, task: str | None = None,
                            end: float | None = None) -> Series:
    """Model updates per virtual hour, counted in consecutive windows."""
    times = model_update_times(log, task)
    if end is None:
        end = log.records[-1].t if len(log) else 0.0
    if times.size == 0 or end <= 0:
        return Series(np.zeros(0), np.zeros(0))
    bins = np.arange(0.0, end + window, window)
    counts, _ = np.histogram(times, bins)
    return Series(bins[:-1], counts * (3600.0 / window))


def update_rate(log: EventLog, task: str | None = None, start: float = 0.0, end: float | None = None) -> float:
    """Average model updates per virtual hour over ``[start, end]``."""
    if end is None:
        end = log.records[-1].t if len(log) else 0.0
    if end <= start:
        return 0.0
    times = model_update_times(log, task)
    n = np.count_nonzero((times > start) & (times <= end))
    return float(n * 3600.0 / (end - start))


def communication_trips(log: EventLog, task: str | None = None, until: float | None = None) -> int:
    """Uploads that reached the server, used or not."""
    return sum(1 for r in log.select("upload_received", task=task) if until is None or r.t <= until)


def eval_stream(log: EventLog, task: str | None = None) -> list[tuple[float, int, float]]:
    return [(r.t, r.version, r.get("loss")) for r in log.select("eval", task=task)]


def time_to_target_loss(log: EventLog, target: float, task: str | None = None):
    """First virtual time the held-out loss is at or below ``target``; ``NOT_REACHED`` otherwise."""
    for t, _v, loss in eval_stream(log, task):
        if loss <= target:
            return t
    return NOT_REACHED


@dataclass(frozen=True)
class KSResult:
    d_statistic: float
    p_value: float
    sample_sizes: tuple[int, int]


def ks_distance(a, b) -> float:
    """Largest gap between the two empirical CDFs, evaluated on the merged support."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    support = np.concatenate([a, b])
    fa = np.searchsorted(a, support, side="right") / a.size
    fb = np.searchsorted(b, support, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_two_sample(sample_a, sample_b) -> KSResult:
    """Two-sample Kolmogorov-Smirnov test with the asymptotic p-value."""
    a = np.asarray(sample_a, dtype=np.float64).ravel()
    b = np.asarray(sample_b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    d = ks_distance(a, b)
    en = math.sqrt(a.size * b.size / (a.size + b.size))
    p = float(stats.kstwobign.sf(d * en)) if d > 0 else 1.0
    return KSResult(d, min(max(p, 0.0), 1.0), (int(a.size), int(b.size)))


def participant_examples(log: EventLog, task: str | None = None, selected_before: float | None = None) -> np.ndarray:
    """Example counts of clients whose updates were aggregated.

    ``selected_before`` drops sessions that started too late to finish before
    the run ended; without it the last, still-training slow clients would be
    censored and bias the sample toward fast ones.
    """
    return np.array([
        r.get("n") for r in log.select("update_accepted", task=task)
        if selected_before is None or r.get("selected_at") <= selected_before
    ], dtype=np.float64)


def percentile_eval(params, task: SyntheticTask, population, cuts=(0, 75, 99), clients_per_bucket: int = 200,
                    limit: int | None = 256, seed: int = 0) -> dict[str, float]:
    """Held-out loss of ``params`` on clients at or above each data-volume percentile.

    Each bucket samples up to ``clients_per_bucket`` of its clients and pools
    their held-out examples, so heavier clients count in proportion to data.
    """
    n = population.num_examples
    rng = np.random.default_rng([seed & 0xFFFFFFFF, label_seed("percentile-eval")])
    out = {}
    for cut in cuts:
        threshold = np.percentile(n, cut) if cut > 0 else -np.inf
        ids = np.flatnonzero(n >= threshold)
        if ids.size == 0:
            raise ValueError(f"no clients at or above the {cut}th percentile")
        if ids.size > clients_per_bucket:
            ids = np.sort(rng.choice(ids, size=clients_per_bucket, replace=False))
        total, count = 0.0, 0
        for i in ids:
            data = population.dataset(task, int(i), split=1, limit=limit)
            total += task.loss(params, data) * len(data)
            count += len(data)
        out["all" if cut == 0 else f"p{cut}"] = total / count
    return out


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def task_summary(log: EventLog, task: str, config=None, target_loss: float | None = None,
                 population_examples=None, warmup: float | None = None) -> dict:
    """Every reported quantity for one task, computed from the log."""
    end = log.records[-1].t if len(log) else 0.0
    updates = log.select("model_updated", task=task)
    evals = eval_stream(log, task)
    out = {
        "versions": updates[-1].version if updates else 0,
        "aggregated_updates": int(sum(r.get("count") for r in updates)),
        "communication_trips": communication_trips(log, task),
        "final_loss": evals[-1][2] if evals else None,
        "updates_per_hour": update_rate(log, task, 0.0, end),
    }
    if config is not None:
        out.update(mode=config.mode.value, concurrency=config.concurrency,
                   aggregation_goal=config.aggregation_goal, over_selection=config.over_selection)
    if target_loss is not None:
        ttt = time_to_target_loss(log, target_loss, task)
        out["target_loss"] = target_loss
        out["time_to_target_loss"] = ttt
        out["trips_to_target"] = communication_trips(log, task, until=ttt) if ttt is not NOT_REACHED else None
    util = utilization_series(log, task).get(task)
    if util is not None and len(util):
        start = warmup if warmup is not None else (updates[0].t if updates else 0.0)
        out["mean_utilization"] = _jsonable(time_average(util, start, end))
        troughs = round_troughs(util, np.array([r.t for r in updates]))
        if troughs.size:
            out["utilization_trough_median"] = float(np.median(troughs))
            out["utilization_trough_max"] = float(troughs.max())
    timeout = config.client_timeout if config is not None else 0.0
    sample = participant_examples(log, task, selected_before=end - timeout)
    out["participants"] = int(sample.size)
    if population_examples is not None and sample.size:
        ks = ks_two_sample(sample, population_examples)
        out["ks_vs_population"] = {"d": ks.d_statistic, "p": ks.p_value, "n": ks.sample_sizes[0],
                                   "m": ks.sample_sizes[1]}
    return out


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_series_csvs(log: EventLog, outdir, tasks) -> list:
    """Plot-ready CSVs: utilization, update times and the eval stream per task."""
    outdir = pathlib.Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    util = utilization_series(log)
    for task in tasks:
        s = util.get(task)
        if s is not None:
            p = outdir / f"utilization_{task}.csv"
            write_csv(p, ["t_seconds", "active_clients"], zip(s.t.tolist(), s.value.astype(int).tolist()))
            written.append(p)
        p = outdir / f"eval_{task}.csv"
        write_csv(p, ["t_seconds", "version", "loss"], eval_stream(log, task))
        written.append(p)
        rate = server_updates_per_hour(log, task=task)
        p = outdir / f"updates_per_hour_{task}.csv"
        write_csv(p, ["window_start_seconds", "updates_per_hour"], zip(rate.t.tolist(), rate.value.tolist()))
        written.append(p)
    return written

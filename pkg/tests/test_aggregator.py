import numpy as np
import pytest

from asyncfl.model import ClientUpdate, ServerModel, ServerOptimizerState
from asyncfl.orchestrator.aggregator import ModelStore, TaskRuntime, new_task_state
from asyncfl.orchestrator.config import TaskConfig
from asyncfl.orchestrator.eventlog import EventLog
from asyncfl.orchestrator.session import SessionState
from asyncfl.secagg import encode
from asyncfl.secagg.protocol import client_submit


def _runtime(**kw):
    cfg = TaskConfig("t", **kw)
    store = ModelStore()
    new_task_state(cfg, 3, store)
    return TaskRuntime(cfg, EventLog(), store), store


def _through_training(rt, sid, now=0.0, n=10):
    s = rt.admit(sid, sid, n, now)
    rt.advance(s, SessionState.DOWNLOADING, now)
    rt.advance(s, SessionState.TRAINING, now)
    return s


def _upload(rt, s, delta, now=1.0):
    reply = rt.report(s, now)
    rt.advance(s, SessionState.UPLOADING, now)
    return reply, rt.upload(s, ClientUpdate(s.client_id, s.initial_version, np.asarray(delta, float),
                                            s.num_examples), now)


def test_model_updates_after_goal_and_store_checkpoints():
    rt, store = _runtime(concurrency=4, aggregation_goal=2, server_lr=0.1)
    a, b = _through_training(rt, 0), _through_training(rt, 1)
    _upload(rt, a, [1, 0, 0])
    assert rt.model.version == 0 and rt.completed == 1
    _upload(rt, b, [0, 1, 0])
    assert rt.model.version == 1 and rt.completed == 0
    assert store.load("t")[0].version == 1
    assert rt.log.select("model_updated")[0].get("count") == 2


def test_max_active_bound():
    rt, _ = _runtime(concurrency=2, aggregation_goal=1)
    assert rt.admit(0, 0, 1, 0.0) and rt.admit(1, 1, 1, 0.0)
    assert rt.admit(2, 2, 1, 0.0) is None


def test_stale_sessions_aborted_after_update():
    rt, _ = _runtime(concurrency=4, aggregation_goal=1, max_staleness=1)
    old = _through_training(rt, 0)
    for i in range(1, 3):
        s = _through_training(rt, i)
        _upload(rt, s, [1, 1, 1], now=float(i))
    assert old.state is SessionState.ABORTED and old.reason == "stale"


def test_sync_round_close_aborts_stragglers_and_discards_late_upload():
    rt, _ = _runtime(mode="sync", concurrency=2, over_selection=0.5)
    sessions = [_through_training(rt, i) for i in range(3)]
    late = sessions[2]
    rt.report(late, 0.5)
    rt.advance(late, SessionState.UPLOADING, 0.5)
    _upload(rt, sessions[0], [1, 0, 0])
    _upload(rt, sessions[1], [1, 0, 0])
    assert rt.model.version == 1
    assert late.state is SessionState.UPLOADING
    ok = rt.upload(late, ClientUpdate(2, 0, np.ones(3), 10), 2.0)
    assert not ok and late.state is SessionState.DONE
    assert rt.log.select("update_discarded")[0].get("reason") == "stale"


def test_drop_all_and_restore_from_store():
    rt, store = _runtime(concurrency=4, aggregation_goal=2)
    a, b = _through_training(rt, 0), _through_training(rt, 1)
    _upload(rt, a, [1, 0, 0])
    rt.fail()
    assert rt.drop_all(5.0, "aggregator-lost") == 1
    assert b.state is SessionState.DEAD
    fresh = TaskRuntime(rt.config, rt.log, store, incarnation=1)
    assert fresh.model.version == 0 and fresh.completed == 0


def test_model_store_refuses_going_back():
    store = ModelStore()
    st = ServerOptimizerState.fresh(1)
    store.save("t", ServerModel(2, np.zeros(1)), st)
    with pytest.raises(ValueError):
        store.save("t", ServerModel(1, np.zeros(1)), st)


def test_secure_runtime_matches_plain_runtime():
    deltas = [np.array([0.5, -0.25, 1.0]), np.array([0.125, 0.5, -1.0])]
    plain, _ = _runtime(concurrency=4, aggregation_goal=2, server_lr=0.1)
    secure, _ = _runtime(concurrency=4, aggregation_goal=2, server_lr=0.1, secagg_enabled=True,
                         secagg_bound=100.0)
    for i, d in enumerate(deltas):
        _upload(plain, _through_training(plain, i, n=4 + i), d)
        s = _through_training(secure, i, n=4 + i)
        reply = secure.report(s, 1.0)
        secure.advance(s, SessionState.UPLOADING, 1.0)
        sub = client_submit(encode(reply.weight * d, secure.group), reply.offer, reply.verify_key,
                            secure.group, rng_seed=i)
        assert secure.upload(s, sub, 1.0)
    assert plain.model.version == secure.model.version == 1
    np.testing.assert_allclose(secure.model.params, plain.model.params, atol=1e-3)

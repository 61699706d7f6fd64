from asyncfl.orchestrator.eventlog import EventLog, Record


def test_save_load_round_trip(tmp_path):
    log = EventLog()
    log.emit(0.5, "session/1", "selected", "t", 0, client=3, n=7)
    log.emit(1.25, "task/t", "model_updated", "t", 1, count=2)
    path = tmp_path / "events.jsonl"
    log.save(path)
    back = EventLog.load(path)
    assert list(back) == list(log)
    assert back.digest() == log.digest()
    assert back.select("model_updated")[0].get("count") == 2


def test_select_filters():
    log = EventLog([Record(0.0, "session/1", "selected", "a", 0, {}), Record(0.0, "session/2", "selected", "b", 0, {})])
    assert len(log.select("selected", task="a")) == 1
    assert len(log.select(entity_prefix="session/")) == 2

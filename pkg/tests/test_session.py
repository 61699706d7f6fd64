import pytest

from asyncfl.orchestrator.session import ClientSession, InvalidTransition, SessionState


def test_happy_path_and_terminal_states():
    s = ClientSession(1, 2, "t", 0, 0.0)
    for state in (SessionState.DOWNLOADING, SessionState.TRAINING, SessionState.REPORTING,
                  SessionState.UPLOADING, SessionState.DONE):
        s.advance(state, 1.0)
    assert not s.active
    with pytest.raises(InvalidTransition):
        s.advance(SessionState.ABORTED, 2.0)


def test_no_skipping_and_no_early_done():
    s = ClientSession(1, 2, "t", 0, 0.0)
    with pytest.raises(InvalidTransition):
        s.advance(SessionState.TRAINING, 1.0)
    with pytest.raises(InvalidTransition):
        s.advance(SessionState.DONE, 1.0)
    s.advance(SessionState.DEAD, 1.0, "dropout")
    assert s.reason == "dropout" and s.state.terminal


def test_working_states():
    working = {s for s in SessionState if s.working}
    assert working == {SessionState.DOWNLOADING, SessionState.TRAINING, SessionState.REPORTING,
                       SessionState.UPLOADING}

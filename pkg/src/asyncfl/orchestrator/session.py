from __future__ import annotations

import enum
from dataclasses import dataclass


class SessionState(str, enum.Enum):
    SELECTED = "selected"
    DOWNLOADING = "downloading"
    TRAINING = "training"
    REPORTING = "reporting"
    UPLOADING = "uploading"
    DONE = "done"
    DEAD = "dead"
    ABORTED = "aborted"

    @property
    def terminal(self) -> bool:
        return self in _TERMINAL

    @property
    def working(self) -> bool:
        """Counts toward utilization: the client holds a slot and is doing work."""
        return self in _WORKING


_TERMINAL = frozenset({SessionState.DONE, SessionState.DEAD, SessionState.ABORTED})
_WORKING = frozenset({SessionState.DOWNLOADING, SessionState.TRAINING,
                      SessionState.REPORTING, SessionState.UPLOADING})
_NEXT = {
    SessionState.SELECTED: SessionState.DOWNLOADING,
    SessionState.DOWNLOADING: SessionState.TRAINING,
    SessionState.TRAINING: SessionState.REPORTING,
    SessionState.REPORTING: SessionState.UPLOADING,
    SessionState.UPLOADING: SessionState.DONE,
}


class InvalidTransition(RuntimeError):
    pass


@dataclass(eq=False)
class ClientSession:
    """Server-side view of one client's participation in one task.

    ``session_id`` is a run-unique nonce; together with ``client_id`` it keys
    duplicate detection, since a client may participate many times.
    """

    session_id: int
    client_id: int
    task_id: str
    initial_version: int
    selected_at: float
    num_examples: int = 0
    state: SessionState = SessionState.SELECTED
    last_heartbeat: float = 0.0
    reason: str | None = None
    params: object = None
    generation: int | None = None
    report_version: int | None = None
    weight: float | None = None

    @property
    def key(self) -> tuple[int, int]:
        return (self.client_id, self.session_id)

    @property
    def active(self) -> bool:
        return not self.state.terminal

    def advance(self, to: SessionState, now: float, reason: str | None = None) -> None:
        if self.state.terminal:
            raise InvalidTransition(f"session {self.session_id} already {self.state.value}")
        if not to.terminal and _NEXT[self.state] is not to:
            raise InvalidTransition(f"session {self.session_id}: {self.state.value} -> {to.value}")
        if to is SessionState.DONE and self.state is not SessionState.UPLOADING:
            raise InvalidTransition(f"session {self.session_id} cannot finish from {self.state.value}")
        self.state = to
        self.last_heartbeat = now
        if to.terminal:
            self.reason = reason
            self.params = None

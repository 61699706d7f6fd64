"""Buffered asynchronous federated learning: aggregation, secure aggregation,
server orchestration and a discrete-event simulator to compare it against
synchronous rounds."""

__version__ = "0.1.0"

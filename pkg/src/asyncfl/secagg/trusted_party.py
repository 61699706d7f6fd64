"""In-process stand-in for the trusted secure aggregator (TSA).

The object only talks through byte frames so every message crossing the
trusted boundary is counted. Internally it is a one-shot state machine: it
accumulates the masks of accepted clients and hands the sum out once, and
only after ``threshold`` distinct slots have been processed.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass

import numpy as np

from . import masking
from .channel import AuthenticationFailed, MalformedMessage, decrypt_seed, dh_finalize, dh_initiate, signing_key, verify_key_bytes
from .fixed_point import GroupConfig
from .wire import WireError, decode_completing, decode_envelope


class Rejection(str, enum.Enum):
    REPLAYED_SLOT = "replayed-slot"
    BAD_MAC = "bad-mac"
    RELEASED = "released"
    UNKNOWN_SLOT = "unknown-slot"


class Rejected(Exception):
    def __init__(self, reason: Rejection, slot_index: int | None = None):
        super().__init__(f"{reason.value} (slot {slot_index})")
        self.reason = reason
        self.slot_index = slot_index


class ThresholdNotMet(Exception):
    def __init__(self, processed_count: int, threshold: int):
        super().__init__(f"only {processed_count} of {threshold} required clients processed")
        self.processed_count = processed_count
        self.threshold = threshold


@dataclass
class KeySlot:
    index: int
    server_initial_message: bytes
    trusted_party_private: bytes
    consumed: bool = False


@dataclass
class BoundaryCounter:
    bytes_in: int = 0
    bytes_out: int = 0
    messages_in: int = 0
    messages_out: int = 0

    @property
    def total(self) -> int:
        return self.bytes_in + self.bytes_out


class TrustedParty:
    """Simulated TSA for one aggregation instance.

    Attestation is reduced to the signature on each key-exchange offer; the
    verify key stands in for a checked enclave identity.
    """

    def __init__(self, group: GroupConfig, slot_count: int, rng_seed=None):
        identity = signing_key(rng_seed)
        self.group = group
        self.verify_key = verify_key_bytes(identity)
        privates, offers = dh_initiate(slot_count, rng_seed, identity=identity)
        self._offers = offers
        self._slots = {
            offer.index: KeySlot(offer.index, offer.to_bytes(), private)
            for offer, private in zip(offers, privates)
        }
        self._accumulator = np.zeros(group.vector_length, dtype=np.uint64)
        self._processed = 0
        self._released = False
        self._lock = threading.Lock()
        self.boundary = BoundaryCounter()

    @property
    def processed_count(self) -> int:
        return self._processed

    @property
    def released(self) -> bool:
        return self._released

    @property
    def mask_accumulator(self) -> np.ndarray:
        return self._accumulator.copy()

    @property
    def slot_count(self) -> int:
        return len(self._slots)

    def slot(self, index: int) -> KeySlot:
        s = self._slots[index]
        return KeySlot(s.index, s.server_initial_message, b"", s.consumed)

    def publish_offers(self) -> list[bytes]:
        """All signed initial messages, as they leave the boundary."""
        frames = [slot.server_initial_message for slot in self._slots.values()]
        with self._lock:
            self.boundary.bytes_out += sum(map(len, frames))
            self.boundary.messages_out += len(frames)
        return frames

    def process(self, envelope_frame: bytes, completing_frame: bytes) -> int:
        """Accept one client's sealed seed; returns the new processed count.

        Raises :class:`Rejected` and leaves the state untouched when the TSA
        has already released, the slot was consumed or never existed, or the
        envelope does not authenticate.
        """
        with self._lock:
            self.boundary.bytes_in += len(envelope_frame) + len(completing_frame)
            self.boundary.messages_in += 1
            if self._released:
                raise Rejected(Rejection.RELEASED)
            try:
                index, public = decode_completing(completing_frame)
                envelope = decode_envelope(envelope_frame)
            except WireError as exc:
                raise Rejected(Rejection.BAD_MAC) from exc
            slot = self._slots.get(index)
            if slot is None:
                raise Rejected(Rejection.UNKNOWN_SLOT, index)
            if slot.consumed:
                raise Rejected(Rejection.REPLAYED_SLOT, index)
            if envelope.slot_index != index:
                raise Rejected(Rejection.BAD_MAC, index)
            try:
                secret = dh_finalize(slot.trusted_party_private, public, index)
                seed = decrypt_seed(envelope, secret)
            except (AuthenticationFailed, MalformedMessage) as exc:
                raise Rejected(Rejection.BAD_MAC, index) from exc
            if len(seed) != masking.SEED_BYTES:
                raise Rejected(Rejection.BAD_MAC, index)
            mask = masking.expand_mask(seed, self.group.vector_length, self.group)
            self._accumulator = masking.add(self._accumulator, mask, self.group)
            slot.consumed = True
            self._processed += 1
            return self._processed

    def process_batch(self, frames) -> list[Rejection | None]:
        """Process ``(envelope, completing)`` pairs in order; ``None`` marks success."""
        outcomes = []
        for envelope_frame, completing_frame in frames:
            try:
                self.process(envelope_frame, completing_frame)
                outcomes.append(None)
            except Rejected as exc:
                outcomes.append(exc.reason)
        return outcomes

    def release(self) -> np.ndarray:
        """Hand out the mask sum once at least ``threshold`` clients are in."""
        with self._lock:
            self.boundary.messages_in += 1
            if self._released:
                raise Rejected(Rejection.RELEASED)
            if self._processed < self.group.threshold:
                raise ThresholdNotMet(self._processed, self.group.threshold)
            self._released = True
            out = self._accumulator.copy()
            self.boundary.bytes_out += out.shape[0] * self.group.element_bytes
            self.boundary.messages_out += 1
            return out

"""Client and server roles of the asynchronous secure aggregation protocol."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from . import fixed_point, masking
from .channel import KeyExchangeOffer, dh_complete, encrypt_seed
from .fixed_point import GroupConfig
from .trusted_party import Rejected, TrustedParty
from .wire import MaskedUpdate, encode_completing, encode_envelope, encode_masked_update


@dataclass(frozen=True)
class ClientSubmission:
    """What one client sends to the server: masked vector plus TSA-bound frames."""

    masked: MaskedUpdate
    envelope_frame: bytes
    completing_frame: bytes


def _seed(rng_seed) -> bytes:
    if rng_seed is None:
        return os.urandom(masking.SEED_BYTES)
    return hashlib.blake2b(f"{rng_seed!r}|mask-seed".encode(), digest_size=masking.SEED_BYTES).digest()


def client_submit(
    plain_fixed: np.ndarray,
    offer_frame: bytes,
    verify_key: bytes,
    group: GroupConfig,
    *,
    num_examples: int = 1,
    initial_version: int = 0,
    sequence_number: int = 0,
    rng_seed=None,
) -> ClientSubmission:
    """Run the client's half: verify the offer, mask, and seal the seed.

    Raises :class:`~asyncfl.secagg.channel.SignatureInvalid` when the offer was
    not signed by the trusted party, in which case the client sends nothing.
    """
    offer = KeyExchangeOffer.from_bytes(offer_frame)
    secret, completing = dh_complete(offer, verify_key, rng_seed)
    seed = _seed(rng_seed)
    masked = masking.mask_update(plain_fixed, seed, group)
    envelope = encrypt_seed(seed, secret, sequence_number, offer.index)
    return ClientSubmission(
        MaskedUpdate(offer.index, masked, num_examples, initial_version, group.modulus_bits),
        encode_envelope(envelope),
        encode_completing(offer.index, completing),
    )


@dataclass
class SecureAggregationServer:
    """Untrusted server side: sums masked vectors and relays seeds to the TSA.

    Aggregator-side bytes (masked uploads) and TSA-boundary bytes are tracked
    separately so the cost split can be measured.
    """

    tsa: TrustedParty
    masked_sum: np.ndarray = field(init=False)
    count: int = 0
    aggregator_bytes: int = 0
    rejected: list = field(default_factory=list)

    def __post_init__(self):
        self.masked_sum = np.zeros(self.tsa.group.vector_length, dtype=np.uint64)

    def receive(self, submission: ClientSubmission) -> bool:
        """Forward the seed to the TSA first; only add the masked vector if it was accepted."""
        self.aggregator_bytes += len(encode_masked_update(submission.masked))
        try:
            self.tsa.process(submission.envelope_frame, submission.completing_frame)
        except Rejected as exc:
            self.rejected.append(exc.reason)
            return False
        self.masked_sum = masking.add(self.masked_sum, submission.masked.masked_vector, self.tsa.group)
        self.count += 1
        return True

    def finish(self) -> np.ndarray:
        """Unmask the running sum; raises ``ThresholdNotMet`` below threshold."""
        return masking.unmask_sum(self.masked_sum, self.tsa.release(), self.tsa.group)


def aggregate_reals(vectors, group: GroupConfig, rng_seed=0, slot_count: int | None = None):
    """Securely sum real vectors end to end; returns ``(real_sum, server)``.

    Convenience for tests and benchmarks: the caller plays every client.
    """
    vectors = [np.asarray(v, dtype=np.float64) for v in vectors]
    tsa = TrustedParty(group, slot_count or max(2 * len(vectors), 1), rng_seed=("tsa", rng_seed))
    offers = tsa.publish_offers()
    server = SecureAggregationServer(tsa)
    for i, v in enumerate(vectors):
        server.receive(client_submit(fixed_point.encode(v, group), offers[i], tsa.verify_key, group,
                                     rng_seed=("client", rng_seed, i)))
    return fixed_point.decode(server.finish(), group), server

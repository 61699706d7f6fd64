"""Byte accounting across the trusted boundary versus the aggregator."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .fixed_point import GroupConfig
from .protocol import SecureAggregationServer, client_submit
from .trusted_party import TrustedParty


@dataclass(frozen=True)
class BoundaryCost:
    clients: int
    vector_length: int
    tsa_bytes_in: int
    tsa_bytes_out: int
    tsa_bytes_per_client: float
    aggregator_bytes: int

    def as_dict(self) -> dict:
        return asdict(self)


def measure_boundary(clients: int, vector_length: int, modulus_bits: int = 32, seed: int = 0) -> BoundaryCost:
    """Run one full aggregation with ``clients`` zero vectors and count bytes.

    Plaintext values do not change message sizes, so zeros keep the run cheap.
    Slots are over-provisioned two to one.
    """
    group = GroupConfig(vector_length=vector_length, modulus_bits=modulus_bits, threshold=clients)
    tsa = TrustedParty(group, 2 * clients, rng_seed=("bench", seed))
    offers = tsa.publish_offers()
    server = SecureAggregationServer(tsa)
    plain = np.zeros(vector_length, dtype=np.uint64)
    for i in range(clients):
        server.receive(client_submit(plain, offers[i], tsa.verify_key, group, rng_seed=("bench-client", seed, i)))
    server.finish()
    b = tsa.boundary
    return BoundaryCost(
        clients=clients,
        vector_length=vector_length,
        tsa_bytes_in=b.bytes_in,
        tsa_bytes_out=b.bytes_out,
        tsa_bytes_per_client=b.bytes_in / clients,
        aggregator_bytes=server.aggregator_bytes,
    )


def boundary_table(clients_values, vector_lengths, modulus_bits: int = 32, seed: int = 0) -> list[BoundaryCost]:
    return [measure_boundary(k, m, modulus_bits, seed) for k in clients_values for m in vector_lengths]

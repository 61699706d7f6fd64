"""Real <-> group-element conversion over Z_{2^b}.

Reals are scaled by ``c``, rounded to the nearest integer (ties to even), and
the signed integer range ``[-floor(n/2), ceil(n/2))`` is folded onto
``Z_n``: non-negatives map to themselves, ``-x`` maps to ``n - x``.

Group addition only matches integer addition while the true sum stays inside
that range. Nothing here can detect a wrap-around after the fact; callers
bound it up front with :func:`check_overflow`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class FixedPointOverflow(ValueError):
    pass


@dataclass(frozen=True)
class GroupConfig:
    """Public parameters of one secure aggregation instance."""

    vector_length: int
    modulus_bits: int = 32
    scaling_factor: float = 2.0**16
    threshold: int = 1

    def __post_init__(self):
        if not 1 <= self.modulus_bits <= 62:
            raise ValueError("modulus_bits must be in [1, 62]")
        if self.vector_length < 0:
            raise ValueError("vector_length must be non-negative")
        if not self.scaling_factor > 0:
            raise ValueError("scaling_factor must be positive")
        if self.threshold < 1:
            raise ValueError("threshold must be at least 1")

    @property
    def modulus(self) -> int:
        return 1 << self.modulus_bits

    @property
    def mask(self) -> np.uint64:
        return np.uint64(self.modulus - 1)

    @property
    def lower(self) -> int:
        """Smallest representable integer, ``-floor(n/2)``."""
        return -(self.modulus // 2)

    @property
    def upper(self) -> int:
        """One past the largest representable integer, ``ceil(n/2)``."""
        return -(-self.modulus // 2)

    @property
    def element_bytes(self) -> int:
        return 4 if self.modulus_bits <= 32 else 8


def check_overflow(group: GroupConfig, magnitude_bound: float, num_clients: int) -> None:
    """Reject parameter sets whose worst-case sum could wrap around.

    ``magnitude_bound`` bounds every coordinate of every client contribution.
    """
    if magnitude_bound < 0 or num_clients < 1:
        raise ValueError("need a non-negative bound and at least one client")
    worst = group.scaling_factor * magnitude_bound * num_clients
    if worst >= group.modulus // 2:
        raise FixedPointOverflow(
            f"c*bound*K = {worst:g} reaches floor(n/2) = {group.modulus // 2}; "
            "lower the scaling factor, the bound, or the aggregation goal"
        )


def to_fixed(a: float, group: GroupConfig) -> int:
    scaled = int(np.rint(a * group.scaling_factor))
    if not group.lower <= scaled < group.upper:
        raise FixedPointOverflow(f"{a!r} scales to {scaled}, outside [{group.lower}, {group.upper})")
    return scaled % group.modulus


def from_fixed_sum(g: int, group: GroupConfig) -> float:
    g = int(g)
    if not 0 <= g < group.modulus:
        raise ValueError(f"{g} is not an element of Z_{group.modulus}")
    signed = g if g < group.upper else g - group.modulus
    return signed / group.scaling_factor


def encode(values: np.ndarray, group: GroupConfig) -> np.ndarray:
    """Vectorized :func:`to_fixed`; returns uint64 group elements."""
    scaled = np.rint(np.asarray(values, dtype=np.float64) * group.scaling_factor)
    if scaled.size and (scaled.min() < group.lower or scaled.max() >= group.upper):
        raise FixedPointOverflow("vector has coordinates outside the representable range")
    # two's-complement wrap of int64 then reduction mod 2^b folds negatives onto n - x
    return scaled.astype(np.int64).astype(np.uint64) & group.mask


def decode(elements: np.ndarray, group: GroupConfig) -> np.ndarray:
    """Vectorized :func:`from_fixed_sum`."""
    g = np.asarray(elements, dtype=np.uint64) & group.mask
    signed = g.astype(np.int64)
    signed = np.where(g >= np.uint64(group.upper), signed - np.int64(group.modulus), signed)
    return signed / group.scaling_factor

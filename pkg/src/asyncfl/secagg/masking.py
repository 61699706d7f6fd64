"""Additive one-time pads over Z_{2^b}.

Mask expansion is AES-128 in CTR mode keyed by the 16-byte seed, initial
counter block all zeros. The keystream is read as little-endian uint32 words
(uint64 words when b > 32), one word per coordinate, each reduced mod 2^b.
"""

from __future__ import annotations

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .fixed_point import GroupConfig

SEED_BYTES = 16
_ZERO_BLOCK = bytes(16)


class LengthMismatch(ValueError):
    pass


def expand_mask(seed: bytes, length: int, group: GroupConfig) -> np.ndarray:
    if len(seed) != SEED_BYTES:
        raise ValueError(f"mask seeds are {SEED_BYTES} bytes, got {len(seed)}")
    if length == 0:
        return np.zeros(0, dtype=np.uint64)
    width = group.element_bytes
    encryptor = Cipher(algorithms.AES(seed), modes.CTR(_ZERO_BLOCK)).encryptor()
    stream = encryptor.update(bytes(length * width)) + encryptor.finalize()
    words = np.frombuffer(stream, dtype="<u4" if width == 4 else "<u8")
    return words.astype(np.uint64) & group.mask


def add(a: np.ndarray, b: np.ndarray, group: GroupConfig) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.uint64), np.asarray(b, dtype=np.uint64)
    if a.shape != b.shape:
        raise LengthMismatch(f"cannot add group vectors of shapes {a.shape} and {b.shape}")
    return (a + b) & group.mask


def subtract(a: np.ndarray, b: np.ndarray, group: GroupConfig) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.uint64), np.asarray(b, dtype=np.uint64)
    if a.shape != b.shape:
        raise LengthMismatch(f"cannot subtract group vectors of shapes {a.shape} and {b.shape}")
    return (a - b) & group.mask


def mask_update(plain_fixed: np.ndarray, seed: bytes, group: GroupConfig) -> np.ndarray:
    """Encrypt a fixed-point vector: ``plain + PRNG(seed)`` elementwise mod 2^b."""
    plain = np.asarray(plain_fixed, dtype=np.uint64)
    if plain.shape != (group.vector_length,):
        raise LengthMismatch(f"expected {group.vector_length} elements, got {plain.shape}")
    return add(plain, expand_mask(seed, plain.shape[0], group), group)


def unmask_sum(masked_sum: np.ndarray, unmask_vector: np.ndarray, group: GroupConfig) -> np.ndarray:
    """Recover the plaintext sum from the masked sum and the aggregated masks."""
    return subtract(masked_sum, unmask_vector, group)

"""Binary wire format for masked updates and seed envelopes.

Every frame is ``u32 body_length | body`` and every body opens with a 1-byte
format tag. All integers are little-endian.

MaskedUpdate, tag 0x11::

    u8  tag = 0x11
    u8  modulus_bits b
    u32 slot_index
    u64 initial_version
    u32 num_examples
    u32 length l
    l * (u32 if b <= 32 else u64) elements, each < 2^b

SeedEnvelope, tag 0x21::

    u8  tag = 0x21
    u64 sequence_number
    u32 slot_index
    u16 ciphertext length, ciphertext
    u16 mac length, mac

Completing message, tag 0x31::

    u8  tag = 0x31
    u32 slot_index
    32 bytes X25519 public key
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .channel import PUBLIC_KEY_BYTES, SeedEnvelope

MASKED_UPDATE_TAG = 0x11
SEED_ENVELOPE_TAG = 0x21
COMPLETING_TAG = 0x31


class WireError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MaskedUpdate:
    slot_index: int
    masked_vector: np.ndarray
    num_examples: int
    initial_version: int
    modulus_bits: int = 32

    def __post_init__(self):
        v = np.asarray(self.masked_vector, dtype=np.uint64)
        if v.size and int(v.max()) >> self.modulus_bits:
            raise WireError("masked vector has elements outside Z_{2^b}")
        object.__setattr__(self, "masked_vector", v)


def _frame(body: bytes) -> bytes:
    return struct.pack("<I", len(body)) + body


def _unframe(data: bytes, tag: int) -> bytes:
    if len(data) < 5:
        raise WireError("frame too short")
    (length,) = struct.unpack_from("<I", data)
    body = data[4:]
    if length != len(body):
        raise WireError(f"frame declares {length} bytes, carries {len(body)}")
    if body[0] != tag:
        raise WireError(f"expected format tag {tag:#04x}, got {body[0]:#04x}")
    return body


def encode_masked_update(update: MaskedUpdate) -> bytes:
    dtype = "<u4" if update.modulus_bits <= 32 else "<u8"
    header = struct.pack(
        "<BBIQII",
        MASKED_UPDATE_TAG,
        update.modulus_bits,
        update.slot_index,
        update.initial_version,
        update.num_examples,
        update.masked_vector.shape[0],
    )
    return _frame(header + update.masked_vector.astype(dtype).tobytes())


def decode_masked_update(data: bytes) -> MaskedUpdate:
    body = _unframe(data, MASKED_UPDATE_TAG)
    header = struct.calcsize("<BBIQII")
    _, bits, slot, version, n, length = struct.unpack_from("<BBIQII", body)
    dtype = "<u4" if bits <= 32 else "<u8"
    payload = body[header:]
    if len(payload) != length * np.dtype(dtype).itemsize:
        raise WireError("masked vector length does not match its header")
    vector = np.frombuffer(payload, dtype=dtype).astype(np.uint64)
    return MaskedUpdate(slot, vector, n, version, bits)


def encode_envelope(envelope: SeedEnvelope) -> bytes:
    body = struct.pack("<BQI", SEED_ENVELOPE_TAG, envelope.sequence_number, envelope.slot_index)
    body += struct.pack("<H", len(envelope.ciphertext)) + envelope.ciphertext
    body += struct.pack("<H", len(envelope.mac)) + envelope.mac
    return _frame(body)


def decode_envelope(data: bytes) -> SeedEnvelope:
    body = _unframe(data, SEED_ENVELOPE_TAG)
    try:
        _, seq, slot = struct.unpack_from("<BQI", body)
        pos = struct.calcsize("<BQI")
        (ct_len,) = struct.unpack_from("<H", body, pos)
        pos += 2
        ciphertext = body[pos : pos + ct_len]
        pos += ct_len
        (mac_len,) = struct.unpack_from("<H", body, pos)
        pos += 2
        mac = body[pos : pos + mac_len]
    except struct.error as exc:
        raise WireError("truncated seed envelope") from exc
    if len(ciphertext) != ct_len or len(mac) != mac_len or pos + mac_len != len(body):
        raise WireError("seed envelope lengths are inconsistent")
    return SeedEnvelope(ciphertext, mac, seq, slot)


def encode_completing(slot_index: int, public_key: bytes) -> bytes:
    if len(public_key) != PUBLIC_KEY_BYTES:
        raise WireError("completing message carries a 32-byte public key")
    return _frame(struct.pack("<BI", COMPLETING_TAG, slot_index) + public_key)


def decode_completing(data: bytes) -> tuple[int, bytes]:
    body = _unframe(data, COMPLETING_TAG)
    if len(body) != 5 + PUBLIC_KEY_BYTES:
        raise WireError("completing message has the wrong length")
    (slot,) = struct.unpack_from("<I", body, 1)
    return slot, body[5:]

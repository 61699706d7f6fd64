"""Client <-> trusted party channel: signed X25519 offers and sealed seeds.

The trusted party prepares key-exchange offers ahead of time and signs each
with its Ed25519 identity key. A client verifies the signature, completes the
exchange with a fresh X25519 key, and derives a 32-byte shared secret with
HKDF-SHA256 (info binds the slot index). The mask seed then travels sealed
with AES-256-GCM; the sequence number and slot index are associated data and
the sequence number also fixes the nonce.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

PUBLIC_KEY_BYTES = 32
SIGNATURE_BYTES = 64
SECRET_BYTES = 32
MAC_BYTES = 16

_OFFER_DOMAIN = b"asyncfl/secagg/offer/v1"
_KDF_INFO = b"asyncfl/secagg/channel/v1"
_AAD_TAG = b"\x21"


class SignatureInvalid(Exception):
    """The offer was not signed by the trusted party; the client must abort."""


class MalformedMessage(ValueError):
    pass


class AuthenticationFailed(Exception):
    """A sealed seed did not verify under the given secret."""


def _raw(public_key) -> bytes:
    return public_key.public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)


def _derive(rng_seed, label: str) -> bytes:
    if rng_seed is None:
        return os.urandom(32)
    return hashlib.blake2b(f"{rng_seed!r}|{label}".encode(), digest_size=32).digest()


def signing_key(rng_seed=None) -> Ed25519PrivateKey:
    """Long-term identity key of the trusted party (deterministic under a seed)."""
    return Ed25519PrivateKey.from_private_bytes(_derive(rng_seed, "identity"))


def verify_key_bytes(key: Ed25519PrivateKey) -> bytes:
    return _raw(key.public_key())


@dataclass(frozen=True)
class KeyExchangeOffer:
    """An initial DH message, addressable by slot index and signed."""

    index: int
    public_key: bytes
    signature: bytes

    def signed_payload(self) -> bytes:
        return _OFFER_DOMAIN + struct.pack("<I", self.index) + self.public_key

    def to_bytes(self) -> bytes:
        return struct.pack("<I", self.index) + self.public_key + self.signature

    @classmethod
    def from_bytes(cls, data: bytes) -> "KeyExchangeOffer":
        if len(data) != 4 + PUBLIC_KEY_BYTES + SIGNATURE_BYTES:
            raise MalformedMessage("offer has the wrong length")
        (index,) = struct.unpack_from("<I", data)
        return cls(index, data[4 : 4 + PUBLIC_KEY_BYTES], data[4 + PUBLIC_KEY_BYTES :])


def dh_initiate(slot_count: int, rng_seed=None, identity: Ed25519PrivateKey | None = None):
    """Prepare ``slot_count`` signed key-exchange offers.

    Returns ``(privates, offers)``: the per-slot X25519 private keys (raw
    bytes, kept by the trusted party) and the offers to hand to the server.
    """
    if slot_count < 1:
        raise ValueError("slot_count must be positive")
    identity = identity or signing_key(rng_seed)
    privates, offers = [], []
    for index in range(slot_count):
        private = X25519PrivateKey.from_private_bytes(_derive(rng_seed, f"slot/{index}"))
        offer = KeyExchangeOffer(index, _raw(private.public_key()), b"")
        signature = identity.sign(offer.signed_payload())
        privates.append(private.private_bytes_raw())
        offers.append(KeyExchangeOffer(index, offer.public_key, signature))
    return privates, offers


def _shared_secret(private: X25519PrivateKey, peer_public: bytes, index: int) -> bytes:
    try:
        shared = private.exchange(X25519PublicKey.from_public_bytes(peer_public))
    except ValueError as exc:
        raise MalformedMessage(str(exc)) from exc
    kdf = HKDF(algorithm=hashes.SHA256(), length=SECRET_BYTES, salt=None,
               info=_KDF_INFO + struct.pack("<I", index))
    return kdf.derive(shared)


def dh_complete(offer: KeyExchangeOffer, verify_key: bytes, rng_seed=None) -> tuple[bytes, bytes]:
    """Client side: verify the offer, answer it, and derive the shared secret.

    Returns ``(shared_secret, completing_message)``.
    """
    try:
        Ed25519PublicKey.from_public_bytes(verify_key).verify(offer.signature, offer.signed_payload())
    except (InvalidSignature, ValueError) as exc:
        raise SignatureInvalid(f"offer {offer.index} failed signature verification") from exc
    private = X25519PrivateKey.from_private_bytes(_derive(rng_seed, f"client/{offer.index}"))
    secret = _shared_secret(private, offer.public_key, offer.index)
    return secret, _raw(private.public_key())


def dh_finalize(trusted_party_private: bytes, completing_message: bytes, index: int) -> bytes:
    """Trusted-party side of the exchange for slot ``index``."""
    if len(completing_message) != PUBLIC_KEY_BYTES:
        raise MalformedMessage(
            f"completing message must be {PUBLIC_KEY_BYTES} bytes, got {len(completing_message)}"
        )
    if len(trusted_party_private) != 32:
        raise MalformedMessage("trusted-party private key must be 32 bytes")
    private = X25519PrivateKey.from_private_bytes(trusted_party_private)
    return _shared_secret(private, completing_message, index)


@dataclass(frozen=True)
class SeedEnvelope:
    ciphertext: bytes
    mac: bytes
    sequence_number: int
    slot_index: int

    def associated_data(self) -> bytes:
        return _AAD_TAG + struct.pack("<QI", self.sequence_number, self.slot_index)


def _nonce(sequence_number: int) -> bytes:
    return struct.pack("<Q", sequence_number) + bytes(4)


def encrypt_seed(seed: bytes, shared_secret: bytes, sequence_number: int, slot_index: int = 0) -> SeedEnvelope:
    stub = SeedEnvelope(b"", b"", sequence_number, slot_index)
    sealed = AESGCM(shared_secret).encrypt(_nonce(sequence_number), seed, stub.associated_data())
    return SeedEnvelope(sealed[:-MAC_BYTES], sealed[-MAC_BYTES:], sequence_number, slot_index)


def decrypt_seed(envelope: SeedEnvelope, shared_secret: bytes) -> bytes:
    try:
        return AESGCM(shared_secret).decrypt(
            _nonce(envelope.sequence_number),
            envelope.ciphertext + envelope.mac,
            envelope.associated_data(),
        )
    except (InvalidTag, ValueError, OverflowError) as exc:
        raise AuthenticationFailed("seed envelope failed authentication") from exc

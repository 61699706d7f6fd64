"""Asynchronous secure aggregation with a simulated trusted aggregator."""

from .channel import (
    AuthenticationFailed,
    KeyExchangeOffer,
    MalformedMessage,
    SeedEnvelope,
    SignatureInvalid,
    decrypt_seed,
    dh_complete,
    dh_finalize,
    dh_initiate,
    encrypt_seed,
)
from .fixed_point import FixedPointOverflow, GroupConfig, check_overflow, decode, encode, from_fixed_sum, to_fixed
from .masking import LengthMismatch, expand_mask, mask_update, unmask_sum
from .protocol import ClientSubmission, SecureAggregationServer, aggregate_reals, client_submit
from .trusted_party import KeySlot, Rejected, Rejection, ThresholdNotMet, TrustedParty
from .wire import MaskedUpdate

__all__ = [
    "AuthenticationFailed",
    "ClientSubmission",
    "FixedPointOverflow",
    "GroupConfig",
    "KeyExchangeOffer",
    "KeySlot",
    "LengthMismatch",
    "MalformedMessage",
    "MaskedUpdate",
    "Rejected",
    "Rejection",
    "SecureAggregationServer",
    "SeedEnvelope",
    "SignatureInvalid",
    "ThresholdNotMet",
    "TrustedParty",
    "aggregate_reals",
    "check_overflow",
    "client_submit",
    "decode",
    "decrypt_seed",
    "dh_complete",
    "dh_finalize",
    "dh_initiate",
    "encode",
    "encrypt_seed",
    "expand_mask",
    "from_fixed_sum",
    "mask_update",
    "to_fixed",
    "unmask_sum",
]

"""Hybrid physical/software key distribution with one-time-pad discipline.

A simulated physical exchange yields a short hardware-based key (HBK).  The
HBK is spent as a one-time pad on Diffie-Hellman-Merkle rounds, whose
outputs concatenate into a longer software-based key (SBK); the SBK in turn
is the one-time pad for data.  ``analysis`` holds the eavesdropper's side.
"""

from .keycore import BitString, KeyPool, PadReceipt, PoolExhausted, otp_apply, otp_encrypt_with_pool
from .dhm_expand import DhmParams, SoftKey, expand_key, modexp
from .kljn_sim import KljnConfig, run_exchange
from .privacy_amp import xor_amplify
from .session import PartyConfig, Phase, run_session, receive_secure, send_secure

__all__ = [
    "BitString",
    "DhmParams",
    "KeyPool",
    "KljnConfig",
    "PadReceipt",
    "PartyConfig",
    "Phase",
    "PoolExhausted",
    "SoftKey",
    "expand_key",
    "modexp",
    "otp_apply",
    "otp_encrypt_with_pool",
    "receive_secure",
    "run_exchange",
    "run_session",
    "send_secure",
    "xor_amplify",
]

"""Homomorphic secret sharing over a fast Paillier variant.

Two non-colluding servers hold a ciphertext and a subtractive share of each
uploaded value and can multiply, compare and convert between the two
representations without talking to the key holder.
"""

from .errors import HSSError
from .fastpai import (
    Ciphertext,
    PrivateKey,
    PublicKey,
    SecurityParams,
    decrypt,
    decrypt_signed,
    encrypt,
    encrypt_signed,
    keygen,
    toy_keypair,
)
from .protocols import Deployment, do_init, do_upload, scmp, s2c, c2s, smul
from .sharing import Share, SharePair, ddlog, reconstruct

__version__ = "0.1.0"

__all__ = [
    "HSSError",
    "Ciphertext",
    "PrivateKey",
    "PublicKey",
    "SecurityParams",
    "decrypt",
    "decrypt_signed",
    "encrypt",
    "encrypt_signed",
    "keygen",
    "toy_keypair",
    "Deployment",
    "do_init",
    "do_upload",
    "scmp",
    "s2c",
    "c2s",
    "smul",
    "Share",
    "SharePair",
    "ddlog",
    "reconstruct",
]

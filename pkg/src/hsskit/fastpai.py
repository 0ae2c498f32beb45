"""Paillier variant with a short private key and fast h-based randomisation.

Keys are built from a modulus ``N = P*Q`` where small odd primes ``p | P-1``
and ``q | Q-1`` form the private key ``alpha = p*q``.  Encryption is

    c = (1 + N)**m * (h**r mod N)**N  mod N**2,   r <- {0,1}^(4*kappa)

and decryption is ``L(c**(2*alpha) mod N**2) * (2*alpha)**-1 mod N`` with
``L(x) = (x - 1) / N``.
"""

from __future__ import annotations

import math
import secrets
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Tuple

import gmpy2

from .errors import (
    DecryptionError,
    GenerationTimeout,
    ModulusMismatchError,
    ParameterError,
    PlaintextRangeError,
)
from .fixedbase import DEFAULT_WINDOW, FixedBaseTable

# NIST SP 800-57 strength -> RSA-style modulus length
MODULUS_BITS = {80: 1024, 112: 2048, 128: 3072, 192: 7680, 256: 15360}

TOY_PRIMES = (11, 59, 5, 29)  # (P, Q, p, q) -> N = 649


def default_rng():
    return secrets.SystemRandom()


@dataclass(frozen=True)
class SecurityParams:
    """Sizes that drive key generation and the protocol ranges.

    ``l_sk_bits`` (private-key length) is always ``4 * kappa``.  Toy parameter
    sets skip the size invariants so that tiny hand-checkable moduli can be used.
    """

    kappa: int = 128
    n_bits: int = 3072
    sigma: int = 128
    data_bits: int = 32
    toy: bool = False

    def __post_init__(self):
        if min(self.kappa, self.n_bits, self.sigma, self.data_bits) < 1:
            raise ParameterError("all sizes must be positive")
        if not self.toy and not self.range_ok:
            raise ParameterError(
                f"data_bits + sigma + l_sk_bits + 2 = "
                f"{self.data_bits + self.sigma + self.l_sk_bits + 2} must be < n_bits - 2 = {self.n_bits - 2}"
            )

    @classmethod
    def for_kappa(cls, kappa: int, **overrides) -> "SecurityParams":
        if kappa not in MODULUS_BITS:
            raise ParameterError(f"unsupported kappa {kappa}; choose one of {sorted(MODULUS_BITS)}")
        return cls(kappa=kappa, n_bits=overrides.pop("n_bits", MODULUS_BITS[kappa]), **overrides)

    @classmethod
    def toy_params(cls) -> "SecurityParams":
        # alpha = 145 fits in l_sk_bits = 8; sigma = 1 forces r1 = 1 in comparisons
        return cls(kappa=2, n_bits=10, sigma=1, data_bits=3, toy=True)

    @property
    def l_sk_bits(self) -> int:
        return 4 * self.kappa

    @property
    def range_ok(self) -> bool:
        return self.data_bits + self.sigma + self.l_sk_bits + 2 < self.n_bits - 2

    @property
    def theta(self) -> int:
        """Share-compression modulus ``2 ** (4*kappa + 1 + kappa)``."""
        return 1 << (self.l_sk_bits + 1 + self.kappa)


@dataclass(frozen=True)
class ParamSet:
    N: int
    P: int
    Q: int
    p: int
    q: int

    @property
    def alpha(self) -> int:
        return self.p * self.q

    @property
    def beta(self) -> int:
        return (self.P - 1) * (self.Q - 1) // (4 * self.p * self.q)


def check_paramset(ps: ParamSet) -> None:
    """Raise :class:`ParameterError` naming the first structural invariant *ps* breaks."""
    P, Q, p, q = ps.P, ps.Q, ps.p, ps.q
    checks = [
        (ps.N == P * Q, "N != P*Q"),
        (all(gmpy2.is_prime(v) for v in (P, Q, p, q)), "P, Q, p, q must all be prime"),
        (p % 2 == 1 and q % 2 == 1, "p and q must be odd"),
        (p != q, "p == q"),
        ((P - 1) % p == 0, "p does not divide P-1"),
        ((Q - 1) % q == 0, "q does not divide Q-1"),
        (P % 4 == 3 and Q % 4 == 3, "P and Q must be 3 mod 4"),
        (math.gcd(P - 1, Q - 1) == 2, "gcd(P-1, Q-1) != 2"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ParameterError(msg)
    if ((P - 1) * (Q - 1)) % (4 * p * q):
        raise ParameterError("4pq does not divide (P-1)(Q-1)")
    if math.gcd(p * q, ps.beta) != 1:
        raise ParameterError("gcd(pq, (P-1)(Q-1)/(4pq)) != 1")
    if math.gcd(2 * p * q, ps.N) != 1:
        raise ParameterError("gcd(2*alpha, N) != 1: (2*alpha)^-1 mod N does not exist")


def paramset_from_primes(P: int, Q: int, p: int, q: int) -> ParamSet:
    """Build a parameter tuple from explicit primes (toy mode); sizes are not checked."""
    ps = ParamSet(P * Q, P, Q, p, q)
    check_paramset(ps)
    return ps


def _random_prime(bits: int, rng) -> int:
    while True:
        cand = rng.getrandbits(bits) | (1 << (bits - 1)) | 1
        if gmpy2.is_prime(cand):
            return cand


def _prime_with_factor(small: int, lo: int, hi: int, rng, attempts: int) -> Optional[Tuple[int, int]]:
    """Search ``P = 2*small*k + 1`` in ``[lo, hi)`` with ``P = 3 mod 4`` (so k odd)."""
    k_lo = -(-(lo - 1) // (2 * small))
    k_hi = (hi - 2) // (2 * small)
    if k_hi <= k_lo:
        return None
    for _ in range(attempts):
        k = rng.randrange(k_lo, k_hi + 1) | 1
        if k > k_hi or k % small == 0:
            continue
        P = 2 * small * k + 1
        if gmpy2.is_prime(P):
            return P, k
    return None


def ngen(params: SecurityParams, rng=None, max_attempts: int = 200) -> ParamSet:
    """Generate ``(N, P, Q, p, q)`` with ``|N| = n_bits`` and ``|p| = |q| = 2*kappa``.

    ``max_attempts`` bounds the number of (p, q) pairs tried; each pair gets a
    prime-search budget proportional to the expected prime gap.
    """
    if params.toy:
        raise ParameterError("toy parameters are injected with paramset_from_primes")
    rng = rng or default_rng()
    half = params.n_bits // 2
    small_bits = params.l_sk_bits // 2
    if params.n_bits % 2 or small_bits + 8 >= half:
        raise ParameterError("n_bits must be even and leave room for the cofactor")
    # P, Q >= lo guarantees P*Q has exactly n_bits bits
    lo = math.isqrt(1 << (params.n_bits - 1)) + 1
    hi = 1 << half
    budget = 40 * half
    for _ in range(max_attempts):
        p = _random_prime(small_bits, rng)
        q = _random_prime(small_bits, rng)
        if p == q:
            continue
        found_p = _prime_with_factor(p, lo, hi, rng, budget)
        if found_p is None:
            continue
        found_q = _prime_with_factor(q, lo, hi, rng, budget)
        if found_q is None:
            continue
        (P, kp), (Q, kq) = found_p, found_q
        if P == Q or math.gcd(p * kp, q * kq) != 1:
            continue
        ps = ParamSet(P * Q, P, Q, p, q)
        try:
            check_paramset(ps)
        except ParameterError:
            continue
        return ps
    raise GenerationTimeout(f"no parameter set found after {max_attempts} attempts")


@dataclass(frozen=True)
class PublicKey:
    N: int
    h: int
    r_bits: int

    def __post_init__(self):
        if not 1 < self.h < self.N or math.gcd(self.h, self.N) != 1:
            raise ParameterError("h must be a unit in (1, N)")

    @property
    def N_sq(self) -> int:
        return self.N * self.N

    @property
    def n_bytes(self) -> int:
        return (self.N.bit_length() + 7) // 8

    @cached_property
    def h_to_n(self) -> int:
        # (h**r mod N)**N == (h**N)**r mod N**2 because a = b (mod N) implies a**N = b**N (mod N**2)
        return int(gmpy2.powmod(self.h, self.N, self.N_sq))

    @cached_property
    def table(self) -> FixedBaseTable:
        return FixedBaseTable.build(self.h_to_n, self.N_sq, self.r_bits, DEFAULT_WINDOW)

    def sample_r(self, rng) -> int:
        return rng.getrandbits(self.r_bits)


@dataclass(frozen=True)
class PrivateKey:
    N: int
    alpha: int
    two_alpha: int = field(init=False)
    two_alpha_inv: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "two_alpha", 2 * self.alpha)
        try:
            inv = int(gmpy2.invert(2 * self.alpha, self.N))
        except ZeroDivisionError as exc:
            raise ParameterError("2*alpha is not invertible mod N") from exc
        object.__setattr__(self, "two_alpha_inv", inv)


@dataclass(frozen=True)
class Ciphertext:
    value: int
    N: int

    def __post_init__(self):
        if not 0 < self.value < self.N * self.N:
            raise ValueError("ciphertext outside (0, N^2)")

    @property
    def N_sq(self) -> int:
        return self.N * self.N


def keygen_from_paramset(ps: ParamSet, r_bits: int, rng=None, y: Optional[int] = None) -> Tuple[PublicKey, PrivateKey]:
    rng = rng or default_rng()
    N = ps.N
    if y is None:
        while True:
            y = rng.randrange(1, N)
            if math.gcd(y, N) == 1:
                break
    elif math.gcd(y, N) != 1:
        raise ParameterError("y must be a unit mod N")
    h = (-int(gmpy2.powmod(y, 2 * ps.beta, N))) % N
    return PublicKey(N, h, r_bits), PrivateKey(N, ps.alpha)


def keygen(params: SecurityParams, rng=None) -> Tuple[PublicKey, PrivateKey]:
    rng = rng or default_rng()
    ps = ngen(params, rng)
    return keygen_from_paramset(ps, params.l_sk_bits, rng)


def toy_keypair(y: int = 2) -> Tuple[PublicKey, PrivateKey]:
    """Keys over N = 649 (P=11, Q=59, p=5, q=29); with y=2, h = 645."""
    ps = paramset_from_primes(*TOY_PRIMES)
    return keygen_from_paramset(ps, SecurityParams.toy_params().l_sk_bits, y=y)


def encrypt(pk: PublicKey, m: int, rng=None, r: Optional[int] = None, use_table: bool = True) -> Ciphertext:
    """Encrypt ``m`` in ``[0, N)``; pass *r* to fix the randomness."""
    if not 0 <= m < pk.N:
        raise PlaintextRangeError(f"plaintext {m} outside [0, N)")
    if r is None:
        r = pk.sample_r(rng or default_rng())
    N, N_sq = pk.N, pk.N_sq
    if use_table and r.bit_length() <= pk.r_bits:
        mask = pk.table.pow(r)
    else:
        mask = gmpy2.powmod(pk.h_to_n, r, N_sq)
    # (1 + N)**m = 1 + m*N (mod N**2)
    return Ciphertext(int((1 + m * N) * mask % N_sq), N)


def decrypt(sk: PrivateKey, c: Ciphertext) -> int:
    _same_modulus(sk.N, c.N)
    N = sk.N
    u = int(gmpy2.powmod(c.value, sk.two_alpha, N * N))
    if u % N != 1:
        raise DecryptionError("c^(2*alpha) != 1 mod N: ciphertext is corrupted or under another key")
    return (u - 1) // N * sk.two_alpha_inv % N


def _same_modulus(a: int, b: int) -> None:
    if a != b:
        raise ModulusMismatchError("operands belong to different moduli")


def ct_pow(c: Ciphertext, e: int) -> Ciphertext:
    """``c ** e mod N**2``; negative exponents go through the inverse."""
    return Ciphertext(int(gmpy2.powmod(c.value, e, c.N_sq)), c.N)


def add_ct(c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
    _same_modulus(c1.N, c2.N)
    return Ciphertext(c1.value * c2.value % c1.N_sq, c1.N)


def sub_ct(c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
    _same_modulus(c1.N, c2.N)
    inv = int(gmpy2.invert(c2.value, c2.N_sq))
    return Ciphertext(c1.value * inv % c1.N_sq, c1.N)


def scalar_mul_ct(c: Ciphertext, k: int) -> Ciphertext:
    return ct_pow(c, k)


def encode_signed(x: int, N: int) -> int:
    if not -(N // 2) <= x <= N // 2:
        raise PlaintextRangeError(f"{x} does not fit the signed range of N")
    return x % N


def decode_signed(m: int, N: int, bound: Optional[int] = None) -> int:
    """Map a residue back to a signed integer: ``[0, N/2]`` is non-negative.

    With *bound*, residues whose signed value exceeds it in magnitude raise
    :class:`PlaintextRangeError` (overflow of the declared data range).
    """
    if not 0 <= m < N:
        raise PlaintextRangeError("residue outside [0, N)")
    x = m if m <= N // 2 else m - N
    if bound is not None and abs(x) > bound:
        raise PlaintextRangeError(f"decoded value {x} exceeds the bound {bound}")
    return x


def encrypt_signed(pk: PublicKey, x: int, rng=None) -> Ciphertext:
    return encrypt(pk, encode_signed(x, pk.N), rng)


def decrypt_signed(sk: PrivateKey, c: Ciphertext, bound: Optional[int] = None) -> int:
    return decode_signed(decrypt(sk, c), sk.N, bound)

"""Two-server protocols over FastPai ciphertexts and subtractive shares.

Every function here is the local computation of one role; nothing performs
I/O.  The transport layer moves the returned values between parties.

Roles: the data owner (DO) holds the private key; server S0 and server S1
each hold the public key, an :class:`AssistedTuple`, ciphertexts of uploaded
values and their own share of ``2*alpha*x``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Tuple

import gmpy2

from .errors import PlaintextRangeError, RecoveryError, SessionError
from .fastpai import (
    Ciphertext,
    PrivateKey,
    PublicKey,
    SecurityParams,
    add_ct,
    ct_pow,
    decode_signed,
    decrypt,
    default_rng,
    encode_signed,
    encrypt,
    sub_ct,
)
from .sharing import (
    Share,
    SharePair,
    ddlog,
    lift_share,
    mod_n,
    mod_theta,
    reduce_share_mod_theta,
    share_add,
    share_signed,
)


@dataclass(frozen=True)
class AssistedTuple:
    """Per-server bootstrap material: a share of 2*alpha and three fixed ciphertexts."""

    two_alpha_share: Share
    ct_two_alpha_inv: Ciphertext
    ct_zero: Ciphertext
    ct_one: Ciphertext

    @property
    def role(self) -> int:
        return self.two_alpha_share.role


@dataclass(frozen=True)
class UploadRecord:
    ct: Ciphertext
    share_2ax: Share


def two_alpha_bound(params: SecurityParams) -> int:
    return 1 << (params.l_sk_bits + 1)


def upload_bound(params: SecurityParams) -> int:
    # |2*alpha*x| < 2**(l_sk + 1) * 2**l
    return 1 << (params.data_bits + params.l_sk_bits + 1)


def do_init(sk: PrivateKey, pk: PublicKey, params: SecurityParams, rng=None) -> Tuple[AssistedTuple, AssistedTuple]:
    rng = rng or default_rng()
    ct_inv = encrypt(pk, sk.two_alpha_inv, rng)
    ct_zero = encrypt(pk, 0, rng)
    ct_one = encrypt(pk, 1, rng)
    pair = share_signed(sk.two_alpha, two_alpha_bound(params), params.kappa, rng)
    return (
        AssistedTuple(pair.s0, ct_inv, ct_zero, ct_one),
        AssistedTuple(pair.s1, ct_inv, ct_zero, ct_one),
    )


def do_upload(
    sk: PrivateKey, pk: PublicKey, x: int, params: SecurityParams, rng=None
) -> Tuple[UploadRecord, UploadRecord]:
    """Encrypt ``x`` for both servers and share ``2*alpha*x`` over the integers."""
    if abs(x) > 1 << params.data_bits:
        raise PlaintextRangeError(f"|{x}| exceeds 2**{params.data_bits}")
    rng = rng or default_rng()
    ct = encrypt(pk, encode_signed(x, pk.N), rng)
    pair = share_signed(sk.two_alpha * x, upload_bound(params), params.kappa, rng)
    return UploadRecord(ct, pair.s0), UploadRecord(ct, pair.s1)


def smul_local(ct_x: Ciphertext, share_2ay: Share) -> Share:
    """One server's half of the non-interactive multiplication.

    ``g = ct_x ** share`` turns the two servers' values into divisive shares of
    ``2*alpha*x*y``; ddlog turns them into subtractive shares mod N.  Negative
    integer shares exponentiate the inverse of ``ct_x``.
    """
    g = gmpy2.powmod(ct_x.value, share_2ay.value, ct_x.N_sq)
    return Share(ddlog(g, ct_x.N), share_2ay.role, mod_n(ct_x.N))


def do_recover_product(z: SharePair, sk: PrivateKey, data_bits: int) -> int:
    if z.s0.ctx != mod_n(sk.N) or z.s1.ctx != mod_n(sk.N):
        raise RecoveryError("product recovery expects mod-N shares under this key")
    v = (z.s1.value - z.s0.value) * sk.two_alpha_inv % sk.N
    try:
        return decode_signed(v, sk.N, bound=1 << (2 * data_bits))
    except PlaintextRangeError as exc:
        raise RecoveryError(str(exc)) from None


def do_recover_product_theta(z: SharePair, sk: PrivateKey, theta: int, data_bits: int) -> int:
    """Recover a non-negative product from mod-theta shares.

    Over the integers ``z1 - z0`` of the mod-N shares is either ``2*alpha*xy``
    or ``2*alpha*xy - N``; both candidates are tried and the unique one that is
    an exact multiple of ``2*alpha`` with quotient in ``[0, 2**data_bits]`` wins.
    """
    if z.s0.ctx != mod_theta(theta) or z.s1.ctx != mod_theta(theta):
        raise RecoveryError("theta recovery expects mod-theta shares")
    if theta >= sk.N:
        raise RecoveryError("theta must be smaller than N")
    base = (z.s1.value - z.s0.value) % theta
    found = set()
    for cand in (base, (base + sk.N % theta) % theta):
        q, rem = divmod(cand, sk.two_alpha)
        if rem == 0 and 0 <= q <= 1 << data_bits:
            found.add(q)
    if len(found) != 1:
        raise RecoveryError(f"unrecoverable theta shares ({len(found)} valid candidates)")
    return found.pop()


# ---------------------------------------------------------------- comparison

_session_ids = itertools.count(1)


@dataclass
class ScmpSession:
    """S0-private state of one comparison; erased by :func:`scmp_s0_finalize`."""

    session_id: int
    pi: Optional[int]
    r1: Optional[int]
    r2: Optional[int]
    D: Ciphertext
    z0_masked: int
    finished: bool = False


@dataclass(frozen=True)
class ScmpRound1:
    D: Ciphertext
    z0_masked: int


@dataclass(frozen=True)
class ScmpReply:
    """What S1 computes in round 2.  Only ``ct_mu0`` is sent; ``d`` stays on S1."""

    ct_mu0: Ciphertext
    d: int


@dataclass(frozen=True)
class ComparisonResult:
    """Encryption of 0 if x >= y, of 1 if x < y."""

    ct_mu: Ciphertext


def sample_blinding(N: int, sigma: int, rng) -> Tuple[int, int]:
    """``r1`` in ``{0,1}^sigma \\ {0}`` and ``r2 <= N/2`` with ``r1 + r2 > N/2``."""
    r1 = rng.randrange(1, 1 << sigma)
    hi = (N - 1) // 2  # r2 <= N/2 for odd N
    lo = max(0, (N + 1) // 2 - r1)  # r1 + r2 > N/2
    return r1, rng.randrange(lo, hi + 1)


def scmp_s0_round1(
    ct_x: Ciphertext,
    ct_y: Ciphertext,
    assisted_0: AssistedTuple,
    sigma: int,
    rng=None,
    pi: Optional[int] = None,
    session_id: Optional[int] = None,
) -> Tuple[ScmpRound1, ScmpSession]:
    rng = rng or default_rng()
    N = ct_x.N
    r1, r2 = sample_blinding(N, sigma, rng)
    if pi is None:
        pi = rng.randrange(2)
    elif pi not in (0, 1):
        raise ValueError("pi must be 0 or 1")
    if pi == 0:
        base = add_ct(sub_ct(ct_x, ct_y), assisted_0.ct_one)
    else:
        base = sub_ct(ct_y, ct_x)
    D = ct_pow(base, r1)
    z0 = ddlog(gmpy2.powmod(D.value, assisted_0.two_alpha_share.value, D.N_sq), N)
    # reduced mod N so the field fits the fixed |N| wire width; S1 works mod N anyway
    z0_masked = (z0 - r2) % N
    sid = next(_session_ids) if session_id is None else session_id
    return ScmpRound1(D, z0_masked), ScmpSession(sid, pi, r1, r2, D, z0_masked)


def scmp_s1_round(msg: ScmpRound1, assisted_1: AssistedTuple) -> ScmpReply:
    N = msg.D.N
    z1 = ddlog(gmpy2.powmod(msg.D.value, assisted_1.two_alpha_share.value, msg.D.N_sq), N)
    d = (z1 - msg.z0_masked) % N
    ct = assisted_1.ct_zero if 2 * d > N else assisted_1.ct_one
    return ScmpReply(ct, d)


def scmp_s0_finalize(
    session: ScmpSession,
    ct_mu0: Ciphertext,
    assisted_0: AssistedTuple,
    pk: Optional[PublicKey] = None,
    fresh_rerandomize: bool = False,
    rng=None,
) -> ComparisonResult:
    """Undo the coin flip and rerandomise.

    With ``fresh_rerandomize`` the stored encryption of zero is replaced by a
    fresh one (needs *pk*).
    """
    if session.finished:
        raise SessionError(f"comparison session {session.session_id} already finalised")
    if session.pi == 0:
        mu = ct_mu0
    else:
        mu = sub_ct(assisted_0.ct_one, ct_mu0)
    if fresh_rerandomize:
        if pk is None:
            raise ValueError("fresh rerandomisation needs the public key")
        zero = encrypt(pk, 0, rng)
    else:
        zero = assisted_0.ct_zero
    mu = add_ct(mu, zero)
    session.pi = session.r1 = session.r2 = None
    session.finished = True
    return ComparisonResult(mu)


def scmp(
    ct_x: Ciphertext,
    ct_y: Ciphertext,
    assisted: Tuple[AssistedTuple, AssistedTuple],
    sigma: int,
    rng=None,
    pi: Optional[int] = None,
) -> Tuple[ComparisonResult, int]:
    """Run both roles back to back; returns the result and S1's blinded difference."""
    msg, session = scmp_s0_round1(ct_x, ct_y, assisted[0], sigma, rng, pi=pi)
    reply = scmp_s1_round(msg, assisted[1])
    return scmp_s0_finalize(session, reply.ct_mu0, assisted[0]), reply.d


# ---------------------------------------------------------------- conversions


def s2c_local(share_2axy: Share, assisted: AssistedTuple, pk: PublicKey, rng=None) -> Ciphertext:
    """Strip the 2*alpha factor from this server's share and encrypt the result.

    The returned ciphertext is what this server sends to its peer.
    """
    if share_2axy.role != assisted.role:
        raise SessionError("share and assisted tuple belong to different roles")
    w = smul_local(assisted.ct_two_alpha_inv, share_2axy)
    return encrypt(pk, w.value, rng)


def s2c_finish(own_role: int, own: Ciphertext, peer: Ciphertext) -> Ciphertext:
    """Both servers compute ``[[w1]] * [[w0]]^-1``, giving the same ``[[x*y]]``."""
    c0, c1 = (own, peer) if own_role == 0 else (peer, own)
    return sub_ct(c1, c0)


def c2s_local(ct_mu: Ciphertext, assisted: AssistedTuple) -> Share:
    """This server's mod-N share of ``2*alpha*mu`` (S0 first forwards ``ct_mu`` to S1)."""
    return smul_local(ct_mu, assisted.two_alpha_share)


def s2c(z: SharePair, assisted: Tuple[AssistedTuple, AssistedTuple], pk: PublicKey, rng=None) -> Tuple[Ciphertext, Ciphertext]:
    """Run S2C for both roles; returns the ciphertext each server ends with."""
    c0 = s2c_local(z.s0, assisted[0], pk, rng)
    c1 = s2c_local(z.s1, assisted[1], pk, rng)
    return s2c_finish(0, c0, c1), s2c_finish(1, c1, c0)


def c2s(ct_mu: Ciphertext, assisted: Tuple[AssistedTuple, AssistedTuple]) -> SharePair:
    return SharePair(c2s_local(ct_mu, assisted[0]), c2s_local(ct_mu, assisted[1]))


def smul(ct_x: Ciphertext, shares: SharePair) -> SharePair:
    return SharePair(smul_local(ct_x, shares.s0), smul_local(ct_x, shares.s1))


# ---------------------------------------------------------------- composition


POLY_DEGREE = 5


def poly_plain(x: int) -> int:
    return sum(x**k for k in range(POLY_DEGREE + 1))


@dataclass
class Deployment:
    """Keys plus both assisted tuples, wired for in-process composition."""

    params: SecurityParams
    pk: PublicKey
    sk: PrivateKey
    assisted: Tuple[AssistedTuple, AssistedTuple]
    rng: object = field(default_factory=default_rng, repr=False)

    @classmethod
    def create(cls, params: SecurityParams, pk: PublicKey, sk: PrivateKey, rng=None) -> "Deployment":
        rng = rng or default_rng()
        return cls(params, pk, sk, do_init(sk, pk, params, rng), rng)

    def upload(self, x: int) -> Tuple[UploadRecord, UploadRecord]:
        return do_upload(self.sk, self.pk, x, self.params, self.rng)


def eval_poly_demo(x: int, dep: Deployment, path: str = "s2c") -> int:
    """Evaluate ``x^5 + x^4 + x^3 + x^2 + x + 1`` with four chained secure multiplications.

    ``path="s2c"`` re-encrypts every product and multiplies the new ciphertext
    by the uploaded shares of ``2*alpha*x``; ``path="theta"`` keeps products as
    mod-theta shares and uses them directly as the next exponent.
    """
    u0, u1 = dep.upload(x)
    ct_x = u0.ct
    x_shares = SharePair(u0.share_2ax, u1.share_2ax)
    if path == "s2c":
        acc = add_ct(ct_x, dep.assisted[0].ct_one)
        cur = ct_x
        for _ in range(POLY_DEGREE - 1):
            z = smul(cur, x_shares)
            cur, other = s2c(z, dep.assisted, dep.pk, dep.rng)
            if cur != other:
                raise RecoveryError("servers disagree on the re-encrypted product")
            acc = add_ct(acc, cur)
        return decode_signed(decrypt(dep.sk, acc), dep.pk.N)
    if path == "theta":
        theta = dep.params.theta
        ctx = mod_theta(theta)
        two_alpha = SharePair(dep.assisted[0].two_alpha_share, dep.assisted[1].two_alpha_share)
        acc = share_add(lift_share(x_shares, ctx), lift_share(two_alpha, ctx))
        cur: SharePair = x_shares
        for _ in range(POLY_DEGREE - 1):
            cur = reduce_share_mod_theta(smul(ct_x, cur), theta)
            acc = share_add(acc, cur)
        return do_recover_product_theta(acc, dep.sk, theta, dep.params.data_bits)
    raise ValueError(f"unknown path {path!r}")

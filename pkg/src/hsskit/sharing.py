"""Subtractive secret sharing and the divisive-to-subtractive share conversion.

A secret ``x`` is held as two shares with ``share1 - share0 = x``.  Shares
live in one of three arithmetic contexts: exact integers, residues mod N, or
residues mod theta.  Combining shares from different contexts is an error;
conversion is always explicit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import gmpy2

from .errors import DDLogError, ShareContextError

Z, MOD_N, MOD_THETA = "Z", "N", "theta"


@dataclass(frozen=True)
class ShareContext:
    kind: str
    modulus: Optional[int] = None

    def __post_init__(self):
        if self.kind == Z:
            if self.modulus is not None:
                raise ValueError("integer context has no modulus")
        elif self.kind in (MOD_N, MOD_THETA):
            if not self.modulus or self.modulus < 2:
                raise ValueError("modular context needs a modulus >= 2")
        else:
            raise ValueError(f"unknown share context {self.kind!r}")

    @property
    def modular(self) -> bool:
        return self.kind != Z

    def reduce(self, v: int) -> int:
        return v % self.modulus if self.modular else v


INTEGERS = ShareContext(Z)


def mod_n(N: int) -> ShareContext:
    return ShareContext(MOD_N, N)


def mod_theta(theta: int) -> ShareContext:
    return ShareContext(MOD_THETA, theta)


@dataclass(frozen=True)
class Share:
    value: int
    role: int
    ctx: ShareContext = INTEGERS

    def __post_init__(self):
        if self.role not in (0, 1):
            raise ValueError("role must be 0 or 1")
        if self.ctx.modular and not 0 <= self.value < self.ctx.modulus:
            raise ValueError("modular share value outside [0, modulus)")


@dataclass(frozen=True)
class SharePair:
    s0: Share
    s1: Share

    def __post_init__(self):
        if self.s0.role != 0 or self.s1.role != 1:
            raise ShareContextError("pair must be (role 0, role 1)")

    def __getitem__(self, role: int) -> Share:
        return (self.s0, self.s1)[role]


def share_signed(x: int, bound: int, kappa: int, rng) -> SharePair:
    """Split ``x in (-bound, bound)`` over the integers.

    Share 1 is uniform on ``[-bound*2**kappa + 1, bound*2**kappa - 1]`` and
    share 0 is ``share1 - x``.
    """
    if not -bound < x < bound:
        raise ValueError(f"secret {x} outside (-{bound}, {bound})")
    width = bound << kappa
    s1 = rng.randrange(-width + 1, width)
    return SharePair(Share(s1 - x, 0), Share(s1, 1))


def share_modular(x: int, ctx: ShareContext, rng) -> SharePair:
    """Uniform sharing of ``x`` inside a modular context (used by tests and tooling)."""
    if not ctx.modular:
        raise ShareContextError("share_modular needs a modular context")
    s1 = rng.randrange(ctx.modulus)
    return SharePair(Share((s1 - x) % ctx.modulus, 0, ctx), Share(s1, 1, ctx))


def _check_pair(pair: SharePair) -> ShareContext:
    if pair.s0.ctx != pair.s1.ctx:
        raise ShareContextError(f"pair mixes contexts {pair.s0.ctx} and {pair.s1.ctx}")
    return pair.s0.ctx


def reconstruct(pair: SharePair) -> int:
    ctx = _check_pair(pair)
    return ctx.reduce(pair.s1.value - pair.s0.value)


def _check_local(a: Share, b: Share) -> ShareContext:
    if a.ctx != b.ctx:
        raise ShareContextError(f"cannot combine {a.ctx.kind} and {b.ctx.kind} shares")
    if a.role != b.role:
        raise ShareContextError("cannot combine shares held by different roles")
    return a.ctx


ShareLike = Union[Share, SharePair]


def _lift2(op, a: ShareLike, b: ShareLike) -> ShareLike:
    if isinstance(a, SharePair) and isinstance(b, SharePair):
        return SharePair(op(a.s0, b.s0), op(a.s1, b.s1))
    if isinstance(a, Share) and isinstance(b, Share):
        return op(a, b)
    raise TypeError("operands must both be Share or both be SharePair")


def _add(a: Share, b: Share) -> Share:
    ctx = _check_local(a, b)
    return Share(ctx.reduce(a.value + b.value), a.role, ctx)


def _sub(a: Share, b: Share) -> Share:
    ctx = _check_local(a, b)
    return Share(ctx.reduce(a.value - b.value), a.role, ctx)


def share_add(a: ShareLike, b: ShareLike) -> ShareLike:
    return _lift2(_add, a, b)


def share_sub(a: ShareLike, b: ShareLike) -> ShareLike:
    return _lift2(_sub, a, b)


def share_scalar_mul(a: ShareLike, k: int) -> ShareLike:
    if isinstance(a, SharePair):
        return SharePair(share_scalar_mul(a.s0, k), share_scalar_mul(a.s1, k))
    return Share(a.ctx.reduce(a.value * k), a.role, a.ctx)


def lift_share(s: ShareLike, ctx: ShareContext) -> ShareLike:
    """Move an integer share into a modular context by reduction."""
    if isinstance(s, SharePair):
        return SharePair(lift_share(s.s0, ctx), lift_share(s.s1, ctx))
    if s.ctx == ctx:
        return s
    if s.ctx.kind != Z or not ctx.modular:
        raise ShareContextError(f"no implicit lift from {s.ctx.kind} to {ctx.kind}")
    return Share(s.value % ctx.modulus, s.role, ctx)


def ddlog(g: int, N: int) -> int:
    """Distributed discrete log: ``(g // N) * (g mod N)**-1 mod N``.

    For ``g1 = g0 * (1+N)**x mod N**2`` the outputs satisfy
    ``ddlog(g1) - ddlog(g0) = x (mod N)`` with no error probability.
    """
    h_hi, h = divmod(int(g), N)
    try:
        h_inv = gmpy2.invert(h, N)
    except ZeroDivisionError:
        raise DDLogError("g mod N is not invertible; not a valid divisive share") from None
    return int(h_hi * h_inv % N)


def reduce_share_mod_theta(s: ShareLike, theta: int) -> ShareLike:
    """Compress a mod-N share (or integer share) to a mod-theta share."""
    if isinstance(s, SharePair):
        return SharePair(reduce_share_mod_theta(s.s0, theta), reduce_share_mod_theta(s.s1, theta))
    if s.ctx.kind == MOD_N:
        if theta >= s.ctx.modulus:
            raise ValueError("theta must be smaller than N")
    elif s.ctx.kind != Z:
        raise ShareContextError(f"cannot reduce a {s.ctx.kind} share mod theta")
    return Share(s.value % theta, s.role, mod_theta(theta))

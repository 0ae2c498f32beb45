import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hsskit.errors import DDLogError, ShareContextError
from hsskit.sharing import (
    INTEGERS,
    MOD_THETA,
    Share,
    SharePair,
    ddlog,
    lift_share,
    mod_n,
    mod_theta,
    reconstruct,
    reduce_share_mod_theta,
    share_add,
    share_modular,
    share_scalar_mul,
    share_signed,
    share_sub,
)

import toy_oracle

N = 649
secrets_ = st.integers(min_value=-(2**20) + 1, max_value=2**20 - 1)


def sh(x, seed=0):
    return share_signed(x, 2**20, 8, random.Random(seed))


class TestSignedSharing:
    def test_zero_secret_gives_equal_shares(self):
        p = share_signed(0, 16, 4, random.Random(1))
        assert p.s0.value == p.s1.value

    @given(secrets_, st.integers(0, 2**32))
    def test_reconstructs(self, x, seed):
        assert reconstruct(sh(x, seed)) == x

    def test_share_one_interval(self):
        bound, kappa = 4, 3
        rng = random.Random(2)
        seen = {share_signed(1, bound, kappa, rng).s1.value for _ in range(4000)}
        assert min(seen) == -bound * 2**kappa + 1
        assert max(seen) == bound * 2**kappa - 1

    def test_wide_bound_magnitude(self):
        # 2*alpha*x case: l = 32, private key 512 bits
        bound = 1 << (32 + 513)
        p = share_signed(12345, bound, 128, random.Random(3))
        assert abs(p.s1.value) < 1 << (545 + 128)

    def test_secret_out_of_range(self):
        with pytest.raises(ValueError):
            share_signed(16, 16, 4, random.Random(0))


class TestReconstruct:
    def test_integer_pair(self):
        assert reconstruct(SharePair(Share(5, 0), Share(5, 1))) == 0

    def test_mod_n_pair(self):
        ctx = mod_n(N)
        assert reconstruct(SharePair(Share(640, 0, ctx), Share(3, 1, ctx))) == 12

    def test_mixed_contexts(self):
        with pytest.raises(ShareContextError):
            reconstruct(SharePair(Share(5, 0), Share(5, 1, mod_n(N))))

    def test_roles_enforced(self):
        with pytest.raises(ShareContextError):
            SharePair(Share(1, 1), Share(1, 1))
        with pytest.raises(ValueError):
            Share(1, 2)

    def test_modular_range_enforced(self):
        with pytest.raises(ValueError):
            Share(649, 0, mod_n(N))


class TestLocalOps:
    def test_examples(self):
        assert reconstruct(share_add(sh(3, 1), sh(4, 2))) == 7
        assert reconstruct(share_scalar_mul(sh(3, 1), 4)) == 12
        assert reconstruct(share_sub(sh(9, 1), sh(9, 2))) == 0

    @given(secrets_, secrets_, st.integers(-1000, 1000))
    def test_linear(self, x, y, k):
        a, b = sh(x, 1), sh(y, 2)
        assert reconstruct(share_add(a, b)) == x + y
        assert reconstruct(share_sub(a, b)) == x - y
        assert reconstruct(share_scalar_mul(a, k)) == k * x

    @given(st.integers(0, N - 1), st.integers(0, N - 1))
    def test_modular(self, x, y):
        ctx = mod_n(N)
        a, b = share_modular(x, ctx, random.Random(x)), share_modular(y, ctx, random.Random(y + 1))
        assert reconstruct(share_add(a, b)) == (x + y) % N

    def test_context_mixing_rejected(self):
        a = sh(3)
        b = share_modular(4, mod_n(N), random.Random(0))
        with pytest.raises(ShareContextError):
            share_add(a, b)
        with pytest.raises(ShareContextError):
            share_add(a.s0, a.s1)

    def test_pair_and_share_not_mixed(self):
        with pytest.raises(TypeError):
            share_add(sh(1), sh(1).s0)

    def test_lift(self):
        p = lift_share(sh(-5), mod_n(N))
        assert reconstruct(p) == N - 5
        with pytest.raises(ShareContextError):
            lift_share(p, mod_theta(64))
        with pytest.raises(ShareContextError):
            share_modular(1, INTEGERS, random.Random(0))


class TestDDLog:
    def test_trivial_points(self):
        assert ddlog(1, N) == 0
        assert ddlog(1 + N, N) == 1

    def test_toy_example(self):
        g0 = 100
        g1 = g0 * pow(1 + N, 5, N * N) % (N * N)
        assert (ddlog(g1, N) - ddlog(g0, N)) % N == 5

    @given(st.integers(1, N * N - 1), st.integers(0, N - 1))
    def test_perfect_correctness(self, g0, x):
        if g0 % 11 == 0 or g0 % 59 == 0:
            return
        g1 = g0 * pow(1 + N, x, N * N) % (N * N)
        assert (ddlog(g1, N) - ddlog(g0, N)) % N == x
        assert ddlog(g0, N) == toy_oracle.ddlog(g0)

    def test_non_invertible(self):
        with pytest.raises(DDLogError):
            ddlog(11, N)


class TestTheta:
    def test_small_value_unchanged(self):
        s = Share(37, 1, mod_n(N))
        out = reduce_share_mod_theta(s, 64)
        assert out.value == 37 and out.ctx.kind == MOD_THETA

    def test_integer_shares_allowed(self):
        assert reduce_share_mod_theta(Share(-1, 0), 64).value == 63

    def test_theta_must_be_below_n(self):
        with pytest.raises(ValueError):
            reduce_share_mod_theta(Share(1, 0, mod_n(N)), 1024)

    def test_theta_shares_cannot_be_reduced_again(self):
        with pytest.raises(ShareContextError):
            reduce_share_mod_theta(Share(1, 0, mod_theta(64)), 32)

    def test_no_wrap_recovers(self):
        # z1 >= z0 over the integers before reduction
        ctx = mod_n(N)
        pair = SharePair(Share(100, 0, ctx), Share(130, 1, ctx))
        assert reconstruct(reduce_share_mod_theta(pair, 64)) == 30

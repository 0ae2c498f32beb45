import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsskit.errors import (
    DecryptionError,
    GenerationTimeout,
    ModulusMismatchError,
    ParameterError,
    PlaintextRangeError,
)
from hsskit.fastpai import (
    Ciphertext,
    ParamSet,
    SecurityParams,
    add_ct,
    check_paramset,
    decode_signed,
    decrypt,
    decrypt_signed,
    encode_signed,
    encrypt,
    encrypt_signed,
    keygen_from_paramset,
    ngen,
    paramset_from_primes,
    scalar_mul_ct,
    sub_ct,
    toy_keypair,
)

from toy_oracle import enc as oracle_enc


class TestParams:
    def test_toy_paramset_invariants(self):
        ps = paramset_from_primes(11, 59, 5, 29)
        assert ps.N == 649
        assert ps.alpha == 145
        assert ps.beta == 1
        assert (ps.P - 1) % ps.p == 0 and (ps.Q - 1) % ps.q == 0
        assert ps.P % 4 == 3 and ps.Q % 4 == 3
        assert math.gcd(ps.P - 1, ps.Q - 1) == 2

    def test_rejects_non_invertible_two_alpha(self):
        # q = 11 divides N = 253
        with pytest.raises(ParameterError, match="2\\*alpha"):
            paramset_from_primes(11, 23, 5, 11)

    @pytest.mark.parametrize(
        "primes",
        [(13, 59, 5, 29), (11, 59, 3, 29), (11, 59, 5, 5), (11, 59, 15, 29)],
    )
    def test_rejects_broken_structure(self, primes):
        with pytest.raises(ParameterError):
            paramset_from_primes(*primes)

    def test_range_invariant_is_checked(self):
        with pytest.raises(ParameterError):
            SecurityParams(kappa=128, n_bits=3072, sigma=3000)
        assert SecurityParams().range_ok

    def test_theta(self):
        assert SecurityParams().theta == 1 << 641

    def test_unknown_kappa(self):
        with pytest.raises(ParameterError):
            SecurityParams.for_kappa(100)

    def test_ngen_sizes(self, keys, params):
        # session keys come from ngen at kappa = 128
        pk, sk = keys
        assert pk.N.bit_length() == 3072
        assert sk.alpha.bit_length() in (511, 512)

    def test_ngen_small(self):
        params = SecurityParams(kappa=16, n_bits=512, sigma=16, data_bits=8)
        ps = ngen(params, random.Random(3))
        check_paramset(ps)
        assert ps.N.bit_length() == 512
        assert ps.p.bit_length() == ps.q.bit_length() == 32

    def test_ngen_timeout(self):
        params = SecurityParams(kappa=16, n_bits=512, sigma=16, data_bits=8)
        with pytest.raises(GenerationTimeout):
            ngen(params, random.Random(3), max_attempts=0)

    def test_toy_params_rejected_by_ngen(self, toy_params):
        with pytest.raises(ParameterError):
            ngen(toy_params)


class TestToyKeys:
    def test_values(self, toy_keys):
        pk, sk = toy_keys
        assert pk.h == 645
        assert sk.two_alpha == 290
        assert sk.two_alpha_inv == 47
        assert 290 * 47 % 649 == 1

    def test_encrypt_matches_formula(self, toy_keys):
        pk, _ = toy_keys
        for m in (0, 1, 7, 648):
            for r in (0, 1, 5, 255):
                assert encrypt(pk, m, r=r).value == oracle_enc(m, r)
                assert encrypt(pk, m, r=r, use_table=False).value == oracle_enc(m, r)

    def test_roundtrip_seven(self, toy_keys):
        pk, sk = toy_keys
        assert decrypt(sk, encrypt(pk, 7)) == 7

    def test_encrypt_zero_is_randomised(self, toy_keys):
        pk, sk = toy_keys
        rng = random.Random(1)
        cts = {encrypt(pk, 0, rng).value for _ in range(20)}
        assert all(decrypt(sk, Ciphertext(c, 649)) == 0 for c in cts)
        assert len(cts) > 1

    def test_homomorphisms(self, toy_keys):
        pk, sk = toy_keys
        c3, c4, c5 = (encrypt(pk, m) for m in (3, 4, 5))
        assert decrypt(sk, add_ct(c3, c4)) == 7
        assert decrypt(sk, sub_ct(c5, c5)) == 0
        assert decrypt(sk, scalar_mul_ct(c3, 4)) == 12
        assert decrypt(sk, add_ct(c5, encrypt(pk, 0))) == 5

    @pytest.mark.parametrize("m", [1, 2, 100, 648])
    def test_power_n_minus_one_negates(self, toy_keys, m):
        pk, sk = toy_keys
        assert decrypt(sk, scalar_mul_ct(encrypt(pk, m), pk.N - 1)) == pk.N - m

    def test_out_of_range_plaintext(self, toy_keys):
        pk, _ = toy_keys
        with pytest.raises(PlaintextRangeError):
            encrypt(pk, 649)
        with pytest.raises(PlaintextRangeError):
            encrypt(pk, -1)

    def test_corrupted_ciphertext(self, toy_keys):
        _, sk = toy_keys
        # every unit mod 649 has order dividing 290, so only a non-unit fails the check
        with pytest.raises(DecryptionError):
            decrypt(sk, Ciphertext(11, 649))

    def test_corrupted_ciphertext_large(self, keys):
        pk, sk = keys
        with pytest.raises(DecryptionError):
            decrypt(sk, Ciphertext(2, pk.N))

    def test_modulus_mismatch(self, toy_keys, keys):
        pk, _ = toy_keys
        big_pk, _ = keys
        with pytest.raises(ModulusMismatchError):
            add_ct(encrypt(pk, 1), encrypt(big_pk, 1))

    def test_other_y_gives_other_h(self):
        pk, sk = toy_keypair(y=3)
        assert pk.h == (-9) % 649
        assert decrypt(sk, encrypt(pk, 77)) == 77


class TestSigned:
    def test_examples(self):
        assert encode_signed(-1, 649) == 648
        assert decode_signed(648, 649) == -1
        assert encode_signed(0, 649) == 0

    def test_bounds(self):
        assert decode_signed(324, 649) == 324
        assert decode_signed(325, 649) == -324
        with pytest.raises(PlaintextRangeError):
            encode_signed(325, 649)
        with pytest.raises(PlaintextRangeError):
            decode_signed(600, 649, bound=10)

    @given(st.integers(min_value=-324, max_value=324))
    def test_roundtrip(self, x):
        assert decode_signed(encode_signed(x, 649), 649) == x

    @given(st.integers(min_value=-324, max_value=324), st.integers(min_value=0, max_value=255))
    @settings(max_examples=100)
    def test_signed_encryption(self, toy_keys, x, r):
        pk, sk = toy_keys
        assert decrypt_signed(sk, encrypt_signed(pk, x, random.Random(r))) == x


def test_large_roundtrip(keys):
    pk, sk = keys
    rng = random.Random(5)
    for x in (0, 1, -1, 2**32, -(2**32), pk.N // 2):
        assert decrypt_signed(sk, encrypt_signed(pk, x, rng)) == x


def test_keygen_from_paramset_rejects_bad_y():
    ps = ParamSet(649, 11, 59, 5, 29)
    with pytest.raises(ParameterError):
        keygen_from_paramset(ps, 8, y=11)

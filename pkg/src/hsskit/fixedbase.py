"""Fixed-base windowed exponentiation.

The table stores ``base ** (j << (w * i)) mod modulus`` for every window
position ``i`` and digit ``j``; an exponentiation is then one modular
multiplication per window.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import gmpy2

from .errors import TableCoverageError

DEFAULT_WINDOW = 5


@dataclass(frozen=True)
class FixedBaseTable:
    base: int
    modulus: int
    exp_bits: int
    window: int = DEFAULT_WINDOW
    rows: tuple = field(default=(), repr=False, compare=False)

    @classmethod
    def build(cls, base: int, modulus: int, exp_bits: int, window: int = DEFAULT_WINDOW) -> "FixedBaseTable":
        if window < 1 or exp_bits < 1:
            raise ValueError("window and exp_bits must be positive")
        m = gmpy2.mpz(modulus)
        n_windows = -(-exp_bits // window)
        rows = []
        row_base = gmpy2.mpz(base) % m
        for _ in range(n_windows):
            row = [gmpy2.mpz(1)]
            for _ in range((1 << window) - 1):
                row.append(row[-1] * row_base % m)
            rows.append(tuple(row))
            # next row's base is row_base ** (2 ** window)
            row_base = row[-1] * row_base % m
        return cls(int(base) % modulus, int(modulus), exp_bits, window, tuple(rows))

    @property
    def n_windows(self) -> int:
        return len(self.rows)

    def multiplications(self, exponent: int) -> int:
        """Number of table-lookup multiplications ``pow`` performs for *exponent*."""
        return -(-max(exponent.bit_length(), 1) // self.window) if exponent else 0

    def pow(self, exponent: int) -> int:
        if exponent < 0:
            raise TableCoverageError("negative exponents are not covered by the table")
        if exponent.bit_length() > self.n_windows * self.window:
            raise TableCoverageError(
                f"exponent has {exponent.bit_length()} bits, table covers {self.n_windows * self.window}"
            )
        mask = (1 << self.window) - 1
        acc = gmpy2.mpz(1)
        m = self.modulus
        i = 0
        while exponent:
            digit = exponent & mask
            if digit:
                acc = acc * self.rows[i][digit] % m
            exponent >>= self.window
            i += 1
        return int(acc % m)


def fixed_base_pow(table: FixedBaseTable, exponent: int) -> int:
    return table.pow(exponent)

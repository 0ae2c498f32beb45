"""Benchmark runs over the twin-server harness.

Each iteration draws fresh random inputs, runs one operation end to end and
checks the decrypted or recovered result against plain integer arithmetic.
Wall time covers the operation itself (both servers plus message passing),
not uploads or result recovery; the polynomial includes its single upload.
Payload bits come from the endpoints' meters for the timed operation only.
"""

from __future__ import annotations

import csv
import io
import json
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from .fastpai import PrivateKey, PublicKey, SecurityParams
from .protocols import AssistedTuple, poly_plain
from .transport import DataOwner, TOPOLOGIES, inter_server, meter_diff

# reference single-thread timings (ms) at |N| = 3072, for the comparison column only
REFERENCE_MS = {
    "smul": 6.3,
    "add": 0.01,
    "sub": 0.06,
    "scalar": 0.08,
    "poly": 24.2,
    "scmp": 13.9,
}
REFERENCE_SCMP_KB = 1.874

OPS = ("smul", "scmp", "s2c", "c2s", "poly", "add", "sub", "scalar")

LINK_FIELDS = ("S0->S1", "S1->S0", "S0->DO", "S1->DO", "DO->S0", "DO->S1")


@dataclass
class BenchReport:
    op: str
    n_bits: int
    data_bits: int
    kappa: int
    sigma: int
    transport: str
    iterations: int
    passes: int
    mean_ms: float
    median_ms: float
    p95_ms: float
    bits: Dict[str, int]
    inter_server_bits: int
    inter_server_bytes: int
    model_mults: Optional[float]
    reference_ms: Optional[float]
    reference_kb: Optional[float]
    failures: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.passes == self.iterations

    def row(self) -> Dict[str, object]:
        d = asdict(self)
        bits = d.pop("bits")
        d.pop("failures")
        d.update({f"bits_{k.replace('->', '_').lower()}": bits.get(k, 0) for k in LINK_FIELDS})
        return d


FIELDS = list(BenchReport.__dataclass_fields__)
CSV_FIELDS = [f for f in FIELDS if f not in ("bits", "failures")] + [
    f"bits_{k.replace('->', '_').lower()}" for k in LINK_FIELDS
]


def model_mults(op: str, params: SecurityParams, sk: PrivateKey) -> Optional[float]:
    """Modular-multiplication estimate per server (square-and-multiply at 1.5 per exponent bit)."""
    a = sk.two_alpha.bit_length()
    k, l, s, n = params.kappa, params.data_bits, params.sigma, sk.N.bit_length()
    if op == "smul":
        return 1.5 * (a + l + k)
    if op == "scmp":
        return 1.5 * (s + a + k)  # S0, the busier role
    if op == "s2c":
        return 1.5 * n + -(-4 * k // 5)  # with the fixed-base table
    if op == "c2s":
        return 1.5 * (a + k)
    if op == "poly":
        return 4 * 1.5 * (a + l + k)
    return None


def percentile(xs: List[float], q: float) -> float:
    ys = sorted(xs)
    if not ys:
        return 0.0
    idx = max(0, min(len(ys) - 1, int(round(q * (len(ys) - 1)))))
    return ys[idx]


def _rand(do: DataOwner, bits: int) -> int:
    return do.rng.randrange(-(1 << bits) + 1, 1 << bits)


def _iteration(op: str, do: DataOwner, i: int, path: str) -> Tuple[Callable[[], None], Callable[[], bool]]:
    """Set up inputs for one iteration; returns (timed action, correctness check)."""
    l = do.params.data_bits
    if op == "poly":
        x = i % 4
        box = {}
        return (lambda: box.update(v=do.poly(x, path))), (lambda: box["v"] == poly_plain(x))
    x, y = _rand(do, l), _rand(do, l)
    do.upload("x", x)
    do.upload("y", y)
    if op == "smul":
        return (lambda: do.smul("x", "y", "z")), (lambda: do.recover_product("z") == x * y)
    if op == "scmp":
        return (lambda: do.scmp("x", "y", "mu")), (lambda: do.decrypt_result("mu") == int(x < y))
    if op == "s2c":
        do.smul("x", "y", "z")
        return (lambda: do.s2c("z", "c")), (lambda: do.decrypt_result("c") == x * y)
    if op == "c2s":
        do.scmp("x", "y", "mu")
        return (lambda: do.c2s("mu", "m")), (lambda: do.recover_product("m") == int(x < y))
    if op == "add":
        return (lambda: do.ct_add("x", "y", "r")), (lambda: do.decrypt_result("r") == x + y)
    if op == "sub":
        return (lambda: do.run(("S0", "S1"), "ct_sub", a="x", b="y", out="r")), (lambda: do.decrypt_result("r") == x - y)
    if op == "scalar":
        k = _rand(do, l)
        return (lambda: do.run(("S0", "S1"), "ct_scalar", a="x", k=k, out="r")), (lambda: do.decrypt_result("r") == x * k)
    raise ValueError(f"unknown op {op!r}")


def run_bench(
    op: str,
    pk: PublicKey,
    sk: PrivateKey,
    params: SecurityParams,
    iterations: int = 100,
    transport: str = "inproc",
    seed=None,
    assisted: Optional[Tuple[AssistedTuple, AssistedTuple]] = None,
    path: str = "s2c",
) -> BenchReport:
    if op not in OPS:
        raise ValueError(f"unknown op {op!r}; choose from {', '.join(OPS)}")
    if iterations < 1:
        raise ValueError("iterations must be positive")
    times: List[float] = []
    passes = 0
    failures: List[str] = []
    bits: Dict[str, int] = {}
    with TOPOLOGIES[transport](pk, sk, params, seed=seed, assisted=assisted) as cluster:
        do = cluster.owner
        for i in range(iterations):
            action, check = _iteration(op, do, i, path)
            before = do.meter_snapshot()
            t0 = time.perf_counter()
            action()
            times.append((time.perf_counter() - t0) * 1e3)
            diff = meter_diff(do.meter_snapshot(), before)
            if i == 0:
                bits = {k: diff[k] for k in LINK_FIELDS}
            elif inter_server(diff) != bits["S0->S1"] + bits["S1->S0"]:
                failures.append(f"iteration {i}: inter-server bits changed")
                continue
            if check():
                passes += 1
            else:
                failures.append(f"iteration {i}: wrong result")
    isb = bits["S0->S1"] + bits["S1->S0"]
    return BenchReport(
        op=op,
        n_bits=pk.N.bit_length(),
        data_bits=params.data_bits,
        kappa=params.kappa,
        sigma=params.sigma,
        transport=transport,
        iterations=iterations,
        passes=passes,
        mean_ms=round(statistics.fmean(times), 4),
        median_ms=round(statistics.median(times), 4),
        p95_ms=round(percentile(times, 0.95), 4),
        bits=bits,
        inter_server_bits=isb,
        inter_server_bytes=isb // 8,
        model_mults=model_mults(op, params, sk),
        reference_ms=REFERENCE_MS.get(op),
        reference_kb=REFERENCE_SCMP_KB if op == "scmp" else None,
        failures=failures,
    )


def to_json(reports: List[BenchReport]) -> str:
    return json.dumps([r.row() for r in reports], indent=2, sort_keys=False)


def to_csv(reports: List[BenchReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()


def comparison_lines(r: BenchReport) -> List[str]:
    """Human-readable comparison against the reference figures (not a pass/fail gate)."""
    out = [f"{r.op}: mean {r.mean_ms:.3f} ms over {r.iterations} runs, {r.passes}/{r.iterations} correct"]
    if r.reference_ms is not None:
        out.append(f"  reference runtime {r.reference_ms} ms (ratio {r.mean_ms / r.reference_ms:.2f}x, hardware-dependent)")
    out.append(f"  inter-server payload {r.inter_server_bits} bits = {r.inter_server_bytes} bytes")
    if r.reference_kb is not None:
        kib = r.inter_server_bytes / 1024
        out.append(f"  reference {r.reference_kb} KB; measured {kib:.3f} KiB ({abs(kib - r.reference_kb) / r.reference_kb:.2%} off)")
    if r.model_mults is not None:
        out.append(f"  model: ~{r.model_mults:.0f} modular multiplications per server")
    return out

"""``hsskit`` command line: keygen, upload, run, bench, serve.

Keystore layout (one directory)::

    pk.mrse   public key and parameters        (distributable)
    sk.mrse   private key                      (data owner only)
    s0.mrse   server bundle for S0             (pk, params, assisted tuple)
    s1.mrse   server bundle for S1

Exit status is 0 only when every correctness check passed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import random
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import bench as benchmod
from .errors import HSSError
from .fastpai import MODULUS_BITS, SecurityParams, default_rng, keygen, toy_keypair
from .protocols import do_init, do_upload, poly_plain
from .transport import S0, S1, TOPOLOGIES, connect_remote, inter_server, meter_diff, serve
from .wire import (
    dump_private_key,
    dump_public_key,
    dump_server_bundle,
    dump_upload,
    load_private_key,
    load_public_key,
    load_server_bundle,
)

log = logging.getLogger("hsskit")

PK_FILE, SK_FILE = "pk.mrse", "sk.mrse"
BUNDLE_FILES = {S0: "s0.mrse", S1: "s1.mrse"}

RUN_OPS = ("smul", "scmp", "s2c", "c2s", "poly")


def _rng(seed):
    return default_rng() if seed is None else random.Random(f"{seed}:keys")


def _params(args, base: Optional[SecurityParams] = None) -> SecurityParams:
    """Apply --l / --sigma overrides; SecurityParams re-validates the range invariant."""
    if base is None:
        if args.toy:
            base = SecurityParams.toy_params()
        else:
            base = SecurityParams.for_kappa(args.kappa)
    changes = {}
    if getattr(args, "l", None) is not None:
        changes["data_bits"] = args.l
    if getattr(args, "sigma", None) is not None:
        changes["sigma"] = args.sigma
    return dataclasses.replace(base, **changes) if changes else base


def _load_keys(args):
    d = Path(args.keys)
    try:
        pk, params = load_public_key((d / PK_FILE).read_bytes())
        sk = load_private_key((d / SK_FILE).read_bytes())
        assisted = tuple(load_server_bundle((d / BUNDLE_FILES[r]).read_bytes())[2] for r in (S0, S1))
    except FileNotFoundError as exc:
        raise SystemExit(f"hsskit: keystore incomplete ({exc.filename}); run 'hsskit keygen --out {d}' first")
    return pk, sk, _params(args, params), assisted


# ------------------------------------------------------------------ commands


def cmd_keygen(args) -> int:
    params = _params(args)
    rng = _rng(args.seed)
    if params.toy:
        pk, sk = toy_keypair()
    else:
        pk, sk = keygen(params, rng)
    assisted = do_init(sk, pk, params, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / PK_FILE).write_bytes(dump_public_key(pk, params))
    (out / SK_FILE).write_bytes(dump_private_key(sk))
    for i, r in enumerate((S0, S1)):
        (out / BUNDLE_FILES[r]).write_bytes(dump_server_bundle(pk, params, assisted[i]))
    print(f"wrote keystore to {out} (|N| = {pk.N.bit_length()} bits, kappa = {params.kappa})")
    return 0


def cmd_upload(args) -> int:
    pk, sk, params, _ = _load_keys(args)
    recs = do_upload(sk, pk, args.x, params, _rng(args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for r, rec in zip((S0, S1), recs):
        path = out / f"{args.name}.{r.lower()}.mrse"
        path.write_bytes(dump_upload(rec))
        print(f"wrote {path}")
    return 0


def _run_script(op: str, x: int, y: int, path: str):
    def script(do):
        if op == "poly":
            got = do.poly(x, path)
            return got, poly_plain(x), None
        do.upload("x", x)
        do.upload("y", y)
        if op == "s2c":
            do.smul("x", "y", "z")
        if op == "c2s":
            do.scmp("x", "y", "mu")
        before = do.meter_snapshot()
        if op == "smul":
            do.smul("x", "y", "z")
        elif op == "scmp":
            do.scmp("x", "y", "mu")
        elif op == "s2c":
            do.s2c("z", "c")
        else:
            do.c2s("mu", "m")
        diff = meter_diff(do.meter_snapshot(), before)
        if op == "smul":
            got, want = do.recover_product("z"), x * y
        elif op == "scmp":
            got, want = do.decrypt_result("mu"), int(x < y)
        elif op == "s2c":
            got, want = do.decrypt_result("c"), x * y
        else:
            got, want = do.recover_product("m"), int(x < y)
        return got, want, diff

    return script


def cmd_run(args) -> int:
    pk, sk, params, assisted = _load_keys(args)
    script = _run_script(args.op, args.x, args.y, args.path)
    if args.peer:
        if len(args.peer) != 2:
            raise SystemExit("hsskit run: pass --peer twice (S0 address, then S1 address)")
        with connect_remote(pk, sk, params, args.peer[0], args.peer[1], seed=args.seed) as cluster:
            got, want, diff = script(cluster.owner)
    else:
        with TOPOLOGIES[args.transport](pk, sk, params, seed=args.seed, assisted=assisted) as cluster:
            got, want, diff = script(cluster.owner)
    ok = got == want
    report = {"op": args.op, "x": args.x, "y": args.y, "result": got, "expected": want, "ok": ok}
    if diff is not None:
        report["bits"] = {k: v for k, v in diff.items() if "->" in k and not k.startswith("msgs:")}
        report["inter_server_bits"] = inter_server(diff)
    if args.format == "json":
        print(json.dumps(report, sort_keys=True))
    else:
        label = "mu" if args.op in ("scmp", "c2s") else "result"
        print(f"{label} = {got} ({'ok' if ok else f'MISMATCH, expected {want}'})")
        for k, v in report.get("bits", {}).items():
            print(f"  {k}: {v} bits")
    return 0 if ok else 1


def cmd_bench(args) -> int:
    pk, sk, params, assisted = _load_keys(args)
    ops = benchmod.OPS if args.op == ["all"] else args.op
    reports = [
        benchmod.run_bench(op, pk, sk, params, args.iters, args.transport, args.seed, assisted, args.path)
        for op in ops
    ]
    text = benchmod.to_json(reports) if args.format == "json" else benchmod.to_csv(reports)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    for r in reports:
        for line in benchmod.comparison_lines(r):
            print(line, file=sys.stderr)
        for f in r.failures:
            print(f"  FAIL {f}", file=sys.stderr)
    return 0 if all(r.ok for r in reports) else 1


def cmd_serve(args) -> int:
    pk, params, assisted = load_server_bundle((Path(args.keys) / BUNDLE_FILES[args.role]).read_bytes())
    params = _params(args, params)
    if args.role == S0 and not args.peer:
        raise SystemExit("hsskit serve: S0 needs --peer <S1 address>")
    server = serve(args.role, args.listen, pk, params, assisted, peer=args.peer[0] if args.peer else None, seed=args.seed)
    print(f"{args.role} listening on {server.address}", flush=True)
    try:
        server.thread.join()
    except KeyboardInterrupt:
        server.close()
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hsskit", description="Two-server homomorphic secret sharing toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, keys=True):
        sp.add_argument("--seed", type=int, default=None, help="seed for reproducible randomness")
        sp.add_argument("--l", type=int, default=None, help="data bit length (default 32)")
        sp.add_argument("--sigma", type=int, default=None, help="comparison blinding length")
        if keys:
            sp.add_argument("--keys", default="keys", help="keystore directory")

    kg = sub.add_parser("keygen", help="generate keys and server bundles")
    kg.add_argument("--kappa", type=int, default=128, choices=sorted(MODULUS_BITS))
    kg.add_argument("--toy", action="store_true", help="fixed N = 649 fixture keys")
    kg.add_argument("--out", default="keys")
    common(kg, keys=False)
    kg.set_defaults(func=cmd_keygen)

    up = sub.add_parser("upload", help="encrypt and share a value for both servers")
    up.add_argument("--x", type=int, required=True)
    up.add_argument("--name", default="x")
    up.add_argument("--out", default="uploads")
    common(up)
    up.set_defaults(func=cmd_upload)

    rn = sub.add_parser("run", help="run one protocol and check the result")
    rn.add_argument("--op", choices=RUN_OPS, required=True)
    rn.add_argument("--x", type=int, required=True)
    rn.add_argument("--y", type=int, default=0)
    rn.add_argument("--path", choices=("s2c", "theta"), default="s2c", help="poly multiplication chaining")
    rn.add_argument("--transport", choices=sorted(TOPOLOGIES), default="inproc")
    rn.add_argument("--peer", action="append", help="remote server address (S0 then S1)")
    rn.add_argument("--format", choices=("text", "json"), default="text")
    common(rn)
    rn.set_defaults(func=cmd_run)

    bn = sub.add_parser("bench", help="benchmark operations")
    bn.add_argument("--op", action="append", choices=benchmod.OPS + ("all",), required=True)
    bn.add_argument("--iters", type=int, default=100)
    bn.add_argument("--path", choices=("s2c", "theta"), default="s2c")
    bn.add_argument("--transport", choices=sorted(TOPOLOGIES), default="inproc")
    bn.add_argument("--format", choices=("csv", "json"), default="csv")
    bn.add_argument("--out", default=None, help="write the report here instead of stdout")
    common(bn)
    bn.set_defaults(func=cmd_bench)

    sv = sub.add_parser("serve", help="run S0 or S1 over TCP")
    sv.add_argument("--role", choices=(S0, S1), required=True)
    sv.add_argument("--listen", required=True, help="host:port")
    sv.add_argument("--peer", action="append", help="S1 address (S0 only)")
    common(sv)
    sv.set_defaults(func=cmd_serve)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if getattr(args, "op", None) and args.command == "bench" and "all" in args.op:
        args.op = ["all"]
    try:
        return args.func(args)
    except (HSSError, ValueError, OSError) as exc:
        print(f"hsskit {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

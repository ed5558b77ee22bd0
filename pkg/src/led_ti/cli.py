"""led-ti command line.

Exit codes: 0 success / no evidence of leakage, 1 negative analysis result
(leak found, property failed, criterion failed), 2 usage or format error.
All randomness flows from --seed, whose default is fixed.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from . import led, sharing
from .datapath import Datapath, run_protected, run_unprotected
from .power import (
    DEFAULT_FIXED_PLAINTEXT,
    DEFAULT_KEY,
    DEFAULT_SEED,
    DEFAULT_SIGMA,
    DESIGNS,
    LeakageConfig,
    LeakageModel,
    iter_trace_batches,
)
from .rng import SplitMix64
from .tvla import DEFAULT_THRESHOLD, TraceFormatError, TvlaError, tvla_file, write_trace_stream


class UsageError(Exception):
    pass


def parse_hex(text: str, digits: int, name: str) -> int:
    body = text[2:] if text.lower().startswith("0x") else text
    if len(body) != digits:
        raise UsageError(f"{name} must be exactly {digits} hex digits, got {len(body)}")
    try:
        return int(body, 16)
    except ValueError:
        raise UsageError(f"{name} is not valid hex: {text!r}") from None


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= v < 1 << 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def cmd_encrypt(args) -> int:
    pt = parse_hex(args.plaintext, 16, "plaintext")
    key = parse_hex(args.key, 32, "key")
    if args.impl == "reference":
        ct = led.encrypt_block(pt, key)
        cycles = None
    else:
        dp = Datapath(protected=args.impl == "ti")
        dp.load_inputs(pt, key, SplitMix64(args.seed) if args.impl == "ti" else None)
        ct = dp.run_batch()[0]
        cycles = dp.cycle
    print(f"{int(ct):016x}")
    if args.verbose and cycles is not None:
        print(f"cycles: {cycles}")
    return 0


def cmd_verify_ti(args) -> int:
    try:
        d = sharing.load_decomposition(args.tables, verify=False)
    except sharing.DecompositionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    reports = sharing.verify_all(d)
    for rep in reports:
        print(rep.summary())
        for cex in rep.counterexamples:
            print(f"  counterexample: {cex}")
    return 0 if all(r.passed for r in reports) else 1


def cmd_simulate(args) -> int:
    pt = parse_hex(args.plaintext, 16, "plaintext")
    key = parse_hex(args.key, 32, "key")
    if DESIGNS[args.design]:
        ct, log = run_protected(pt, key, args.seed)
    else:
        ct, log = run_unprotected(pt, key)
    try:
        Path(args.log).write_text(log.to_csv())
    except OSError as exc:
        print(f"error: cannot write {args.log}: {exc}", file=sys.stderr)
        return 2
    print(f"{ct:016x} ({len(log)} cycles, log written to {args.log})")
    return 0


def cmd_gen_traces(args) -> int:
    if args.n < 2:
        raise UsageError("--n must be at least 2")
    pt = parse_hex(args.plaintext, 16, "plaintext")
    key = parse_hex(args.key, 32, "key")
    model = LeakageModel.HAMMING_WEIGHT if args.model == "hw" else LeakageModel.HAMMING_DISTANCE
    cfg = LeakageConfig(model=model, noise_sigma=args.sigma, base_seed=args.seed)
    chunks = iter_trace_batches(args.design, args.n, pt, key, cfg, batch_size=args.batch)
    first = next(chunks)
    n_samples = first[1].shape[1]

    def all_chunks():
        yield first
        yield from chunks

    try:
        fixed, rnd = write_trace_stream(args.out, all_chunks(), args.n, n_samples, model, args.sigma, args.seed)
    except OSError as exc:
        print(f"error: cannot write {args.out}: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}: {args.n} traces x {n_samples} samples, fixed={fixed} random={rnd}")
    return 0


def cmd_tvla(args) -> int:
    try:
        report = tvla_file(args.input, args.threshold)
    except (OSError, TraceFormatError, TvlaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.report:
        json_path = Path(args.report)
        csv_path = Path(args.csv) if args.csv else json_path.with_suffix(".csv")
        try:
            json_path.write_text(report.to_json())
            csv_path.write_text(report.to_csv())
        except OSError as exc:
            print(f"error: cannot write report: {exc}", file=sys.stderr)
            return 2
    print(
        f"max|t| = {report.max_abs_t:.4f} threshold = {report.threshold} "
        f"fixed = {report.n_fixed} random = {report.n_random} verdict = {report.verdict}"
    )
    return 1 if report.leaks else 0


def cmd_selftest(args) -> int:
    from .acceptance import CRITERIA, run_criterion

    known = [c[0] for c in CRITERIA]
    wanted = [w.strip().upper() for w in args.only.split(",")] if args.only else known
    unknown = sorted(set(wanted) - set(known))
    if unknown:
        raise UsageError(f"unknown criteria {', '.join(unknown)}; choose from {', '.join(known)}")
    all_ok = True
    start = time.perf_counter()
    for cid, _, _ in CRITERIA:
        if cid not in wanted:
            continue
        res = run_criterion(cid, tables_path=args.tables)
        print(res.line(), flush=True)
        all_ok &= res.passed
    print(f"{'ALL PASS' if all_ok else 'FAILED'} in {time.perf_counter() - start:.1f}s")
    return 0 if all_ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="led-ti", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("encrypt", help="encrypt one block")
    e.add_argument("plaintext", help="16 hex digits")
    e.add_argument("key", help="32 hex digits")
    e.add_argument("--impl", choices=("reference", "serial", "ti"), default="reference")
    e.add_argument("--seed", type=_seed, default=DEFAULT_SEED)
    e.add_argument("--verbose", action="store_true", help="also print the cycle count")
    e.set_defaults(func=cmd_encrypt)

    v = sub.add_parser("verify-ti", help="check the Sbox sharing tables")
    v.add_argument("--tables", help="table file (default: shipped tables)")
    v.set_defaults(func=cmd_verify_ti)

    s = sub.add_parser("simulate", help="run one encryption and export its transition log as CSV")
    s.add_argument("plaintext")
    s.add_argument("key")
    s.add_argument("--design", choices=sorted(DESIGNS), default="led-ti")
    s.add_argument("--seed", type=_seed, default=DEFAULT_SEED)
    s.add_argument("--log", required=True)
    s.set_defaults(func=cmd_simulate)

    g = sub.add_parser("gen-traces", help="write a fixed-vs-random trace set")
    g.add_argument("--design", choices=("led", "led-ti"), required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--sigma", type=_positive_float, default=DEFAULT_SIGMA)
    g.add_argument("--model", choices=("hd", "hw"), default="hd")
    g.add_argument("--seed", type=_seed, default=DEFAULT_SEED)
    g.add_argument("--plaintext", default=f"{DEFAULT_FIXED_PLAINTEXT:016x}", help="fixed-class plaintext")
    g.add_argument("--key", default=f"{DEFAULT_KEY:032x}")
    g.add_argument("--batch", type=int, default=2000, help=argparse.SUPPRESS)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_traces)

    t = sub.add_parser("tvla", help="fixed-vs-random Welch t-test on a trace set")
    t.add_argument("--in", dest="input", required=True)
    t.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    t.add_argument("--report", help="JSON report path (CSV goes next to it)")
    t.add_argument("--csv", help="CSV path (default: report path with .csv)")
    t.set_defaults(func=cmd_tvla)

    st = sub.add_parser("selftest", help="run the acceptance criteria")
    st.add_argument("--only", help="comma-separated criterion ids, e.g. AC1,AC4")
    st.add_argument("--tables", help="table file to judge in AC2 (default: shipped)")
    st.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))  # exits 2


if __name__ == "__main__":
    sys.exit(main())

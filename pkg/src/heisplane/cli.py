"""Command line entry point: ``heisplane <mode> --config FILE --out DIR``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

THREAD_ENV = "HEISPLANE_THREADS"
_BLAS_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="heisplane", description="Plane-like minimisers on the Heisenberg group.")
    sub = ap.add_subparsers(dest="mode", required=True)
    for mode in ("solve", "refine", "analyze", "sequence", "gamma", "verify"):
        p = sub.add_parser(mode)
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--deterministic", action="store_true", help="single thread, reproducible output")
        p.add_argument("--threads", type=int, default=None, help=f"worker threads (overrides ${THREAD_ENV})")
        p.add_argument("-v", "--verbose", action="store_true")
        if mode == "analyze":
            p.add_argument("--field", default=None, help="analyze a stored field instead of solving")
    return ap


def resolve_threads(args) -> int:
    if args.deterministic:
        return 1
    if args.threads is not None:
        if args.threads < 1:
            raise ValueError("--threads must be positive")
        return args.threads
    env = os.environ.get(THREAD_ENV)
    if env:
        return max(1, int(env))
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        threads = resolve_threads(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    # must precede the first numerical import to take effect
    for var in _BLAS_VARS:
        os.environ[var] = str(threads)

    from .cli_io import ConfigError, FieldFormatError, parse_config, run_pipeline

    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = parse_config(fh.read())
        res = run_pipeline(cfg, args.out, args.mode, getattr(args, "field", None))
    except (ConfigError, FieldFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for name, (ok, value) in res.checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name} {value}")
    return res.status


if __name__ == "__main__":
    sys.exit(main())

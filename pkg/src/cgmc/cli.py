"""Command-line entry point: ``cgmc <subcommand> [--config FILE] [--out DIR] ...``.

Exit codes: 0 success, 1 invalid configuration, 2 verification failure,
3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys

from .analysis_harness import (
    VerificationFailed,
    cmd_bench,
    cmd_exact_curve,
    cmd_sample,
    cmd_sweep,
    cmd_verify,
    load_config,
)
from .errors import ConfigurationError, ContractViolation

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_IO = 0, 1, 2, 3

COMMANDS = {
    "exact-curve": cmd_exact_curve,
    "sample": cmd_sample,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
    "bench": cmd_bench,
}


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment file")
    common.add_argument("--out", help="output directory (default: results)")
    common.add_argument("--seed", type=_u64, help="seed base, unsigned 64-bit")
    common.add_argument("--threads", type=int, help="worker threads for independent chains")
    common.add_argument("--backend", choices=["cython", "python"], help="sampling kernel backend")

    parser = argparse.ArgumentParser(prog="cgmc", description="Classical and coupled coarse-grained Monte Carlo for 1-D lattice gases.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("exact-curve", parents=[common], help="exact coverage curve to exact_curve.csv")
    sub.add_parser("sample", parents=[common], help="one chain per method to sample.json")
    sub.add_parser("sweep", parents=[common], help="field sweep to sweep.csv and summary.json")
    sub.add_parser("verify", parents=[common], help="exact small-system checks to verify.json")
    sub.add_parser("bench", parents=[common], help="cost benchmark to bench.json")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, out=args.out, seed=args.seed, threads=args.threads, backend=args.backend)
        result = COMMANDS[args.command](config)
    except VerificationFailed as exc:
        print(f"cgmc {args.command}: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (ConfigurationError, ContractViolation, ValueError) as exc:
        print(f"cgmc {args.command}: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cgmc {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    if args.command == "verify":
        print(f"verify: {result['n_checks']} checks passed in {result['seconds']:.1f}s")
    elif args.command == "sweep":
        print(json.dumps({"Error_cl": result["Error_cl"], "Error_c": result["Error_c"]}))
    elif args.command == "bench":
        print(json.dumps({k: v["wall_seconds"] for k, v in result["methods"].items()}))
    elif args.command == "exact-curve":
        print(f"exact-curve: {len(result)} points written to {config.out}/exact_curve.csv")
    else:
        print(json.dumps({m: c["mean_coverage"] for m, c in result["chains"].items()}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

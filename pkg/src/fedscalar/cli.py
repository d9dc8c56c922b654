"""Command-line entry points: run an experiment, verify the estimator,
or compare config variants side by side.

Exit codes: 0 success, 2 config error, 3 data error, 4 verification failure.
"""

from __future__ import annotations

import argparse
import sys

from .data import DataError
from .harness import (
    ConfigError,
    compare_runs,
    parse_config,
    run_experiment,
    run_verification,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_VERIFY = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedscalar",
        description="Federated learning with one-scalar-per-client uploads.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one seeded experiment")
    p_run.add_argument("--config", required=True, help="path to a key = value config file")
    p_run.add_argument("--out", default="./out", help="output directory (default ./out)")

    p_verify = sub.add_parser("verify", help="run the estimator verification suite")
    p_verify.add_argument(
        "--dims", default="2,5,10",
        help="comma-separated dimensions for the moment checks (default 2,5,10)",
    )
    p_verify.add_argument(
        "--samples", type=int, default=1_000_000,
        help="Monte Carlo sample count (default 1000000)",
    )
    p_verify.add_argument("--seed", type=int, default=1, help="master seed (default 1)")
    p_verify.add_argument("--out", default="./out", help="output directory (default ./out)")

    p_cmp = sub.add_parser("compare", help="run a base config plus variants")
    p_cmp.add_argument("--config", required=True, help="path to the base config file")
    p_cmp.add_argument(
        "--vary", action="append", default=[], metavar="key=value[,key=value...]",
        help="one variant per flag; fields overriding the base config",
    )
    p_cmp.add_argument("--out", default="./out", help="output directory (default ./out)")
    return parser


def _parse_vary(spec: str) -> dict[str, str]:
    overrides = {}
    for piece in spec.split(","):
        key, sep, value = piece.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--vary expects key=value pairs, got {piece!r}")
        overrides[key.strip()] = value.strip()
    return overrides


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = parse_config(args.config)
    result = run_experiment(cfg, args.out)
    for key in (
        "final_train_loss",
        "final_test_accuracy",
        "cumulative_upload_bytes",
        "cumulative_download_bytes",
        "mean_grad_norm_sq",
        "max_stochastic_grad_norm_sq",
    ):
        print(f"{key} = {result.summary[key]}")
    print(f"wrote metrics.csv and summary.json under {args.out}")
    return EXIT_OK


def _cmd_verify(args: argparse.Namespace) -> int:
    try:
        dims = tuple(int(p) for p in args.dims.split(","))
    except ValueError as exc:
        raise ConfigError(f"invalid --dims value {args.dims!r}") from exc
    if args.samples < 1:
        raise ConfigError(f"--samples must be >= 1, got {args.samples}")
    report = run_verification(dims=dims, sample_count=args.samples, seed=args.seed)
    report.write(args.out)
    for line in report.lines():
        print(line)
    if not report.passed:
        print("verification FAILED", file=sys.stderr)
        return EXIT_VERIFY
    print(f"all checks passed; report written under {args.out}")
    return EXIT_OK


def _cmd_compare(args: argparse.Namespace) -> int:
    cfg = parse_config(args.config)
    variants = [_parse_vary(spec) for spec in args.vary]
    result = compare_runs(cfg, variants, args.out)
    for label in result.labels:
        run = result.summary["runs"][label]
        print(
            f"{label}: final_train_loss={run['final_train_loss']} "
            f"final_test_accuracy={run['final_test_accuracy']} "
            f"upload_ratio_vs_base={run['payload_upload_ratio_vs_base']}"
        )
    print(f"wrote compare.csv and compare_summary.json under {args.out}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"run": _cmd_run, "verify": _cmd_verify, "compare": _cmd_compare}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

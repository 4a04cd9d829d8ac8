"""Command-line front end.

Usage: ``featpde <command> --config run.yaml [--seed N] [--out DIR]``.

Exit codes: 0 on success, 1 for usage or configuration problems, 2 when a
computation started but failed numerically.
"""

from __future__ import annotations

import argparse
import sys

from .errors import NumericalError, UsageError
from .harness import COMMANDS, run

_DESCRIPTIONS = {
    "simulate": "integrate full or reduced sample paths, write a "
                "trajectory CSV",
    "estimate-value": "tabulate exp(-V) on the evaluation grid with the "
                      "configured estimator",
    "estimate-safety": "tabulate safety probabilities on the evaluation "
                       "grid",
    "solve-pde": "finite-difference solve of the preset's reduced PDE, "
                 "write all saved slices",
    "train-pinn": "fit the physics-informed network, write checkpoint, "
                  "loss log and surface",
    "train-features": "fit the feature autoencoder, write encoder/decoder "
                      "checkpoints",
    "benchmark": "error-versus-sample-count study against a reference "
                 "oracle",
    "make-dataset": "evaluate a data source on a grid, write a training "
                    "dataset CSV",
}


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad arguments; the contract reserves 2 for
    # numerical failures, so route usage problems to 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="featpde",
        description="feature-reduced value and safety estimation for "
                    "high-dimensional stochastic systems",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name in COMMANDS:
        p = sub.add_parser(name, help=_DESCRIPTIONS[name],
                           description=_DESCRIPTIONS[name])
        p.add_argument("--config", required=True, metavar="PATH",
                       help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None, metavar="U64",
                       help="override the config seed")
        p.add_argument("--out", default=None, metavar="DIR",
                       help="override the config output directory")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    try:
        artifacts = run(args.config, args.command, out=args.out,
                        seed=args.seed)
    except UsageError as exc:
        print(f"featpde: error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"featpde: numerical failure: {exc}", file=sys.stderr)
        return 2
    for path in artifacts:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())

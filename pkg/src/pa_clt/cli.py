"""Command-line entry point: ``pa-clt {simulate,covariance,figures,verify}``."""

from __future__ import annotations

import argparse
import sys

from . import experiments as ex
from .errors import PAError

CENTERING_FLAGS = {"mean": "exact_mean", "pk": "theoretical"}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' file; flags override it")
    common.add_argument("--m", type=int)
    common.add_argument("--delta", type=float)
    common.add_argument("--steps", type=int, help="final time t")
    common.add_argument("--reps", type=int, help="number of replications")
    common.add_argument("--kmax", type=int)
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--centering", choices=sorted(CENTERING_FLAGS))
    common.add_argument("--workers", type=int, help="default: $PA_CLT_WORKERS or 1")
    common.add_argument("--out", help="CSV path for simulate (default stdout), prefix otherwise")
    common.add_argument("--scaling", choices=("arrival", "edge"),
                        help="time scaling of the limiting covariance")

    parser = argparse.ArgumentParser(prog="pa-clt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="degree counts of one run")
    sub.add_parser("covariance", parents=[common],
                   help="empirical vs limiting covariance of the fluctuations")
    fig = sub.add_parser("figures", parents=[common], help="plot data and gnuplot scripts")
    fig.add_argument("which", type=int, nargs="+", choices=(1, 2, 3, 4))
    ver = sub.add_parser("verify", parents=[common], help="run the property checks")
    ver.add_argument("--full", action="store_true", help="100 random states per parameter set")
    ver.add_argument("--inject-sign-flip", action="store_true",
                     help="negate one block of the closed-form covariance (should fail)")
    return parser


def make_config(args) -> ex.ExperimentConfig:
    values = ex.read_config(args.config) if args.config else {}
    if values.get("centering") in CENTERING_FLAGS:
        values["centering"] = CENTERING_FLAGS[values["centering"]]
    for key in ("m", "delta", "steps", "reps", "kmax", "seed", "workers", "out", "scaling"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if args.centering is not None:
        values["centering"] = CENTERING_FLAGS[args.centering]
    values.setdefault("workers", ex.default_workers())
    return ex.ExperimentConfig(**values)


def _verify(args, cfg) -> int:
    explicit = args.m is not None or args.delta is not None or (
        args.config and {"m", "delta"} & ex.read_config(args.config).keys())
    grid = [cfg.params] if explicit else ex.default_verify_grid()
    results = ex.run_verify(grid, seed=cfg.seed, quick=not args.full,
                            flip_noise_sign=args.inject_sign_flip)
    for r in results:
        print(f"{'pass' if r.passed else 'FAIL'}  {r.check:<22} {r.params:<34} {r.residual:.3g}")
    path = f"{cfg.out}_verify.csv"
    ex.write_verify_report(results, path)
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed; report in {path}")
    return 1 if failed else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = make_config(args)
        if args.command == "simulate":
            ex.run_simulate(cfg, args.out or "-")
            return 0
        if args.command == "covariance":
            for path in ex.run_covariance(cfg).values():
                print(path)
            return 0
        if args.command == "figures":
            for which in args.which:
                for path in ex.run_figures(which, cfg):
                    print(path)
            return 0
        return _verify(args, cfg)
    except (PAError, OSError) as err:
        print(f"pa-clt: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Commands
    run <config>              simulate one config (file path or bundled name)
    reproduce-figures         regenerate the four benchmark figure datasets
    study precision|scaling|certify
                              run a named study and write its artifact

Exit codes
    0   success
    2   configuration problem (bad file, bad key, bad flag)
    3   numeric failure (state diverged, or a study run never settled)
    4   study ran fine but its criterion failed

The output directory defaults to $DICONTROL_OUTDIR, then the current
directory; --outdir overrides both.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import ConfigError
from .controllers import GainSet
from .runner import (
    load_run_source,
    reproduce_figures,
    run,
    study_certify,
    study_precision,
    study_scaling,
)
from .simulation import SimulationDiverged, StudyError

OUTDIR_ENV = "DICONTROL_OUTDIR"


def _add_outdir(parser):
    parser.add_argument("--outdir", default=None,
                        help=f"output directory (default: ${OUTDIR_ENV} or '.')")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="dicontrol",
        description="Simulate and certify discontinuous integral controllers.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate one run config")
    p_run.add_argument("config", help="config file path, or a bundled name "
                                      "(sf_pendulum, of_pendulum, twisting_pendulum)")
    _add_outdir(p_run)

    p_fig = sub.add_parser("reproduce-figures",
                           help="regenerate the benchmark figure datasets")
    _add_outdir(p_fig)

    p_study = sub.add_parser("study", help="run a study and write its artifact")
    p_study.add_argument("kind", choices=("precision", "scaling", "certify"))
    _add_outdir(p_study)
    p_study.add_argument("--config", default="sf_pendulum",
                         help="config for precision/scaling studies "
                              "(default: sf_pendulum)")
    p_study.add_argument("--lambda", dest="lam", type=float, default=3.0,
                         help="scaling factor for the scaling study (default 3)")
    p_study.add_argument("--h", type=float, default=1e-3,
                         help="step size for the scaling study (default 1e-3)")
    p_study.add_argument("--t-end", type=float, default=30.0,
                         help="horizon for the scaling study (default 30)")
    p_study.add_argument("--steps", default=None,
                         help="comma-separated step sizes for the precision study")
    p_study.add_argument("--settle-tol", type=float, default=None,
                         help="settling tolerance for the precision study")
    p_study.add_argument("--L", type=float, default=0.4,
                         help="disturbance slope bound for certify (default 0.4)")
    p_study.add_argument("--k1", type=float, default=2.0)
    p_study.add_argument("--k2", type=float, default=5.0)
    p_study.add_argument("--k3", type=float, default=0.5)
    p_study.add_argument("--k4", type=float, default=0.0)
    p_study.add_argument("--gamma1", type=float, default=None,
                         help="certify this exact certificate instead of searching")
    p_study.add_argument("--n", type=int, default=None,
                         help="sphere sample draws per certificate check")
    p_study.add_argument("--seed", type=int, default=0)
    return parser


def _outdir(args):
    if args.outdir is not None:
        return args.outdir
    return os.environ.get(OUTDIR_ENV, ".")


def _cmd_run(args):
    result = run(load_run_source(args.config), outdir=_outdir(args))
    for line in result.summary_lines():
        print(line)
    return 0


def _cmd_figures(args):
    paths = reproduce_figures(outdir=_outdir(args))
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def _cmd_study(args):
    outdir = _outdir(args)
    if args.kind == "precision":
        cfg = load_run_source(args.config)
        kwargs = {}
        if args.steps is not None:
            try:
                kwargs["steps"] = tuple(float(s) for s in args.steps.split(","))
            except ValueError as exc:
                raise ConfigError(f"--steps must be comma-separated numbers: {exc}")
        if args.settle_tol is not None:
            kwargs["settle_tol"] = args.settle_tol
        outcome = study_precision(cfg, outdir=outdir, **kwargs)
    elif args.kind == "scaling":
        cfg = load_run_source(args.config)
        outcome = study_scaling(cfg, args.lam, outdir=outdir,
                                h=args.h, t_end=args.t_end)
    else:
        try:
            gains = GainSet(args.k1, args.k2, args.k3, args.k4)
        except ValueError as exc:
            raise ConfigError(f"bad gains: {exc}") from exc
        outcome = study_certify(args.L, gains, outdir=outdir,
                                gamma1=args.gamma1, n=args.n, seed=args.seed)
    for line in outcome.summary_lines():
        print(line)
    return 0 if outcome.passed else 4


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "reproduce-figures":
            return _cmd_figures(args)
        return _cmd_study(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SimulationDiverged as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except StudyError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""
Command-line entry point for interbank reconstruction and stress testing.

Examples:
  interbank-risk generate --n 50 --kappa 0.1 --lambda 50 --seed 7 --out runs/truth
  interbank-risk reconstruct --balance runs/truth/balance.csv --method sras \
      --adjacency runs/truth/adjacency.csv --out runs/sras
  interbank-risk stress --exposures runs/sras/solution.csv --theta-grid 0:1:50
  interbank-risk sweep-feasibility --config desk --seed 1
  interbank-risk sweep-contagion --config contagion --seed 1 --workers 4
  interbank-risk fit --input runs/sweep-contagion/stress_n50.csv
  interbank-risk report --input runs/sweep-feasibility/feasibility.csv
  interbank-risk presets
  interbank-risk sweep-feasibility --replay runs/sweep-feasibility/manifest.json

Exit codes: 0 success, 1 configuration or domain error, 2 I/O error,
3 failure budget exceeded.
"""

import argparse
import logging
from typing import List, Optional, Sequence

from pydantic import ValidationError
from rich.console import Console

from ..config_manager import RuntimeSettings
from ..errors import FailureBudgetExceeded, InterbankError
from ..reconstruct import Method
from ..sweeps import ContagionMethod
from .commands import execute

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_BUDGET = 3


def configure_logging(log_level: str) -> None:
    lvl = getattr(logging, log_level.upper(), logging.INFO)
    logging.basicConfig(
        level=lvl,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        datefmt="%H:%M:%S",
    )


def _common(ap: argparse.ArgumentParser) -> None:
    ap.add_argument("--out", help="Output directory (default: <out_dir>/<subcommand>)")
    ap.add_argument("--log-level", help="Log level (DEBUG, INFO, WARNING)")
    ap.add_argument("--replay", help="Re-run the configuration stored in a manifest")
    ap.add_argument(
        "--force",
        action="store_true",
        help="Allow --replay with a configuration that differs from the manifest",
    )
    ap.add_argument(
        "--failure-budget",
        type=int,
        help="Maximum number of failed trials before exiting with code 3",
    )


def _solver(ap: argparse.ArgumentParser) -> None:
    ap.add_argument("--delta", type=float, help="Stopping tolerance (default 1e-7)")
    ap.add_argument("--max-iterations", type=int, help="Iteration cap per solve")


def _sweep(ap: argparse.ArgumentParser) -> None:
    ap.add_argument("--config", help="Preset name in configs/*.json")
    ap.add_argument("--config-dir", help="Preset directory (default: configs)")
    ap.add_argument("--n", type=int, nargs="+", help="Network sizes N")
    ap.add_argument("--kappa", type=float, nargs="+", help="Explicit kappa values")
    ap.add_argument("--kappa-grid", help="kappa grid min:max:steps")
    ap.add_argument("--steps", type=int, help="Intervals M of the spanning kappa grid")
    ap.add_argument("--trials", type=int, help="Independent trials per grid point")
    ap.add_argument("--seed", type=int, help="64-bit seed (drawn if absent)")
    ap.add_argument("--lambda", dest="lambda_", type=float, help="Total volume")
    ap.add_argument("--workers", type=int, help="Worker processes")
    _solver(ap)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="interbank-risk",
        description="Reconstruct interbank exposures and stress-test them",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="Draw a random sparse ground-truth network")
    gen.add_argument("--n", type=int, help="Number of banks")
    gen.add_argument("--kappa", type=float, help="Connectivity")
    gen.add_argument("--lambda", dest="lambda_", type=float, help="Total volume")
    gen.add_argument("--seed", type=int, help="64-bit seed")
    _common(gen)

    rec = sub.add_parser("reconstruct", help="Reconstruct exposures from marginals")
    rec.add_argument("--balance", help="bank,assets,liabilities CSV")
    rec.add_argument("--method", choices=[m.value for m in Method])
    rec.add_argument("--adjacency", help="Support matrix CSV for sras")
    rec.add_argument("--kappa", type=float, help="Draw a random sras support instead")
    rec.add_argument("--seed", type=int, help="Seed for the random support")
    _solver(rec)
    _common(rec)

    st = sub.add_parser("stress", help="Default cascades on an exposure matrix")
    st.add_argument("--exposures", help="Exposure matrix CSV")
    st.add_argument("--theta", type=float, help="Loss given default in [0, 1]")
    st.add_argument("--theta-grid", help="theta grid min:max:steps")
    st.add_argument("--capital", type=float, help="Initial capital of every bank")
    st.add_argument(
        "--label",
        choices=[m.value for m in ContagionMethod],
        help="Method column for --theta-grid output (default true)",
    )
    st.add_argument(
        "--per-origin", action="store_true", help="Print the outcome of every origin"
    )
    _common(st)

    feas = sub.add_parser("sweep-feasibility", help="SRAS deviation over (N, kappa)")
    _sweep(feas)
    feas.add_argument("--epsilon-star", type=float, help="Feasibility threshold")
    _common(feas)

    cont = sub.add_parser("sweep-contagion", help="Default fraction sweep")
    _sweep(cont)
    cont.add_argument("--theta-grid", help="theta grid min:max:steps")
    cont.add_argument("--capital", type=float, help="Initial capital of every bank")
    cont.add_argument(
        "--method",
        nargs="+",
        choices=[m.value for m in ContagionMethod],
        help="Matrices to stress (default: true me sme)",
    )
    cont.add_argument(
        "--use-true-support",
        action="store_true",
        default=None,
        help="Run SME on the true adjacency instead of a fresh random support",
    )
    _common(cont)

    fit = sub.add_parser("fit", help="Logistic fits of stress tables")
    fit.add_argument("--input", dest="inputs", nargs="+", help="stress_n<N>.csv files")
    fit.add_argument("--n", type=int, help="N when it is not in the file name")
    _common(fit)

    rep = sub.add_parser("report", help="Re-print fit or feasibility tables")
    rep.add_argument("--input", dest="inputs", nargs="+", help="Result files")
    rep.add_argument(
        "--epsilon-star", type=float, help="Feasibility threshold (default 0.005)"
    )
    _common(rep)

    pre = sub.add_parser("presets", help="List the sweep presets")
    pre.add_argument("--config-dir", help="Preset directory (default: configs)")
    _common(pre)

    return ap


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    return build_parser().parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; those are configuration errors here
        return EXIT_CONFIG if exc.code else EXIT_OK

    try:
        settings = RuntimeSettings()
    except ValidationError as exc:
        configure_logging(args.log_level or "INFO")
        logger.error("invalid INTERBANK_* settings: %s", exc)
        return EXIT_CONFIG
    configure_logging(args.log_level or settings.log_level)
    console = Console()

    try:
        return execute(args, settings, console)
    except FailureBudgetExceeded as exc:
        logger.error("%s", exc)
        return EXIT_BUDGET
    except (InterbankError, ValidationError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        logger.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())

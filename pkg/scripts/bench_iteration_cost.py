#!/usr/bin/env python3
"""
Measure the per-iteration multiply-accumulate cost of RAS and SRAS.

Usage:
  python scripts/bench_iteration_cost.py --n 200 --instances 5 --seed 11

Both solvers run on the same random balance sheets (SRAS on the full off-diagonal
support, so both reach the same solution). The ratio of the measured
mac_count / iterations is compared with the analytic costs 2N^2 and 4N^2.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from rich.console import Console
from rich.table import Table

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.core import AdjacencyMatrix  # noqa: E402
from src.netgen import RngStream, random_balance_sheet  # noqa: E402
from src.reconstruct import (  # noqa: E402
    Method,
    SolverConfig,
    iteration_cost,
    ras,
    sras,
)
from src.utils import format_duration  # noqa: E402


def parse_args() -> argparse.Namespace:
    ap = argparse.ArgumentParser(description="RAS vs SRAS main-loop cost")
    ap.add_argument("--n", type=int, default=200, help="Number of banks")
    ap.add_argument("--instances", type=int, default=5, help="Random balance sheets")
    ap.add_argument("--seed", type=int, default=11, help="64-bit seed")
    ap.add_argument("--delta", type=float, default=1e-7, help="Stopping tolerance")
    return ap.parse_args()


def main() -> int:
    args = parse_args()
    console = Console()
    cfg = SolverConfig(delta=args.delta)
    full = AdjacencyMatrix.full(args.n)

    table = Table(title=f"Main-loop cost at N={args.n}")
    table.add_column("instance", style="cyan", justify="right")
    table.add_column("RAS macs/iter", justify="right")
    table.add_column("SRAS macs/iter", justify="right")
    table.add_column("ratio", style="yellow", justify="right")
    table.add_column("RAS time", style="blue", justify="right")
    table.add_column("SRAS time", style="blue", justify="right")

    ratios = []
    for k in range(args.instances):
        bs = random_balance_sheet(args.n, 1.0, RngStream(args.seed, k))
        started = time.perf_counter()
        r = ras(bs, cfg)
        ras_time = time.perf_counter() - started
        started = time.perf_counter()
        s = sras(bs, full, cfg)
        sras_time = time.perf_counter() - started

        ras_cost = r.mac_count / r.iterations
        sras_cost = s.mac_count / s.iterations
        ratios.append(sras_cost / ras_cost)
        table.add_row(
            str(k),
            f"{ras_cost:.0f}",
            f"{sras_cost:.0f}",
            f"{ratios[-1]:.3f}",
            format_duration(ras_time),
            format_duration(sras_time),
        )

    console.print(table)
    expected = iteration_cost(args.n, Method.SRAS) / iteration_cost(args.n, Method.RAS)
    mean = sum(ratios) / len(ratios)
    console.print(f"mean ratio {mean:.3f} (analytic {expected:.3f})")
    return 0 if abs(mean - expected) <= 0.05 else 1


if __name__ == "__main__":
    raise SystemExit(main())

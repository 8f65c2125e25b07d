"""
Subcommand handlers.

Each subcommand turns its flags (on top of a preset or a replayed manifest) into
a validated JSON config, runs, and reports the files it wrote. ``execute`` adds
the run manifest and enforces the failure budget.
"""

import argparse
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Type

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from rich.console import Console
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TimeElapsedColumn

from ..config_manager import ConfigManager, RuntimeSettings, deep_merge
from ..contagion import (
    DEFAULT_CAPITAL,
    StressConfig,
    fraction_summary,
    stress_test,
)
from ..core import connectivity
from ..errors import ConfigError, DomainError, FailureBudgetExceeded
from ..netgen import (
    UINT64_MAX,
    RngStream,
    entropy_seed,
    random_adjacency,
    random_ground_truth,
)
from ..reconstruct import Method, SolverConfig, reconstruct
from ..storage import (
    load_adjacency,
    load_balance_sheet,
    load_exposures,
    load_fits,
    load_stress_csv,
    load_sweep_csv,
    save_fits,
    save_ground_truth,
    save_matrix,
    save_outcomes_csv,
    save_report,
    save_stress_csv,
    save_sweep_csv,
)
from ..sweeps import (
    ContagionMethod,
    ContagionRecord,
    FitRecord,
    Grid,
    KappaGrid,
    SweepPlan,
    SweepRecord,
    ThetaGrid,
    boundary_kappa,
    critical_connectivity,
    fit_sweep,
    law_rms,
    midpoint_trend,
    sweep_contagion,
    sweep_feasibility,
    total_failures,
)
from ..utils import (
    check_replay,
    create_boundary_table,
    create_fit_table,
    create_outcome_table,
    create_preset_table,
    create_sweep_table,
    ensure_directory,
    format_duration,
    load_manifest,
    run_manifest,
    save_json,
)

logger = logging.getLogger(__name__)


@dataclass
class RunResult:
    outputs: List[Path] = field(default_factory=list)
    seed: Optional[int] = None
    failures: int = 0


class GenerateConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    n: int = Field(ge=2)
    kappa: float = Field(gt=0.0, lt=1.0)
    total: float = Field(default=1.0, gt=0.0)
    seed: int = Field(ge=0, le=UINT64_MAX)
    stream_id: int = Field(default=0, ge=0, le=UINT64_MAX)


class ReconstructConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    balance: str
    method: Method = Method.SRAS
    adjacency: Optional[str] = None
    kappa: Optional[float] = Field(default=None, gt=0.0, lt=1.0)
    seed: Optional[int] = Field(default=None, ge=0, le=UINT64_MAX)
    delta: float = Field(default=1e-7, gt=0.0, lt=1.0)
    max_iterations: int = Field(default=100_000, gt=0)


class StressRunConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    exposures: str
    theta: float = Field(default=1.0, ge=0.0, le=1.0)
    theta_grid: Optional[ThetaGrid] = None
    capital: float = Field(default=DEFAULT_CAPITAL, gt=0.0)
    label: ContagionMethod = ContagionMethod.TRUE


class FitConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    inputs: Tuple[str, ...] = Field(min_length=1)
    n: Optional[int] = Field(default=None, ge=2)


class ReportConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    inputs: Tuple[str, ...] = Field(min_length=1)
    epsilon_star: float = Field(default=0.005, gt=0.0, lt=0.5)


class PresetsConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    config_dir: Optional[str] = None


def _overrides(args: argparse.Namespace, mapping: Dict[str, str]) -> Dict[str, Any]:
    """Explicitly given flags, renamed to config keys."""
    values = {}
    for flag, key in mapping.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[key] = value
    return values


def _grid(text: Optional[str], cls: Type[Grid]) -> Optional[Dict[str, Any]]:
    if text is None:
        return None
    grid = cls.parse(text)
    return grid.model_dump(mode="json")


# ---------------------------------------------------------------- generate


def build_generate(args: argparse.Namespace, base: Dict[str, Any]) -> Dict[str, Any]:
    merged = deep_merge(
        base,
        _overrides(
            args, {"n": "n", "kappa": "kappa", "lambda_": "total", "seed": "seed"}
        ),
    )
    merged.setdefault("seed", entropy_seed())
    return GenerateConfig(**merged).model_dump(mode="json")


def run_generate(
    config: Dict[str, Any], args: argparse.Namespace, out: Path, console: Console
) -> RunResult:
    cfg = GenerateConfig(**config)
    stream = RngStream(cfg.seed, cfg.stream_id)
    truth = random_ground_truth(cfg.n, cfg.kappa, cfg.total, stream)
    files = save_ground_truth(out, truth, cfg.kappa, stream)
    console.print(
        f"[green]Generated[/green] N={cfg.n} links={truth.adjacency.count()} "
        f"kappa={connectivity(truth.adjacency):.4f} total={cfg.total:g} -> {out}"
    )
    return RunResult(outputs=files, seed=cfg.seed)


# ------------------------------------------------------------- reconstruct


def build_reconstruct(
    args: argparse.Namespace, base: Dict[str, Any]
) -> Dict[str, Any]:
    merged = deep_merge(
        base,
        _overrides(
            args,
            {
                "balance": "balance",
                "method": "method",
                "adjacency": "adjacency",
                "kappa": "kappa",
                "seed": "seed",
                "delta": "delta",
                "max_iterations": "max_iterations",
            },
        ),
    )
    cfg = ReconstructConfig(**merged)
    if cfg.method is Method.SRAS and cfg.adjacency is None:
        if cfg.kappa is None:
            raise ConfigError("sras needs --adjacency FILE or --kappa")
        if cfg.seed is None:
            cfg = cfg.model_copy(update={"seed": entropy_seed()})
    return cfg.model_dump(mode="json")


def run_reconstruct(
    config: Dict[str, Any], args: argparse.Namespace, out: Path, console: Console
) -> RunResult:
    cfg = ReconstructConfig(**config)
    bs = load_balance_sheet(cfg.balance)
    outputs: List[Path] = []
    q = None
    if cfg.method is Method.SRAS:
        if cfg.adjacency is not None:
            q = load_adjacency(cfg.adjacency)
        else:
            assert cfg.kappa is not None and cfg.seed is not None
            q = random_adjacency(bs.n, cfg.kappa, RngStream(cfg.seed))
            outputs.append(save_matrix(out / "adjacency.csv", q.entries))

    solver = SolverConfig(delta=cfg.delta, max_iterations=cfg.max_iterations)
    report = reconstruct(cfg.method, bs, q, solver)

    solution = save_matrix(out / "solution.csv", report.solution.entries)
    outputs += [solution, save_report(out / "report.json", report, solution)]
    if report.converged:
        status = "converged"
    elif report.diverged:
        status = "[yellow]diverged[/yellow]"
    else:
        status = "[red]not converged[/red]"
    console.print(
        f"{cfg.method.value.upper()} N={bs.n} {status} "
        f"in {report.iterations} iterations, "
        f"eta={report.final_step:.3e} epsilon={report.deviation:.3e}"
    )
    return RunResult(outputs=outputs, seed=cfg.seed)


# ------------------------------------------------------------------ stress


def build_stress(args: argparse.Namespace, base: Dict[str, Any]) -> Dict[str, Any]:
    overrides = _overrides(
        args,
        {
            "exposures": "exposures",
            "theta": "theta",
            "capital": "capital",
            "label": "label",
        },
    )
    theta_grid = _grid(getattr(args, "theta_grid", None), ThetaGrid)
    if theta_grid is not None:
        overrides["theta_grid"] = theta_grid
    return StressRunConfig(**deep_merge(base, overrides)).model_dump(mode="json")


def run_stress(
    config: Dict[str, Any], args: argparse.Namespace, out: Path, console: Console
) -> RunResult:
    cfg = StressRunConfig(**config)
    x = load_exposures(cfg.exposures)
    stress = StressConfig(initial_capital=cfg.capital, theta=cfg.theta)

    if cfg.theta_grid is None:
        outcomes = stress_test(x, stress)
        mean, lo, hi = fraction_summary(outcomes)
        path = save_outcomes_csv(out / "outcomes.csv", outcomes)
        if getattr(args, "per_origin", False):
            console.print(create_outcome_table(outcomes, limit=x.n))
        console.print(
            f"theta={cfg.theta:g}: mean xi={mean:.4f} (min {lo:.4f}, max {hi:.4f})"
        )
        return RunResult(outputs=[path])

    kappa = connectivity(x.support())
    records = []
    for theta in cfg.theta_grid.points():
        mean, lo, hi = fraction_summary(stress_test(x, stress.with_theta(theta)))
        records.append(
            ContagionRecord(
                n=x.n,
                kappa=kappa,
                theta=theta,
                method=cfg.label,
                xi_mean=mean,
                xi_min=lo,
                xi_max=hi,
                trials=1,
            )
        )
    paths = save_stress_csv(out, records)
    console.print(f"{len(records)} theta points written to {paths[0]}")
    return RunResult(outputs=paths)


# ------------------------------------------------------------------ sweeps

_PLAN_FLAGS = {
    "n": "n_values",
    "kappa": "kappa_values",
    "steps": "steps",
    "trials": "trials",
    "delta": "delta",
    "max_iterations": "max_iterations",
    "seed": "seed",
    "epsilon_star": "epsilon_star",
    "lambda_": "total",
    "capital": "capital",
    "use_true_support": "use_true_support",
}


def _plan_config(args: argparse.Namespace, base: Dict[str, Any]) -> Dict[str, Any]:
    overrides = _overrides(args, _PLAN_FLAGS)
    kappa_grid = _grid(getattr(args, "kappa_grid", None), KappaGrid)
    if kappa_grid is not None:
        overrides["kappa_grid"] = kappa_grid
    theta_grid = _grid(getattr(args, "theta_grid", None), ThetaGrid)
    if theta_grid is not None:
        overrides["theta_grid"] = theta_grid
    merged = deep_merge(base, overrides)
    # an explicit kappa flag replaces whatever kappa spec the base carried
    if "kappa_grid" in overrides:
        merged["kappa_values"] = None
    if "kappa_values" in overrides:
        merged["kappa_grid"] = None
    merged.pop("workers", None)
    merged.pop("methods", None)
    plan = SweepPlan(**merged).with_resolved_seed()
    return plan.model_dump(mode="json", exclude={"workers"})


def _plan(
    config: Dict[str, Any], settings: RuntimeSettings, args: argparse.Namespace
) -> SweepPlan:
    workers = getattr(args, "workers", None) or settings.workers
    fields = {k: v for k, v in config.items() if k != "methods"}
    return SweepPlan(**fields, workers=workers)


def _progress(console: Console) -> Progress:
    return Progress(
        "[progress.description]{task.description}",
        BarColumn(),
        MofNCompleteColumn(),
        TimeElapsedColumn(),
        console=console,
        transient=True,
    )


def _law_rms(records: List[SweepRecord], n: int) -> float:
    try:
        return law_rms(records, n)
    except DomainError:
        return math.nan


def build_sweep_feasibility(
    args: argparse.Namespace, base: Dict[str, Any]
) -> Dict[str, Any]:
    return _plan_config(args, base)


def run_sweep_feasibility(
    config: Dict[str, Any],
    args: argparse.Namespace,
    out: Path,
    console: Console,
    settings: RuntimeSettings,
) -> RunResult:
    plan = _plan(config, settings, args)
    total = sum(len(plan.kappas_for(n)) for n in plan.n_values)
    with _progress(console) as progress:
        task = progress.add_task("feasibility", total=total)
        records = sweep_feasibility(plan, lambda: progress.advance(task))
    path = save_sweep_csv(out / "feasibility.csv", records)

    console.print(create_sweep_table(records))
    console.print(create_boundary_table(_boundary_rows(records, plan.epsilon_star)))
    return RunResult(outputs=[path], seed=plan.seed, failures=total_failures(records))


def _boundary_rows(
    records: List[SweepRecord], epsilon_star: float
) -> List[Dict[str, Any]]:
    rows = []
    for n in sorted({r.n for r in records}):
        kappas = sorted(r.kappa for r in records if r.n == n)
        rows.append(
            {
                "n": n,
                "kappa_star": critical_connectivity(epsilon_star, n),
                "boundary": boundary_kappa(records, epsilon_star, n),
                "step": float(np.max(np.diff(kappas))) if kappas[1:] else math.nan,
                "rms": _law_rms(records, n),
            }
        )
    return rows


def build_sweep_contagion(
    args: argparse.Namespace, base: Dict[str, Any]
) -> Dict[str, Any]:
    config = _plan_config(args, base)
    methods = getattr(args, "method", None) or base.get("methods")
    chosen = {ContagionMethod(m) for m in methods or [m.value for m in ContagionMethod]}
    config["methods"] = [m.value for m in ContagionMethod if m in chosen]
    return config


def run_sweep_contagion(
    config: Dict[str, Any],
    args: argparse.Namespace,
    out: Path,
    console: Console,
    settings: RuntimeSettings,
) -> RunResult:
    plan = _plan(config, settings, args)
    methods = [ContagionMethod(m) for m in config["methods"]]
    total = sum(len(plan.kappas_for(n)) for n in plan.n_values) * plan.trials
    with _progress(console) as progress:
        task = progress.add_task("contagion", total=total)
        records = sweep_contagion(plan, methods, lambda: progress.advance(task))
    outputs = save_stress_csv(out, records)

    fits = fit_sweep(records)
    outputs.append(save_fits(out / "fits.json", fits))
    console.print(create_fit_table(fits))
    return RunResult(outputs=outputs, seed=plan.seed, failures=total_failures(records))


# --------------------------------------------------------------------- fit


def build_fit(args: argparse.Namespace, base: Dict[str, Any]) -> Dict[str, Any]:
    overrides = _overrides(args, {"inputs": "inputs", "n": "n"})
    return FitConfig(**deep_merge(base, overrides)).model_dump(mode="json")


def _print_trend(fits: List[FitRecord], console: Console) -> None:
    truth = [f for f in fits if f.method is ContagionMethod.TRUE]
    if len({f.kappa for f in truth}) < 2:
        return
    slope, intercept = midpoint_trend(truth)
    ratio = sum(f.beta_over_n for f in truth) / len(truth)
    console.print(
        f"true midpoints: theta* = {intercept:.3f} + {slope:.3f} kappa, "
        f"mean beta/N = {ratio:.3f}"
    )


def run_fit(
    config: Dict[str, Any], args: argparse.Namespace, out: Path, console: Console
) -> RunResult:
    cfg = FitConfig(**config)
    records: List[ContagionRecord] = []
    for path in cfg.inputs:
        records += load_stress_csv(path, cfg.n)
    fits = fit_sweep(records)
    path = save_fits(out / "fits.json", fits)
    console.print(create_fit_table(fits))
    _print_trend(fits, console)
    return RunResult(outputs=[path])


# ------------------------------------------------------------------ report


def build_report(args: argparse.Namespace, base: Dict[str, Any]) -> Dict[str, Any]:
    overrides = _overrides(args, {"inputs": "inputs", "epsilon_star": "epsilon_star"})
    return ReportConfig(**deep_merge(base, overrides)).model_dump(mode="json")


def run_report(
    config: Dict[str, Any], args: argparse.Namespace, out: Path, console: Console
) -> RunResult:
    """Re-print the tables of earlier runs: fits.json or feasibility CSVs."""
    cfg = ReportConfig(**config)
    for name in cfg.inputs:
        path = Path(name)
        if path.suffix == ".json":
            fits = load_fits(path)
            console.print(create_fit_table(fits, title=f"Logistic fits ({path})"))
            _print_trend(fits, console)
        elif path.suffix == ".csv":
            records = load_sweep_csv(path)
            console.print(create_sweep_table(records, title=f"Feasibility ({path})"))
            console.print(
                create_boundary_table(_boundary_rows(records, cfg.epsilon_star))
            )
        else:
            raise ConfigError(f"{path}: expected fits.json or a feasibility CSV")
    return RunResult()


# ----------------------------------------------------------------- presets


def build_presets(args: argparse.Namespace, base: Dict[str, Any]) -> Dict[str, Any]:
    overrides = _overrides(args, {"config_dir": "config_dir"})
    return PresetsConfig(**deep_merge(base, overrides)).model_dump(mode="json")


def run_presets(
    config: Dict[str, Any],
    args: argparse.Namespace,
    out: Path,
    console: Console,
    settings: RuntimeSettings,
) -> RunResult:
    cfg = PresetsConfig(**config)
    manager = ConfigManager(cfg.config_dir or str(settings.config_dir))
    names = manager.list_configs()
    if not names:
        console.print(f"no presets in {manager.config_dir}")
        return RunResult()
    console.print(create_preset_table(manager.get_config_info(n) for n in names))
    return RunResult()


# ---------------------------------------------------------------- dispatch

Builder = Callable[[argparse.Namespace, Dict[str, Any]], Dict[str, Any]]
Runner = Callable[..., RunResult]

COMMANDS: Dict[str, Tuple[Builder, Runner, bool]] = {
    # name: (config builder, runner, runner needs settings)
    "generate": (build_generate, run_generate, False),
    "reconstruct": (build_reconstruct, run_reconstruct, False),
    "stress": (build_stress, run_stress, False),
    "sweep-feasibility": (build_sweep_feasibility, run_sweep_feasibility, True),
    "sweep-contagion": (build_sweep_contagion, run_sweep_contagion, True),
    "fit": (build_fit, run_fit, False),
    "report": (build_report, run_report, False),
    "presets": (build_presets, run_presets, True),
}


def _base_config(
    args: argparse.Namespace, settings: RuntimeSettings
) -> Tuple[Dict[str, Any], Optional[Dict[str, Any]]]:
    replay = getattr(args, "replay", None)
    if replay:
        manifest = load_manifest(replay)
        if manifest["subcommand"] != args.command:
            raise ConfigError(
                f"{replay} was written by {manifest['subcommand']}, not {args.command}"
            )
        return dict(manifest["config"]), manifest
    preset = getattr(args, "config", None)
    if preset:
        config_dir = getattr(args, "config_dir", None) or settings.config_dir
        manager = ConfigManager(str(config_dir))
        try:
            return manager.load_config(preset), None
        except FileNotFoundError:
            known = ", ".join(manager.list_configs()) or "none"
            raise ConfigError(
                f"unknown preset {preset!r} in {config_dir} (available: {known})"
            ) from None
    return {}, None


def execute(
    args: argparse.Namespace, settings: RuntimeSettings, console: Console
) -> int:
    """Run one subcommand, write its manifest and enforce the failure budget."""
    builder, runner, wants_settings = COMMANDS[args.command]
    base, manifest = _base_config(args, settings)
    config = builder(args, base)
    if manifest is not None:
        check_replay(manifest, config, force=bool(getattr(args, "force", False)))

    out = ensure_directory(args.out or Path(settings.out_dir) / args.command)
    started = time.perf_counter()
    if wants_settings:
        result = runner(config, args, out, console, settings)
    else:
        result = runner(config, args, out, console)
    elapsed = time.perf_counter() - started

    manifest_path = out / "manifest.json"
    save_json(
        run_manifest(args.command, config, result.seed, result.outputs, elapsed),
        manifest_path,
    )
    logger.info(
        "%s finished in %s -> %s", args.command, format_duration(elapsed), manifest_path
    )

    budget = args.failure_budget
    if budget is None:
        budget = settings.failure_budget
    if result.failures > budget:
        raise FailureBudgetExceeded(result.failures, budget)
    return 0

"""
Experiment Sweeps
Feasibility sweep over (N, kappa), contagion sweep over (kappa, theta, method),
logistic fits of the contagion curves, and the closed-form feasibility laws the
sweeps are checked against.

Every trial owns the random stream keyed by (seed, N, kappa index, trial), so a
row of any output table can be recomputed from the plan and its key alone.
Records come back in sorted key order whatever the execution order.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from enum import Enum
from functools import partial
from typing import (
    Any,
    Callable,
    Dict,
    Iterable,
    List,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
    TypeVar,
)

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .contagion import DEFAULT_CAPITAL, StressConfig, default_fraction, fit_logistic
from .core import (
    AdjacencyMatrix,
    BalanceSheet,
    ExposureMatrix,
    ReconstructionReport,
    adjacency_entropy,
    entropy_normalized,
)
from .errors import ConfigError, DomainError, FitDegenerateError, InterbankError
from .netgen import (
    UINT64_MAX,
    RngStream,
    entropy_seed,
    random_adjacency,
    random_balance_sheet,
    random_ground_truth,
)
from .reconstruct import Method, SolverConfig, reconstruct

logger = logging.getLogger(__name__)

# stream id layout: n << 40 | kappa index << 24 | trial
_TRIAL_BITS = 24
_KAPPA_BITS = 16
MAX_TRIALS = 1 << _TRIAL_BITS
MAX_GRID_POINTS = 1 << _KAPPA_BITS
MAX_N = 1 << 24

T = TypeVar("T")
R = TypeVar("R")
ProgressHook = Callable[[], None]


class ContagionMethod(str, Enum):
    TRUE = "true"
    ME = "me"
    SME = "sme"


class TrialStatus(str, Enum):
    OK = "ok"
    NONCONVERGED = "nonconverged"
    DIVERGED = "diverged"
    FAILED = "failed"


class Grid(BaseModel):
    """Evenly spaced grid start, start + step, ..., stop with ``steps`` intervals."""

    model_config = ConfigDict(frozen=True)

    start: float
    stop: float
    steps: int = Field(gt=0, lt=MAX_GRID_POINTS)

    @model_validator(mode="after")
    def _ordered(self) -> "Grid":
        if self.stop < self.start:
            raise ValueError(f"grid stop {self.stop} is below start {self.start}")
        return self

    @property
    def step(self) -> float:
        return (self.stop - self.start) / self.steps

    def points(self) -> List[float]:
        values = [self.start + k * self.step for k in range(self.steps)]
        values.append(self.stop)
        return values

    @classmethod
    def parse(cls, text: str) -> Any:
        """Parse ``min:max:steps``."""
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"grid must look like min:max:steps, got {text!r}")
        try:
            start, stop, steps = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError as exc:
            raise ConfigError(f"bad grid {text!r}: {exc}") from exc
        return cls(start=start, stop=stop, steps=steps)


class KappaGrid(Grid):
    @model_validator(mode="after")
    def _open_unit_interval(self) -> "KappaGrid":
        if not (0.0 < self.start and self.stop < 1.0):
            raise ValueError("kappa grid must lie inside (0, 1)")
        return self

    @classmethod
    def spanning(cls, n: int, steps: int) -> "KappaGrid":
        """Grid over the whole reachable range [1/N, 1 - 1/N]."""
        return cls(start=1.0 / n, stop=1.0 - 1.0 / n, steps=steps)


class ThetaGrid(Grid):
    @model_validator(mode="after")
    def _unit_interval(self) -> "ThetaGrid":
        if not (0.0 <= self.start and self.stop <= 1.0):
            raise ValueError("theta grid must lie inside [0, 1]")
        return self


def _default_theta_grid() -> ThetaGrid:
    return ThetaGrid(start=0.0, stop=1.0, steps=50)


class SweepPlan(BaseModel):
    """Everything a sweep needs; two runs of the same plan give identical records.

    Without ``kappa_grid`` or ``kappa_values`` each N gets the spanning grid
    [1/N, 1 - 1/N] with ``steps`` intervals. ``total`` defaults to 1 in the
    feasibility sweep and to N in the contagion sweep.
    """

    model_config = ConfigDict(frozen=True)

    n_values: Tuple[int, ...] = (25, 50)
    kappa_grid: Optional[KappaGrid] = None
    kappa_values: Optional[Tuple[float, ...]] = None
    steps: int = Field(default=50, gt=0, lt=MAX_GRID_POINTS)
    trials: int = Field(default=100, gt=0, lt=MAX_TRIALS)
    delta: float = Field(default=1e-7, gt=0.0, lt=1.0)
    max_iterations: int = Field(default=10_000, gt=0)
    seed: Optional[int] = Field(default=None, ge=0, le=UINT64_MAX)
    epsilon_star: float = Field(default=0.005, gt=0.0, lt=0.5)
    total: Optional[float] = Field(default=None, gt=0.0)
    capital: float = Field(default=DEFAULT_CAPITAL, gt=0.0)
    theta_grid: ThetaGrid = Field(default_factory=_default_theta_grid)
    use_true_support: bool = False
    workers: int = Field(default=1, ge=1)

    @field_validator("n_values")
    @classmethod
    def _sizes(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if not value:
            raise ValueError("n_values must not be empty")
        for n in value:
            if not 2 <= n < MAX_N:
                raise ValueError(f"every N must be in [2, {MAX_N}), got {n}")
        return tuple(sorted(set(value)))

    @field_validator("kappa_values")
    @classmethod
    def _kappas(
        cls, value: Optional[Tuple[float, ...]]
    ) -> Optional[Tuple[float, ...]]:
        if value is None:
            return None
        if not value or len(value) > MAX_GRID_POINTS:
            raise ValueError("kappa_values must hold between 1 and 65536 values")
        if any(not 0.0 < k < 1.0 for k in value):
            raise ValueError("kappa values must lie inside (0, 1)")
        return tuple(sorted(set(value)))

    def kappas_for(self, n: int) -> List[float]:
        if self.kappa_values is not None:
            return list(self.kappa_values)
        if self.kappa_grid is not None:
            return self.kappa_grid.points()
        return KappaGrid.spanning(n, self.steps).points()

    def solver_config(self) -> SolverConfig:
        return SolverConfig(delta=self.delta, max_iterations=self.max_iterations)

    def with_resolved_seed(self) -> "SweepPlan":
        """Same plan with a concrete seed, drawn from OS entropy when missing."""
        if self.seed is not None:
            return self
        seed = entropy_seed()
        logger.info("no seed given, drew %d", seed)
        return self.model_copy(update={"seed": seed})


class GridPoint(NamedTuple):
    n: int
    kappa_index: int
    kappa: float


@dataclass(frozen=True)
class SweepRecord:
    n: int
    kappa: float
    mean_epsilon: float
    mean_sx: float
    sq: float
    predicted_epsilon: float
    feasible: bool
    kappa_star: float
    trials: int
    nonconverged: int = 0
    diverged: int = 0
    failures: int = 0

    def as_row(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class ContagionRecord:
    n: int
    kappa: float
    theta: float
    method: ContagionMethod
    xi_mean: float
    xi_min: float
    xi_max: float
    trials: int
    nonconverged: int = 0
    diverged: int = 0
    failures: int = 0


@dataclass(frozen=True)
class FitRecord:
    n: int
    kappa: float
    method: ContagionMethod
    theta_star: float
    beta: float
    residual: float

    @property
    def beta_over_n(self) -> float:
        return self.beta / self.n


@dataclass(frozen=True)
class ContagionTrial:
    point: GridPoint
    trial: int
    xis: Dict[ContagionMethod, Optional[Tuple[float, ...]]]
    statuses: Dict[ContagionMethod, TrialStatus]


def predicted_epsilon(kappa: float, n: int) -> float:
    """Gaussian feasibility law: 1/2 exp(-(N kappa - 1)^2 / 8)."""
    return 0.5 * math.exp(-((n * kappa - 1.0) ** 2) / 8.0)


def critical_connectivity(epsilon_star: float, n: int) -> float:
    """Smallest kappa with predicted deviation epsilon_star; tends to 0 as N grows."""
    if not 0.0 < epsilon_star < 0.5:
        raise DomainError(f"epsilon_star must be in (0, 0.5), got {epsilon_star}")
    if n < 1:
        raise DomainError(f"n must be positive, got {n}")
    return (1.0 + math.sqrt(8.0 * math.log(1.0 / (2.0 * epsilon_star)))) / n


def boundary_kappa(
    records: Iterable[SweepRecord], epsilon_star: float, n: int
) -> Optional[float]:
    """First grid kappa at size n whose mean deviation is below epsilon_star."""
    for record in sorted((r for r in records if r.n == n), key=lambda r: r.kappa):
        if record.mean_epsilon < epsilon_star:
            return record.kappa
    return None


def law_rms(records: Iterable[SweepRecord], n: int) -> float:
    """RMS gap between measured and predicted deviation at size n."""
    gaps = [
        (r.mean_epsilon - r.predicted_epsilon) ** 2
        for r in records
        if r.n == n and math.isfinite(r.mean_epsilon)
    ]
    if not gaps:
        raise DomainError(f"no finite sweep records for n={n}")
    return math.sqrt(math.fsum(gaps) / len(gaps))


def trial_stream(seed: int, point: GridPoint, trial: int) -> RngStream:
    return RngStream(
        seed=seed,
        stream_id=(point.n << (_TRIAL_BITS + _KAPPA_BITS))
        | (point.kappa_index << _TRIAL_BITS)
        | trial,
    )


def solve_trial(
    method: Method,
    bs: BalanceSheet,
    q: Optional[AdjacencyMatrix],
    cfg: SolverConfig,
) -> Tuple[Optional[ReconstructionReport], TrialStatus]:
    """Run one reconstruction, turning solver errors into a status.

    A report flagged ``diverged``, or a SupportError carrying a partial report,
    is DIVERGED and keeps its last finite iterate. Only errors without any
    usable iterate are FAILED.
    """
    try:
        report = reconstruct(method, bs, q, cfg)
    except InterbankError as err:
        partial_report = getattr(err, "report", None)
        if partial_report is not None:
            logger.debug(
                "%s diverged after %d iterations: %s",
                method.value,
                partial_report.iterations,
                err,
            )
            return partial_report, TrialStatus.DIVERGED
        logger.debug("%s failed: %s", method.value, err)
        return None, TrialStatus.FAILED
    if report.diverged:
        return report, TrialStatus.DIVERGED
    status = TrialStatus.OK if report.converged else TrialStatus.NONCONVERGED
    return report, status


def _run(
    fn: Callable[[T], R],
    tasks: Sequence[T],
    workers: int,
    progress: Optional[ProgressHook],
) -> List[R]:
    results: List[R] = []
    if workers <= 1:
        for task in tasks:
            results.append(fn(task))
            if progress is not None:
                progress()
        return results
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for result in pool.map(fn, tasks):
            results.append(result)
            if progress is not None:
                progress()
    return results


def _grid_points(plan: SweepPlan) -> List[GridPoint]:
    return [
        GridPoint(n, k, kappa)
        for n in plan.n_values
        for k, kappa in enumerate(plan.kappas_for(n))
    ]


def _feasibility_point(plan: SweepPlan, point: GridPoint) -> SweepRecord:
    assert plan.seed is not None
    cfg = plan.solver_config()
    total = plan.total or 1.0
    epsilons: List[float] = []
    entropies: List[float] = []
    counts: Dict[TrialStatus, int] = defaultdict(int)

    for trial in range(plan.trials):
        gen = trial_stream(plan.seed, point, trial).generator()
        bs = random_balance_sheet(point.n, total, gen)
        q = random_adjacency(point.n, point.kappa, gen)
        report, status = solve_trial(Method.SRAS, bs, q, cfg)
        counts[status] += 1
        if report is None:
            continue
        epsilons.append(report.deviation)
        entropies.append(entropy_normalized(report.solution.normalized()))

    mean_eps = math.fsum(epsilons) / len(epsilons) if epsilons else math.nan
    mean_sx = math.fsum(entropies) / len(entropies) if entropies else math.nan
    record = SweepRecord(
        n=point.n,
        kappa=point.kappa,
        mean_epsilon=mean_eps,
        mean_sx=mean_sx,
        sq=adjacency_entropy(point.kappa),
        predicted_epsilon=predicted_epsilon(point.kappa, point.n),
        feasible=mean_eps < plan.epsilon_star,
        kappa_star=critical_connectivity(plan.epsilon_star, point.n),
        trials=len(epsilons),
        nonconverged=counts[TrialStatus.NONCONVERGED],
        diverged=counts[TrialStatus.DIVERGED],
        failures=counts[TrialStatus.FAILED],
    )
    logger.info(
        "n=%d kappa=%.4f eps=%.3e predicted=%.3e",
        point.n,
        point.kappa,
        mean_eps,
        record.predicted_epsilon,
    )
    return record


def sweep_feasibility(
    plan: SweepPlan, progress: Optional[ProgressHook] = None
) -> List[SweepRecord]:
    """SRAS deviation and solution entropy on random supports over (N, kappa)."""
    plan = plan.with_resolved_seed()
    points = _grid_points(plan)
    records = _run(partial(_feasibility_point, plan), points, plan.workers, progress)
    return sorted(records, key=lambda r: (r.n, r.kappa))


def _reconstructed(
    method: ContagionMethod,
    bs: BalanceSheet,
    support: AdjacencyMatrix,
    cfg: SolverConfig,
) -> Tuple[Optional[ExposureMatrix], TrialStatus]:
    if method is ContagionMethod.ME:
        report, status = solve_trial(Method.RAS, bs, None, cfg)
    else:
        report, status = solve_trial(Method.SRAS, bs, support, cfg)
    return (report.solution if report is not None else None), status


def _contagion_trial(
    plan: SweepPlan,
    methods: Tuple[ContagionMethod, ...],
    thetas: Tuple[float, ...],
    task: Tuple[GridPoint, int],
) -> ContagionTrial:
    assert plan.seed is not None
    point, trial = task
    gen = trial_stream(plan.seed, point, trial).generator()
    truth = random_ground_truth(point.n, point.kappa, plan.total or float(point.n), gen)
    fresh = random_adjacency(point.n, point.kappa, gen)
    support = truth.adjacency if plan.use_true_support else fresh
    cfg = plan.solver_config()
    stress = StressConfig(initial_capital=plan.capital)

    xis: Dict[ContagionMethod, Optional[Tuple[float, ...]]] = {}
    statuses: Dict[ContagionMethod, TrialStatus] = {}
    for method in methods:
        if method is ContagionMethod.TRUE:
            x: Optional[ExposureMatrix] = truth.exposures
            statuses[method] = TrialStatus.OK
        else:
            x, statuses[method] = _reconstructed(method, truth.balance, support, cfg)
        xis[method] = (
            None
            if x is None
            else tuple(default_fraction(x, stress.with_theta(t)) for t in thetas)
        )
    return ContagionTrial(point=point, trial=trial, xis=xis, statuses=statuses)


def _summarise(
    point: GridPoint,
    method: ContagionMethod,
    thetas: Tuple[float, ...],
    trials: List[ContagionTrial],
) -> List[ContagionRecord]:
    usable = [t.xis[method] for t in trials if t.xis[method] is not None]
    statuses = [t.statuses[method] for t in trials]
    counts = {s: statuses.count(s) for s in TrialStatus}
    if not usable:
        logger.warning(
            "n=%d kappa=%.4f %s: no usable trial", point.n, point.kappa, method.value
        )
    records = []
    for k, theta in enumerate(thetas):
        values = [series[k] for series in usable if series is not None]
        records.append(
            ContagionRecord(
                n=point.n,
                kappa=point.kappa,
                theta=theta,
                method=method,
                xi_mean=math.fsum(values) / len(values) if values else math.nan,
                xi_min=min(values) if values else math.nan,
                xi_max=max(values) if values else math.nan,
                trials=len(values),
                nonconverged=counts[TrialStatus.NONCONVERGED],
                diverged=counts[TrialStatus.DIVERGED],
                failures=counts[TrialStatus.FAILED],
            )
        )
    return records


def sweep_contagion(
    plan: SweepPlan,
    methods: Iterable[ContagionMethod] = tuple(ContagionMethod),
    progress: Optional[ProgressHook] = None,
) -> List[ContagionRecord]:
    """Mean default fraction per (N, kappa, theta, method) over random ground truths.

    ME is the RAS reconstruction from the true marginals; SME is SRAS on a fresh
    random support of the same kappa, or on the true support when
    ``plan.use_true_support`` is set.
    """
    plan = plan.with_resolved_seed()
    chosen = tuple(m for m in ContagionMethod if m in set(methods))
    if not chosen:
        raise ConfigError("at least one contagion method is required")
    thetas = tuple(plan.theta_grid.points())
    tasks = [
        (point, trial) for point in _grid_points(plan) for trial in range(plan.trials)
    ]
    trials = _run(
        partial(_contagion_trial, plan, chosen, thetas), tasks, plan.workers, progress
    )

    by_point: Dict[GridPoint, List[ContagionTrial]] = defaultdict(list)
    for result in trials:
        by_point[result.point].append(result)

    records: List[ContagionRecord] = []
    for point in sorted(by_point):
        ordered = sorted(by_point[point], key=lambda t: t.trial)
        for method in chosen:
            records.extend(_summarise(point, method, thetas, ordered))
        logger.info("n=%d kappa=%.4f: %d trials", point.n, point.kappa, len(ordered))
    order = list(ContagionMethod)
    return sorted(records, key=lambda r: (r.n, r.theta, r.kappa, order.index(r.method)))


SeriesKey = Tuple[int, float, ContagionMethod]


def fit_sweep(records: Iterable[ContagionRecord]) -> List[FitRecord]:
    """Logistic fit per (N, kappa, method) series; degenerate ones are skipped."""
    series: Dict[SeriesKey, List[ContagionRecord]] = defaultdict(list)
    for record in records:
        if math.isfinite(record.xi_mean):
            series[(record.n, record.kappa, record.method)].append(record)

    order = list(ContagionMethod)
    fits: List[FitRecord] = []
    for key in sorted(series, key=lambda k: (k[0], k[1], order.index(k[2]))):
        n, kappa, method = key
        points = sorted(series[key], key=lambda r: r.theta)
        try:
            fit = fit_logistic([r.theta for r in points], [r.xi_mean for r in points])
        except FitDegenerateError as err:
            logger.warning(
                "skipping n=%d kappa=%.4f %s: %s", n, kappa, method.value, err
            )
            continue
        fits.append(
            FitRecord(
                n=n,
                kappa=kappa,
                method=method,
                theta_star=fit.theta_star,
                beta=fit.beta,
                residual=fit.residual,
            )
        )
    return fits


def midpoint_trend(
    fits: Iterable[FitRecord], method: ContagionMethod = ContagionMethod.TRUE
) -> Tuple[float, float]:
    """(slope, intercept) of the least-squares line theta*(kappa)."""
    chosen = sorted((f for f in fits if f.method is method), key=lambda f: f.kappa)
    if len(chosen) < 2:
        raise DomainError(
            f"need two {method.value} fits for a trend, got {len(chosen)}"
        )
    slope, intercept = np.polyfit(
        [f.kappa for f in chosen], [f.theta_star for f in chosen], deg=1
    )
    return float(slope), float(intercept)


def total_failures(records: Iterable[Any]) -> int:
    """Trials without a usable result, counted once per grid point and method."""
    per_series = {
        (r.n, r.kappa, getattr(r, "method", None)): r.failures for r in records
    }
    return sum(per_series.values())

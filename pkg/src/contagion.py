"""
Contagion Stress Test
Synchronous default cascades on an exposure matrix, aggregation of the default
fraction over single-bank shocks, and the logistic fit of the default transition.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import FrozenSet, List, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.special import expit

from .core import ExposureMatrix, FloatArray
from .errors import DomainError, FitDegenerateError

logger = logging.getLogger(__name__)

DEFAULT_CAPITAL = 0.01
FIT_GRADIENT_TOL = 1e-9
FIT_MAX_STEPS = 200


class Aggregate(str, Enum):
    MEAN_OVER_ORIGINS = "mean"
    PER_ORIGIN = "per_origin"


class StressConfig(BaseModel):
    """Initial capital, loss given default and how per-origin results are summarised.

    ``initial_capital`` is either one value for every bank or a full vector.
    """

    model_config = ConfigDict(frozen=True)

    initial_capital: Union[float, Tuple[float, ...]] = DEFAULT_CAPITAL
    theta: float = Field(default=1.0, ge=0.0, le=1.0)
    aggregate: Aggregate = Aggregate.MEAN_OVER_ORIGINS

    @field_validator("initial_capital")
    @classmethod
    def _positive_capital(
        cls, value: Union[float, Tuple[float, ...]]
    ) -> Union[float, Tuple[float, ...]]:
        values = (value,) if isinstance(value, (int, float)) else value
        if len(values) == 0 or any(not (c > 0) for c in values):
            raise ValueError("initial capital must be strictly positive")
        return value

    def capital_vector(self, n: int) -> FloatArray:
        if isinstance(self.initial_capital, tuple):
            if len(self.initial_capital) != n:
                raise DomainError(
                    f"capital vector has {len(self.initial_capital)} entries, "
                    f"expected {n}"
                )
            return np.array(self.initial_capital, dtype=np.float64)
        return np.full(n, float(self.initial_capital))

    def with_theta(self, theta: float) -> "StressConfig":
        return self.model_copy(update={"theta": theta})


@dataclass(frozen=True, eq=False)
class CascadeOutcome:
    """Banks failed after shocking ``origin``.

    ``rounds`` counts only the rounds that produced new failures.
    """

    origin: int
    failed: FrozenSet[int]
    rounds: int
    fraction: float
    capital: FloatArray

    def __post_init__(self) -> None:
        if self.origin not in self.failed:
            raise DomainError("the shocked bank must be in the failed set")
        if (self.rounds == 0) != (len(self.failed) == 1):
            raise DomainError("rounds must be zero exactly when only the origin failed")


@dataclass(frozen=True)
class LogisticFit:
    """xi(theta) = 1 / (1 + exp(-beta (theta - theta_star)))."""

    theta_star: float
    beta: float
    residual: float

    def predict(self, thetas: ArrayLike) -> FloatArray:
        values = np.asarray(thetas, dtype=np.float64)
        return logistic(values, self.theta_star, self.beta)


def logistic(thetas: FloatArray, theta_star: float, beta: float) -> FloatArray:
    return np.asarray(expit(beta * (thetas - theta_star)))


def cascade(x: ExposureMatrix, cfg: StressConfig, origin: int) -> CascadeOutcome:
    """Propagate the failure of ``origin`` in synchronous rounds.

    Each round charges every surviving bank j with theta * sum of x_jn over the
    banks n that failed in the previous round only; j fails once its capital is
    <= 0. Stops when a round produces no new failure.
    """
    n = x.n
    if not 0 <= origin < n:
        raise DomainError(f"origin {origin} outside 0..{n - 1}")
    exposures = x.entries
    capital = cfg.capital_vector(n)
    failed = np.zeros(n, dtype=bool)
    failed[origin] = True
    newly = np.array([origin])
    rounds = 0

    while newly.size:
        alive = ~failed
        loss = cfg.theta * exposures[:, newly].sum(axis=1)
        capital[alive] -= loss[alive]
        newly = np.flatnonzero(alive & (capital <= 0.0))
        if newly.size:
            rounds += 1
            failed[newly] = True

    members = frozenset(int(i) for i in np.flatnonzero(failed))
    return CascadeOutcome(
        origin=origin,
        failed=members,
        rounds=rounds,
        fraction=len(members) / n,
        capital=capital,
    )


def stress_test(x: ExposureMatrix, cfg: StressConfig) -> List[CascadeOutcome]:
    """One cascade per origin, in origin order."""
    return [cascade(x, cfg, origin) for origin in range(x.n)]


def default_fraction(x: ExposureMatrix, cfg: StressConfig) -> float:
    """Mean default fraction over all single-bank shocks."""
    if cfg.aggregate is not Aggregate.MEAN_OVER_ORIGINS:
        raise DomainError("default_fraction needs aggregate=MEAN_OVER_ORIGINS")
    fractions = [outcome.fraction for outcome in stress_test(x, cfg)]
    return math.fsum(fractions) / len(fractions)


def fraction_summary(outcomes: Sequence[CascadeOutcome]) -> Tuple[float, float, float]:
    """(mean, min, max) default fraction over the given outcomes."""
    if not outcomes:
        raise DomainError("no cascade outcomes to summarise")
    fractions = [o.fraction for o in outcomes]
    return math.fsum(fractions) / len(fractions), min(fractions), max(fractions)


def _residuals(
    params: FloatArray, thetas: FloatArray, xis: FloatArray
) -> Tuple[FloatArray, FloatArray]:
    theta_star, beta = params
    f = logistic(thetas, theta_star, beta)
    slope = f * (1.0 - f)
    jac = np.column_stack((-beta * slope, (thetas - theta_star) * slope))
    return f - xis, jac


def fit_logistic(thetas: ArrayLike, xis: ArrayLike) -> LogisticFit:
    """Least-squares logistic fit by damped Gauss-Newton.

    Starts from theta* at the sample closest to xi = 0.5 and beta = 4 x the
    steepest finite-difference slope; stops when the gradient norm is <= 1e-9,
    the step stalls, or after 200 steps.
    """
    t = np.asarray(thetas, dtype=np.float64)
    y = np.asarray(xis, dtype=np.float64)
    if t.ndim != 1 or t.shape != y.shape:
        raise DomainError("thetas and xis must be vectors of equal length")
    if t.size < 5:
        raise FitDegenerateError(f"need at least 5 points, got {t.size}")
    if np.ptp(y) == 0.0:
        raise FitDegenerateError("all default fractions are equal")

    order = np.argsort(t, kind="stable")
    t, y = t[order], y[order]
    dt = np.diff(t)
    rising = dt > 0
    slopes = np.diff(y)[rising] / dt[rising]
    if slopes.size == 0 or slopes.max() <= 0.0:
        raise FitDegenerateError("no increasing transition in the data")

    params = np.array([t[np.argmin(np.abs(y - 0.5))], 4.0 * slopes.max()])
    residual, jac = _residuals(params, t, y)
    cost = float(residual @ residual)

    for _ in range(FIT_MAX_STEPS):
        if float(np.linalg.norm(jac.T @ residual)) <= FIT_GRADIENT_TOL:
            break
        step = np.linalg.lstsq(jac, -residual, rcond=None)[0]
        scale = 1.0
        accepted = False
        while scale > 1e-12:
            trial = params + scale * step
            if trial[1] > 0:
                trial_residual, trial_jac = _residuals(trial, t, y)
                trial_cost = float(trial_residual @ trial_residual)
                if trial_cost < cost:
                    accepted = True
                    break
            scale *= 0.5
        if not accepted:
            break
        params, residual, jac, cost = trial, trial_residual, trial_jac, trial_cost

    theta_star, beta = (float(v) for v in params)
    if not (math.isfinite(theta_star) and math.isfinite(beta) and beta > 0):
        raise FitDegenerateError(f"fit diverged (theta*={theta_star}, beta={beta})")
    rms = math.sqrt(cost / t.size)
    logger.debug("logistic fit theta*=%.4f beta=%.3f rms=%.3e", theta_star, beta, rms)
    return LogisticFit(theta_star=theta_star, beta=beta, residual=rms)

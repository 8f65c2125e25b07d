"""
Exposure Reconstruction
Closed-form maximum entropy, RAS against the zero-diagonal prior, and the sparse
SRAS fixed point on an arbitrary binary support.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .core import (
    AdjacencyMatrix,
    BalanceSheet,
    ExposureMatrix,
    FloatArray,
    ReconstructionReport,
    constraint_deviation,
)
from .errors import DomainError, InfeasibleError, SupportError

logger = logging.getLogger(__name__)

# divisor floor below which a row/column is treated as empty
UNDERFLOW_FLOOR = 1e-300


class Method(str, Enum):
    ME = "me"
    RAS = "ras"
    SRAS = "sras"


class SolverConfig(BaseModel):
    """Stopping rule shared by RAS and SRAS."""

    model_config = ConfigDict(frozen=True)

    delta: float = Field(default=1e-7, gt=0.0, lt=1.0)
    max_iterations: int = Field(default=100_000, gt=0)
    record_history: bool = False


@dataclass(frozen=True, eq=False)
class ScalingFactors:
    """SRAS state: x_ij = q_ij psi_i phi_j."""

    psi: FloatArray
    phi: FloatArray

    def __post_init__(self) -> None:
        if self.psi.shape != self.phi.shape:
            raise DomainError("psi and phi must have the same length")

    def exposures(self, q: AdjacencyMatrix) -> ExposureMatrix:
        with np.errstate(over="ignore", invalid="ignore"):
            outer = np.multiply.outer(self.psi, self.phi)
        return ExposureMatrix(np.where(q.entries == 1, outer, 0.0))

    def regauged(self, c: float) -> "ScalingFactors":
        """Same exposures, different gauge: (c psi, phi / c)."""
        if c <= 0:
            raise DomainError(f"gauge factor must be positive, got {c}")
        return ScalingFactors(psi=self.psi * c, phi=self.phi / c)


def _check_divisor(values: FloatArray, axis: str) -> Optional[SupportError]:
    bad = np.flatnonzero(~np.isfinite(values) | (values < UNDERFLOW_FLOOR))
    if bad.size == 0:
        return None
    k = int(bad[0])
    return SupportError(
        f"{axis} {k} sum {values[k]!r} left the representable range",
        axis=axis,
        index=k,
    )


def _step_norm(*deltas: FloatArray) -> float:
    """2-norm of the stacked deltas, scaled so squaring cannot overflow."""
    d = np.concatenate(deltas)
    scale = float(np.max(np.abs(d)))
    if scale == 0.0 or not math.isfinite(scale):
        return scale
    with np.errstate(under="ignore"):
        return scale * math.sqrt(float(np.sum((d / scale) ** 2)))


def me_dense(bs: BalanceSheet) -> ExposureMatrix:
    """Maximum entropy solution x_ij = a_i l_j (divided by Lambda when Lambda != 1)."""
    return ExposureMatrix(np.multiply.outer(bs.assets, bs.liabilities) / bs.total)


def zero_diagonal_prior(bs: BalanceSheet) -> ExposureMatrix:
    """ME matrix with the self-exposures removed."""
    if bs.n < 2:
        raise InfeasibleError("a zero-diagonal prior needs at least two banks")
    x0 = np.multiply.outer(bs.assets, bs.liabilities) / bs.total
    np.fill_diagonal(x0, 0.0)
    return ExposureMatrix(x0)


def iteration_cost(n: int, method: Method) -> int:
    """Multiply-accumulate visits in one complete main-loop iteration."""
    if n < 2:
        raise DomainError(f"n must be >= 2, got {n}")
    method = Method(method)
    if method is Method.RAS:
        return 4 * n * n
    if method is Method.SRAS:
        return 2 * n * n
    raise DomainError(f"{method.value} has no iterative main loop")


@dataclass
class IterationState:
    iterations: int = 0
    eta: float = math.inf
    converged: bool = False
    diverged: bool = False
    macs: int = 0
    history: List[float] = field(default_factory=list)

    def step(self, eta: float, macs: int, cfg: SolverConfig) -> None:
        self.iterations += 1
        self.macs += macs
        self.eta = eta
        if cfg.record_history:
            self.history.append(eta)


def _report(
    method: Method,
    bs: BalanceSheet,
    x: ExposureMatrix,
    state: IterationState,
    cfg: SolverConfig,
) -> ReconstructionReport:
    return ReconstructionReport(
        method=method.value,
        solution=x,
        iterations=state.iterations,
        final_step=state.eta,
        deviation=constraint_deviation(x, bs),
        converged=state.converged,
        delta=cfg.delta,
        mac_count=state.macs,
        history=tuple(state.history),
        diverged=state.diverged,
    )


def me_report(
    bs: BalanceSheet, cfg: Optional[SolverConfig] = None
) -> ReconstructionReport:
    state = IterationState(eta=0.0, converged=True)
    return _report(Method.ME, bs, me_dense(bs), state, cfg or SolverConfig())


def ras(bs: BalanceSheet, cfg: Optional[SolverConfig] = None) -> ReconstructionReport:
    """KL projection of the zero-diagonal prior onto the marginals.

    Alternates row and column scaling until the Frobenius distance between
    successive complete iterations drops below delta. Exceeding max_iterations
    returns converged=False.
    """
    cfg = cfg or SolverConfig()
    x = np.array(zero_diagonal_prior(bs).entries)
    a, l = bs.assets, bs.liabilities
    state = IterationState()

    while state.iterations < cfg.max_iterations:
        prev = x.copy()
        rows = x.sum(axis=1)
        visits = x.size
        err = _check_divisor(rows, "row")
        if err is None:
            x *= (a / rows)[:, np.newaxis]
            cols = x.sum(axis=0)
            visits += 2 * x.size
            err = _check_divisor(cols, "column")
        if err is not None:
            err.report = _report(Method.RAS, bs, ExposureMatrix(prev), state, cfg)
            raise err
        x *= (l / cols)[np.newaxis, :]
        visits += x.size
        state.step(float(np.linalg.norm(x - prev)), visits, cfg)
        if state.eta < cfg.delta:
            state.converged = True
            break

    report = _report(Method.RAS, bs, ExposureMatrix(x), state, cfg)
    _log_outcome(report, cfg)
    return report


def sras(
    bs: BalanceSheet, q: AdjacencyMatrix, cfg: Optional[SolverConfig] = None
) -> ReconstructionReport:
    """Sparse ME solution on the support q.

    Iterates psi_i <- a_i / sum_j q_ij phi_j, then phi_j <- l_j / sum_i q_ij psi_i,
    from psi = a, phi = l, until the 2-norm of the change in (psi, phi) is <= delta.
    Convergence says nothing about feasibility; read ``deviation`` for that.

    On a support that cannot carry the marginals the factors drift apart. Once
    a row or column mass leaves the representable range the loop stops and the
    last finite iterate is returned with ``diverged=True``.
    """
    cfg = cfg or SolverConfig()
    factors, state = sras_factors(bs, q, cfg)
    report = _report(Method.SRAS, bs, factors.exposures(q), state, cfg)
    _log_outcome(report, cfg)
    return report


def sras_factors(
    bs: BalanceSheet, q: AdjacencyMatrix, cfg: SolverConfig
) -> Tuple[ScalingFactors, IterationState]:
    """Run the SRAS main loop and return the raw scaling state."""
    if q.n != bs.n:
        raise DomainError(f"support is {q.n}x{q.n} but the balance sheet has N={bs.n}")
    q.require_support()

    qf = q.as_float()
    a, l = bs.assets, bs.liabilities
    psi = a.copy()
    phi = l.copy()
    state = IterationState()

    while state.iterations < cfg.max_iterations:
        with np.errstate(over="ignore", under="ignore", invalid="ignore"):
            row_mass = qf @ phi
            visits = qf.size
            err = _check_divisor(row_mass, "row")
            if err is None:
                psi_next = a / row_mass
                col_mass = psi_next @ qf
                visits += qf.size
                err = _check_divisor(col_mass, "column")
        if err is not None:
            # gauge drift: keep the last finite iterate
            logger.info("SRAS stopped after %d iterations: %s", state.iterations, err)
            state.diverged = True
            break
        phi_next = l / col_mass
        eta = _step_norm(psi_next - psi, phi_next - phi)
        psi, phi = psi_next, phi_next
        state.step(eta, visits, cfg)
        if state.eta <= cfg.delta:
            state.converged = True
            break

    return ScalingFactors(psi, phi), state


def _log_outcome(report: ReconstructionReport, cfg: SolverConfig) -> None:
    if report.converged:
        logger.debug(
            "%s n=%d converged in %d iterations (eta=%.3e, epsilon=%.3e)",
            report.method.upper(),
            report.n,
            report.iterations,
            report.final_step,
            report.deviation,
        )
    elif report.diverged:
        logger.warning(
            "%s n=%d diverged after %d iterations (epsilon=%.3e)",
            report.method.upper(),
            report.n,
            report.iterations,
            report.deviation,
        )
    else:
        logger.warning(
            "%s n=%d stopped at max_iterations=%d (eta=%.3e, epsilon=%.3e)",
            report.method.upper(),
            report.n,
            cfg.max_iterations,
            report.final_step,
            report.deviation,
        )


def reconstruct(
    method: Method,
    bs: BalanceSheet,
    q: Optional[AdjacencyMatrix] = None,
    cfg: Optional[SolverConfig] = None,
) -> ReconstructionReport:
    """Dispatch to me/ras/sras; SRAS requires a support."""
    method = Method(method)
    if method is Method.ME:
        return me_report(bs, cfg)
    if method is Method.RAS:
        return ras(bs, cfg)
    if q is None:
        raise DomainError("SRAS needs a support matrix")
    return sras(bs, q, cfg)

"""
Core Types and Metrics
Balance sheets, exposure and adjacency matrices, and the diagnostics shared by
the reconstruction, generation and stress-testing modules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import rel_entr, xlogy

from .errors import (
    DomainError,
    InfiniteDivergenceError,
    NormalizationError,
    SupportError,
)

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int8]

# relative tolerance for sum(a) == sum(l) == total
MARGINAL_RTOL = 1e-9
# absolute tolerance for "entries sum to one"
NORMALIZATION_ATOL = 1e-9


def _readonly(values: ArrayLike, dtype: Any) -> Any:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class BalanceSheet:
    """Observed interbank totals: assets a_i are row sums, liabilities l_j columns."""

    assets: FloatArray
    liabilities: FloatArray
    total: float

    def __post_init__(self) -> None:
        assets = _readonly(self.assets, np.float64)
        liabilities = _readonly(self.liabilities, np.float64)
        object.__setattr__(self, "assets", assets)
        object.__setattr__(self, "liabilities", liabilities)
        object.__setattr__(self, "total", float(self.total))

        if assets.ndim != 1 or assets.size == 0:
            raise DomainError("assets must be a non-empty vector")
        if liabilities.shape != assets.shape:
            raise DomainError(
                "assets and liabilities differ in length: "
                f"{assets.size} != {liabilities.size}"
            )
        if not (np.all(assets > 0) and np.all(liabilities > 0)):
            raise DomainError("assets and liabilities must be strictly positive")
        if not (math.isfinite(self.total) and self.total > 0):
            raise DomainError(f"total must be positive, got {self.total}")
        tol = MARGINAL_RTOL * self.total
        if abs(float(assets.sum()) - self.total) > tol:
            raise DomainError(f"sum of assets {assets.sum()!r} != total {self.total!r}")
        if abs(float(liabilities.sum()) - self.total) > tol:
            raise DomainError(
                f"sum of liabilities {liabilities.sum()!r} != total {self.total!r}"
            )

    @property
    def n(self) -> int:
        return int(self.assets.size)

    @classmethod
    def from_vectors(cls, assets: ArrayLike, liabilities: ArrayLike) -> "BalanceSheet":
        """Build a balance sheet whose total is the sum of the assets."""
        a = np.asarray(assets, dtype=np.float64)
        return cls(assets=a, liabilities=np.asarray(liabilities), total=float(a.sum()))

    def scaled(self, factor: float) -> "BalanceSheet":
        if factor <= 0:
            raise DomainError(f"scale factor must be positive, got {factor}")
        return BalanceSheet(
            assets=self.assets * factor,
            liabilities=self.liabilities * factor,
            total=self.total * factor,
        )


@dataclass(frozen=True, eq=False)
class ExposureMatrix:
    """Dense N x N matrix of bilateral exposures; x_ij is lent by bank i to bank j."""

    entries: FloatArray

    def __post_init__(self) -> None:
        entries = _readonly(self.entries, np.float64)
        object.__setattr__(self, "entries", entries)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise DomainError(f"exposure matrix must be square, got {entries.shape}")
        if entries.size == 0:
            raise DomainError("exposure matrix must not be empty")
        if not np.all(np.isfinite(entries)):
            raise DomainError("exposure matrix has non-finite entries")
        if np.any(entries < 0):
            raise DomainError("exposure matrix has negative entries")

    @property
    def n(self) -> int:
        return int(self.entries.shape[0])

    def row_sums(self) -> FloatArray:
        return np.asarray(self.entries.sum(axis=1))

    def col_sums(self) -> FloatArray:
        return np.asarray(self.entries.sum(axis=0))

    def total(self) -> float:
        return float(self.entries.sum())

    def has_zero_diagonal(self) -> bool:
        return bool(np.all(np.diag(self.entries) == 0))

    def normalized(self) -> "ExposureMatrix":
        """Rescale so the entries sum to one."""
        total = self.total()
        if total <= 0:
            raise NormalizationError("cannot normalize an all-zero matrix")
        return ExposureMatrix(self.entries / total)

    def support(self) -> "AdjacencyMatrix":
        """Heaviside pattern Theta(x): 1 where x_ij > 0."""
        return AdjacencyMatrix((self.entries > 0).astype(np.int8))


@dataclass(frozen=True, eq=False)
class AdjacencyMatrix:
    """Binary N x N support matrix q with zero diagonal."""

    entries: IntArray

    def __post_init__(self) -> None:
        raw = np.asarray(self.entries)
        if raw.ndim != 2 or raw.shape[0] != raw.shape[1] or raw.size == 0:
            raise DomainError(f"adjacency matrix must be square, got {raw.shape}")
        if not np.all((raw == 0) | (raw == 1)):
            raise DomainError("adjacency matrix entries must be 0 or 1")
        entries = _readonly(raw, np.int8)
        if np.any(np.diag(entries) != 0):
            raise DomainError("adjacency matrix must have a zero diagonal")
        object.__setattr__(self, "entries", entries)

    @property
    def n(self) -> int:
        return int(self.entries.shape[0])

    def count(self) -> int:
        return int(self.entries.sum(dtype=np.int64))

    def row_sums(self) -> NDArray[np.int64]:
        return np.asarray(self.entries.sum(axis=1, dtype=np.int64))

    def col_sums(self) -> NDArray[np.int64]:
        return np.asarray(self.entries.sum(axis=0, dtype=np.int64))

    def satisfies_support_condition(self) -> bool:
        return bool(np.all(self.row_sums() >= 1) and np.all(self.col_sums() >= 1))

    def require_support(self) -> None:
        """Raise SupportError naming the first empty row or column."""
        empty_rows = np.flatnonzero(self.row_sums() == 0)
        if empty_rows.size:
            i = int(empty_rows[0])
            raise SupportError(f"row {i} of the support is empty", axis="row", index=i)
        empty_cols = np.flatnonzero(self.col_sums() == 0)
        if empty_cols.size:
            j = int(empty_cols[0])
            raise SupportError(
                f"column {j} of the support is empty", axis="column", index=j
            )

    def as_float(self) -> FloatArray:
        return self.entries.astype(np.float64)

    @classmethod
    def full(cls, n: int) -> "AdjacencyMatrix":
        """All ones off the diagonal (maximum connectivity 1 - 1/n)."""
        if n < 2:
            raise DomainError(f"a full support needs n >= 2, got {n}")
        return cls(np.ones((n, n), dtype=np.int8) - np.eye(n, dtype=np.int8))

    @classmethod
    def from_permutation(cls, perm: ArrayLike) -> "AdjacencyMatrix":
        p = np.asarray(perm, dtype=np.int64)
        q = np.zeros((p.size, p.size), dtype=np.int8)
        q[np.arange(p.size), p] = 1
        return cls(q)


@dataclass(frozen=True, eq=False)
class ReconstructionReport:
    """Outcome of a reconstruction run."""

    method: str
    solution: ExposureMatrix
    iterations: int
    final_step: float
    deviation: float
    converged: bool
    delta: float
    mac_count: int = 0
    history: Tuple[float, ...] = ()
    diverged: bool = False

    def __post_init__(self) -> None:
        if self.iterations < 0:
            raise DomainError("iterations must be nonnegative")
        if self.converged and self.diverged:
            raise DomainError("a report cannot be both converged and diverged")
        if self.converged and not self.final_step <= self.delta:
            raise DomainError(
                f"converged report has final step {self.final_step} "
                f"> delta {self.delta}"
            )

    @property
    def n(self) -> int:
        return self.solution.n

    def to_json_dict(self, solution_path: Optional[str] = None) -> Dict[str, Any]:
        return {
            "method": self.method,
            "n": self.n,
            "delta": self.delta,
            "iterations": self.iterations,
            "eta": self.final_step,
            "epsilon": self.deviation,
            "converged": self.converged,
            "diverged": self.diverged,
            "mac_count": self.mac_count,
            "solution": solution_path,
        }


def normalize(
    bs: BalanceSheet, x: Optional[ExposureMatrix] = None
) -> Tuple[BalanceSheet, Optional[ExposureMatrix]]:
    """Divide a balance sheet (and optionally its matrix) by the total volume."""
    factor = 1.0 / bs.total
    scaled_x = ExposureMatrix(x.entries * factor) if x is not None else None
    return bs.scaled(factor), scaled_x


def entropy_normalized(x: ExposureMatrix) -> float:
    """Entropy of a unit-mass matrix divided by 2 ln N, using 0 ln 0 = 0."""
    if x.n < 2:
        raise DomainError(f"normalized entropy needs N >= 2, got {x.n}")
    total = x.total()
    if abs(total - 1.0) > NORMALIZATION_ATOL:
        raise NormalizationError(f"entries must sum to 1, got {total!r}")
    return float(-xlogy(x.entries, x.entries).sum() / (2.0 * math.log(x.n)))


def adjacency_entropy(kappa: float, closed: bool = False) -> float:
    """Binary entropy (bits) of the connectivity kappa.

    With ``closed=True`` the endpoints 0 and 1 are accepted and map to 0.
    """
    if closed and kappa in (0.0, 1.0):
        return 0.0
    if not 0.0 < kappa < 1.0:
        raise DomainError(f"kappa must lie in (0, 1), got {kappa}")
    return -kappa * math.log2(kappa) - (1.0 - kappa) * math.log2(1.0 - kappa)


def kl_divergence(x: ExposureMatrix, x0: ExposureMatrix) -> float:
    """Kullback-Leibler divergence D(x || x0) summed over cells with x_ij > 0."""
    if x.entries.shape != x0.entries.shape:
        raise DomainError(f"shape mismatch: {x.entries.shape} vs {x0.entries.shape}")
    leaking = (x.entries > 0) & (x0.entries == 0)
    if np.any(leaking):
        i, j = (int(v) for v in np.argwhere(leaking)[0])
        raise InfiniteDivergenceError(
            f"x[{i},{j}] > 0 where the reference is zero; divergence is infinite"
        )
    return float(rel_entr(x.entries, x0.entries).sum())


def constraint_deviation(x: ExposureMatrix, bs: BalanceSheet) -> float:
    """Relative L2 deviation of the row/column sums of x from the balance sheet."""
    if x.n != bs.n:
        raise DomainError(f"dimension mismatch: matrix N={x.n}, balance sheet N={bs.n}")
    row_err = x.row_sums() - bs.assets
    col_err = x.col_sums() - bs.liabilities
    num = float(np.dot(row_err, row_err) + np.dot(col_err, col_err))
    den = float(np.dot(bs.assets, bs.assets) + np.dot(bs.liabilities, bs.liabilities))
    return math.sqrt(num / den)


def connectivity(q: AdjacencyMatrix) -> float:
    """Fraction of ones in q, N^-2 sum q_ij."""
    return q.count() / float(q.n * q.n)


def sparsity(q: AdjacencyMatrix) -> float:
    return 1.0 - connectivity(q)

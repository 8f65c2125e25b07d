"""
Random Network Generation
Seeded supports with an exact number of links, synthetic balance sheets and
sparse ground-truth exposure matrices.

Randomness comes from numpy's counter-based Philox generator keyed by
(seed, stream_id) through SeedSequence, so every trial of a sweep owns an
independent, reproducible stream. ``Generator.integers`` draws bounded integers
by rejection, which keeps rand(m) free of modulo bias.

The extra links of ``random_adjacency`` are placed by a uniform cell draw followed
by forward linear probing over the column-major cell index. Probing slightly favours
cells that follow long occupied runs; the effect only matters close to full
connectivity.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from numpy.typing import NDArray

from .core import AdjacencyMatrix, BalanceSheet, ExposureMatrix, FloatArray
from .errors import DomainError, InfeasibleError

logger = logging.getLogger(__name__)

UINT64_MAX = 2**64 - 1
# slack when comparing kappa against its closed range
KAPPA_SLACK = 1e-12


@dataclass(frozen=True)
class RngStream:
    """Named random stream: a 64-bit seed plus a per-trial stream id."""

    seed: int
    stream_id: int = 0

    def __post_init__(self) -> None:
        for name in ("seed", "stream_id"):
            value = getattr(self, name)
            if not 0 <= value <= UINT64_MAX:
                raise DomainError(f"{name} must be an unsigned 64-bit integer")

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(seq))


RngLike = Union[RngStream, np.random.Generator]


def entropy_seed() -> int:
    """Fresh 64-bit seed from OS entropy, for runs started without one."""
    return int(np.random.SeedSequence().entropy) & UINT64_MAX


def _generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    return rng


def _open_uniform(gen: np.random.Generator, size: int) -> FloatArray:
    """Uniform draws on the open interval (0, 1)."""
    u = gen.random(size)
    zero = u == 0.0
    while np.any(zero):
        u[zero] = gen.random(int(zero.sum()))
        zero = u == 0.0
    return u


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """A synthetic 'true' exposure matrix with its support and marginals."""

    exposures: ExposureMatrix
    adjacency: AdjacencyMatrix
    balance: BalanceSheet

    def __post_init__(self) -> None:
        if not np.array_equal(self.exposures.support().entries, self.adjacency.entries):
            raise DomainError("adjacency must equal the support of the exposures")


def kappa_bounds(n: int) -> Tuple[float, float]:
    """Connectivity range [1/n, 1 - 1/n] a zero-diagonal support can reach."""
    if n < 2:
        raise DomainError(f"n must be >= 2, got {n}")
    return 1.0 / n, 1.0 - 1.0 / n


def edge_count(n: int, kappa: float) -> int:
    """Ones for connectivity kappa: round-half-up(kappa n^2) clamped to [n, n^2 - n]."""
    target = int(math.floor(kappa * n * n + 0.5))
    return min(max(target, n), n * n - n)


def _check_kappa(n: int, kappa: float) -> None:
    lo, hi = kappa_bounds(n)
    if not (lo - KAPPA_SLACK <= kappa <= hi + KAPPA_SLACK):
        raise DomainError(f"kappa={kappa} outside [{lo:.6g}, {hi:.6g}] for n={n}")


def random_derangement(n: int, rng: RngLike) -> NDArray[np.int64]:
    """Random single n-cycle permutation (so p_i != i for every i)."""
    if n < 2:
        raise InfeasibleError(f"no derangement of {n} element exists")
    gen = _generator(rng)
    p = np.arange(n, dtype=np.int64)
    for i in range(n - 1, 0, -1):
        j = int(gen.integers(0, i))
        p[i], p[j] = p[j], p[i]
    return p


def random_adjacency(n: int, kappa: float, rng: RngLike) -> AdjacencyMatrix:
    """Random zero-diagonal support with exactly edge_count(n, kappa) ones.

    A derangement permutation matrix guarantees every row and column is covered;
    the remaining ones land on uniformly drawn free off-diagonal cells.
    """
    _check_kappa(n, kappa)
    gen = _generator(rng)
    ones = edge_count(n, kappa)
    cells = n * n

    q = np.zeros((n, n), dtype=np.int8)
    q[np.arange(n), random_derangement(n, gen)] = 1
    for _ in range(ones - n):
        m = int(gen.integers(0, cells))
        j, i = divmod(m, n)
        while q[i, j] or i == j:
            m = (m + 1) % cells
            j, i = divmod(m, n)
        q[i, j] = 1
    return AdjacencyMatrix(q)


def random_balance_sheet(n: int, total: float, rng: RngLike) -> BalanceSheet:
    """Independent uniform(0, 1) assets and liabilities, each rescaled to total."""
    if n < 2:
        raise DomainError(f"n must be >= 2, got {n}")
    if total <= 0:
        raise DomainError(f"total must be positive, got {total}")
    gen = _generator(rng)
    assets = _open_uniform(gen, n)
    liabilities = _open_uniform(gen, n)
    return BalanceSheet(
        assets=assets * (total / assets.sum()),
        liabilities=liabilities * (total / liabilities.sum()),
        total=total,
    )


def random_ground_truth(
    n: int, kappa: float, total: float, rng: RngLike
) -> GroundTruth:
    """Random support with i.i.d. uniform(0, 1) link weights rescaled to total mass."""
    if total <= 0:
        raise DomainError(f"total must be positive, got {total}")
    gen = _generator(rng)
    q = random_adjacency(n, kappa, gen)
    links = q.entries == 1
    weights = np.zeros((n, n), dtype=np.float64)
    weights[links] = _open_uniform(gen, q.count())
    weights *= total / weights.sum()
    x = ExposureMatrix(weights)
    balance = BalanceSheet(assets=x.row_sums(), liabilities=x.col_sums(), total=total)
    logger.debug("ground truth n=%d kappa=%.4f links=%d", n, kappa, q.count())
    return GroundTruth(exposures=x, adjacency=q, balance=balance)

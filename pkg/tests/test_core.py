"""
Tests for balance sheets, matrices and the shared diagnostics
"""

import math

import numpy as np
import pytest

from src.core import (
    AdjacencyMatrix,
    BalanceSheet,
    ExposureMatrix,
    ReconstructionReport,
    adjacency_entropy,
    connectivity,
    constraint_deviation,
    entropy_normalized,
    kl_divergence,
    normalize,
    sparsity,
)
from src.errors import (
    DomainError,
    InfiniteDivergenceError,
    NormalizationError,
    SupportError,
)


def _unit_matrix(gen: np.random.Generator, n: int) -> ExposureMatrix:
    values = gen.random((n, n))
    return ExposureMatrix(values / values.sum())


class TestBalanceSheet:
    def test_from_vectors_sets_total(self) -> None:
        bs = BalanceSheet.from_vectors([0.6, 0.4], [0.5, 0.5])
        assert bs.n == 2
        assert bs.total == pytest.approx(1.0)

    @pytest.mark.parametrize(
        "assets, liabilities",
        [
            ([0.6, 0.4], [0.5, 0.6]),
            ([1.0, 0.0], [0.5, 0.5]),
            ([0.5, 0.5], [0.5, 0.25, 0.25]),
            ([], []),
        ],
    )
    def test_rejects_invalid_marginals(self, assets, liabilities) -> None:
        with pytest.raises(DomainError):
            BalanceSheet.from_vectors(assets, liabilities)

    def test_vectors_are_read_only(self) -> None:
        bs = BalanceSheet.from_vectors([0.6, 0.4], [0.5, 0.5])
        with pytest.raises(ValueError):
            bs.assets[0] = 1.0

    def test_scaled(self) -> None:
        bs = BalanceSheet.from_vectors([0.6, 0.4], [0.5, 0.5]).scaled(10.0)
        assert bs.total == pytest.approx(10.0)
        np.testing.assert_allclose(bs.assets, [6.0, 4.0])
        with pytest.raises(DomainError):
            bs.scaled(0.0)


class TestMatrices:
    def test_exposures_reject_negative_and_non_square(self) -> None:
        with pytest.raises(DomainError):
            ExposureMatrix(np.array([[0.0, -1.0], [1.0, 0.0]]))
        with pytest.raises(DomainError):
            ExposureMatrix(np.ones((2, 3)))
        with pytest.raises(DomainError):
            ExposureMatrix(np.array([[0.0, np.inf], [1.0, 0.0]]))

    def test_support_is_heaviside(self) -> None:
        x = ExposureMatrix(
            np.array([[0.0, 0.3, 0.0], [0.2, 0.0, 0.0], [0.0, 0.5, 0.0]])
        )
        expected = np.array([[0, 1, 0], [1, 0, 0], [0, 1, 0]])
        np.testing.assert_array_equal(x.support().entries, expected)

    def test_adjacency_rejects_diagonal_and_non_binary(self) -> None:
        with pytest.raises(DomainError):
            AdjacencyMatrix(np.eye(3, dtype=np.int8))
        with pytest.raises(DomainError):
            AdjacencyMatrix(np.array([[0, 2], [1, 0]]))

    def test_support_condition(self) -> None:
        q = AdjacencyMatrix(np.array([[0, 1, 1], [0, 0, 1], [0, 0, 0]]))
        assert not q.satisfies_support_condition()
        with pytest.raises(SupportError) as info:
            q.require_support()
        assert info.value.axis == "row"
        assert info.value.index == 2

        q = AdjacencyMatrix(np.array([[0, 1, 1], [0, 0, 1], [0, 1, 0]]))
        with pytest.raises(SupportError) as info:
            q.require_support()
        assert info.value.axis == "column"
        assert info.value.index == 0

        assert AdjacencyMatrix.full(4).satisfies_support_condition()

    def test_normalize_divides_by_total(self) -> None:
        bs = BalanceSheet.from_vectors([3.0, 1.0], [2.0, 2.0])
        x = ExposureMatrix(np.array([[1.0, 2.0], [1.0, 0.0]]))
        nbs, nx = normalize(bs, x)
        assert nbs.total == pytest.approx(1.0)
        assert nx is not None
        assert nx.total() == pytest.approx(1.0)
        np.testing.assert_allclose(nbs.assets, [0.75, 0.25])

    def test_report_rejects_inconsistent_convergence(self) -> None:
        x = ExposureMatrix(np.array([[0.0, 0.5], [0.5, 0.0]]))
        with pytest.raises(DomainError):
            ReconstructionReport(
                method="ras",
                solution=x,
                iterations=3,
                final_step=1e-3,
                deviation=0.0,
                converged=True,
                delta=1e-7,
            )

    def test_report_cannot_converge_and_diverge(self) -> None:
        x = ExposureMatrix(np.array([[0.0, 0.5], [0.5, 0.0]]))
        with pytest.raises(DomainError):
            ReconstructionReport(
                method="sras",
                solution=x,
                iterations=3,
                final_step=0.0,
                deviation=0.0,
                converged=True,
                delta=1e-7,
                diverged=True,
            )


class TestEntropy:
    def test_uniform_matrix_is_one(self) -> None:
        x = ExposureMatrix(np.full((10, 10), 0.01))
        assert entropy_normalized(x) == pytest.approx(1.0, abs=1e-12)

    def test_antidiagonal(self) -> None:
        x = ExposureMatrix(np.array([[0.0, 0.5], [0.5, 0.0]]))
        assert entropy_normalized(x) == pytest.approx(0.5, abs=1e-12)

    def test_uniform_product(self) -> None:
        x = ExposureMatrix(np.full((3, 3), 1.0 / 9.0))
        expected = math.log(9.0) / (2.0 * math.log(3.0))
        assert entropy_normalized(x) == pytest.approx(expected, abs=1e-12)

    def test_rejects_unnormalized(self) -> None:
        with pytest.raises(NormalizationError):
            entropy_normalized(ExposureMatrix(np.full((3, 3), 1.0)))

    def test_mass_preserving_perturbation_lowers_entropy(self) -> None:
        gen = np.random.default_rng(12)
        n = 6
        uniform = np.full((n, n), 1.0 / (n * n))
        for _ in range(1000):
            d = gen.normal(size=(n, n))
            d -= d.mean()
            d *= gen.uniform(0.01, 0.9) / (n * n * np.abs(d).max())
            x = ExposureMatrix(uniform + d)
            assert entropy_normalized(x.normalized()) < 1.0


class TestAdjacencyEntropy:
    def test_values(self) -> None:
        assert adjacency_entropy(0.5) == pytest.approx(1.0)
        assert adjacency_entropy(0.25) == pytest.approx(0.8112781244591328)
        assert adjacency_entropy(0.75) == pytest.approx(0.8112781244591328)

    def test_symmetry(self) -> None:
        for kappa in np.linspace(0.01, 0.99, 99):
            assert adjacency_entropy(kappa) == pytest.approx(
                adjacency_entropy(1.0 - kappa), abs=1e-12
            )

    @pytest.mark.parametrize("kappa", [0.0, 1.0, -0.1, 1.5])
    def test_domain(self, kappa: float) -> None:
        with pytest.raises(DomainError):
            adjacency_entropy(kappa)

    def test_closed_interval_mode(self) -> None:
        assert adjacency_entropy(0.0, closed=True) == 0.0
        assert adjacency_entropy(1.0, closed=True) == 0.0


class TestKLDivergence:
    def test_identity(self) -> None:
        x = _unit_matrix(np.random.default_rng(1), 5)
        assert kl_divergence(x, x) == pytest.approx(0.0, abs=1e-12)

    def test_direct_values(self) -> None:
        x = ExposureMatrix(np.array([[0.0, 0.6], [0.4, 0.0]]))
        x0 = ExposureMatrix(np.array([[0.0, 0.5], [0.5, 0.0]]))
        expected = 0.6 * math.log(1.2) + 0.4 * math.log(0.8)
        assert kl_divergence(x, x0) == pytest.approx(expected, abs=1e-12)
        assert kl_divergence(x, x0) == pytest.approx(0.020136, abs=1e-6)

        x = ExposureMatrix(np.array([[0.0, 0.5], [0.5, 0.0]]))
        x0 = ExposureMatrix(np.full((2, 2), 0.25))
        assert kl_divergence(x, x0) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_mass_on_zero_prior_is_infinite(self) -> None:
        x = ExposureMatrix(np.array([[0.1, 0.4], [0.5, 0.0]]))
        x0 = ExposureMatrix(np.array([[0.0, 0.5], [0.5, 0.0]]))
        with pytest.raises(InfiniteDivergenceError):
            kl_divergence(x, x0)

    def test_nonnegative_on_random_pairs(self) -> None:
        gen = np.random.default_rng(2024)
        for _ in range(1000):
            n = int(gen.integers(2, 8))
            x = _unit_matrix(gen, n)
            x0 = _unit_matrix(gen, n)
            assert kl_divergence(x, x0) > 0.0


class TestConstraintDeviation:
    def test_feasible_is_zero(self) -> None:
        x = ExposureMatrix(np.array([[0.0, 0.3], [0.7, 0.0]]))
        bs = BalanceSheet.from_vectors([0.3, 0.7], [0.7, 0.3])
        assert constraint_deviation(x, bs) == pytest.approx(0.0, abs=1e-12)

    def test_hand_value(self) -> None:
        x = ExposureMatrix(np.array([[0.0, 0.5], [0.5, 0.0]]))
        bs = BalanceSheet.from_vectors([0.6, 0.4], [0.5, 0.5])
        assert constraint_deviation(x, bs) == pytest.approx(
            math.sqrt(0.02 / 1.02), abs=1e-12
        )
        assert constraint_deviation(x, bs) == pytest.approx(0.14003, abs=1e-5)

    def test_joint_scaling_invariance(self) -> None:
        gen = np.random.default_rng(5)
        for _ in range(200):
            x = _unit_matrix(gen, 4)
            a = gen.random(4) + 0.1
            l = gen.random(4) + 0.1
            bs = BalanceSheet.from_vectors(a / a.sum(), l / l.sum())
            c = float(gen.uniform(0.01, 100.0))
            scaled = ExposureMatrix(x.entries * c)
            assert constraint_deviation(scaled, bs.scaled(c)) == pytest.approx(
                constraint_deviation(x, bs), rel=1e-9, abs=1e-12
            )

    def test_dimension_mismatch(self) -> None:
        x = ExposureMatrix(np.full((3, 3), 1.0 / 9.0))
        bs = BalanceSheet.from_vectors([0.5, 0.5], [0.5, 0.5])
        with pytest.raises(DomainError):
            constraint_deviation(x, bs)


class TestConnectivity:
    def test_permutation(self) -> None:
        q = AdjacencyMatrix.from_permutation(np.roll(np.arange(10), 1))
        assert connectivity(q) == pytest.approx(0.1)

    def test_full(self) -> None:
        q = AdjacencyMatrix.full(10)
        assert connectivity(q) == pytest.approx(0.9)
        assert sparsity(q) == pytest.approx(0.1)

    def test_empty_is_measurable(self) -> None:
        q = AdjacencyMatrix(np.zeros((4, 4), dtype=np.int8))
        assert connectivity(q) == 0.0
        assert not q.satisfies_support_condition()

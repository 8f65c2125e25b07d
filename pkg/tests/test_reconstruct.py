"""
Tests for ME, RAS and SRAS reconstruction
"""

from typing import Tuple

import numpy as np
import pytest
from scipy.optimize import minimize

from src.core import (
    AdjacencyMatrix,
    BalanceSheet,
    ExposureMatrix,
    constraint_deviation,
    entropy_normalized,
)
from src.errors import DomainError, InfeasibleError, SupportError
from src.netgen import RngStream, random_balance_sheet, random_ground_truth
from src.reconstruct import (
    Method,
    ScalingFactors,
    SolverConfig,
    iteration_cost,
    me_dense,
    me_report,
    ras,
    reconstruct,
    sras,
    sras_factors,
    zero_diagonal_prior,
)


def feasible_sheet(n: int, seed: int) -> BalanceSheet:
    """Random balance sheet that a zero-diagonal matrix can carry with room to spare."""
    for stream_id in range(10_000):
        bs = random_balance_sheet(n, 1.0, RngStream(seed, stream_id))
        if np.max(bs.assets + bs.liabilities) <= 0.8:
            return bs
    raise AssertionError("no feasible balance sheet found")


def kl_oracle(bs: BalanceSheet) -> np.ndarray:
    """Minimise D(x || x0) under the marginals through its convex dual.

    The minimiser is x_ij = x0_ij exp(u_i + v_j); v_{n-1} is pinned to zero to
    remove the gauge direction.
    """
    x0 = np.array(zero_diagonal_prior(bs).entries)
    a, l = bs.assets, bs.liabilities
    n = bs.n

    def split(z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return z[:n], np.append(z[n:], 0.0)

    def matrix(z: np.ndarray) -> np.ndarray:
        u, v = split(z)
        return x0 * np.exp(u[:, None] + v[None, :])

    def fun(z: np.ndarray) -> float:
        u, v = split(z)
        return float(matrix(z).sum() - a @ u - l @ v)

    def jac(z: np.ndarray) -> np.ndarray:
        x = matrix(z)
        return np.concatenate((x.sum(axis=1) - a, (x.sum(axis=0) - l)[:-1]))

    def hess(z: np.ndarray) -> np.ndarray:
        x = matrix(z)
        h = np.zeros((2 * n, 2 * n))
        h[:n, :n] = np.diag(x.sum(axis=1))
        h[n:, n:] = np.diag(x.sum(axis=0))
        h[:n, n:] = x
        h[n:, :n] = x.T
        return h[:-1, :-1]

    result = minimize(
        fun,
        np.zeros(2 * n - 1),
        jac=jac,
        hess=hess,
        method="trust-exact",
        options={"gtol": 1e-13, "maxiter": 1000},
    )
    return matrix(result.x)


class TestMaximumEntropy:
    def test_uniform(self) -> None:
        x = me_dense(BalanceSheet.from_vectors([0.5, 0.5], [0.5, 0.5]))
        np.testing.assert_allclose(x.entries, [[0.25, 0.25], [0.25, 0.25]], atol=1e-12)

    def test_product(self) -> None:
        x = me_dense(BalanceSheet.from_vectors([0.6, 0.4], [0.3, 0.7]))
        np.testing.assert_allclose(x.entries, [[0.18, 0.42], [0.12, 0.28]], atol=1e-12)

    def test_marginals_exact_for_any_total(self) -> None:
        bs = random_balance_sheet(7, 7.0, RngStream(3))
        report = me_report(bs)
        assert report.converged
        assert report.iterations == 0
        assert report.deviation == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(report.solution.row_sums(), bs.assets, atol=1e-12)
        np.testing.assert_allclose(
            report.solution.col_sums(), bs.liabilities, atol=1e-12
        )

    def test_entropy_dominates_feasible_perturbations(self) -> None:
        bs = random_balance_sheet(6, 1.0, RngStream(8))
        x = me_dense(bs).entries
        best = entropy_normalized(ExposureMatrix(x))
        gen = np.random.default_rng(99)
        for _ in range(1000):
            i, k = gen.choice(6, size=2, replace=False)
            j, m = gen.choice(6, size=2, replace=False)
            # +t on (i,j),(k,m) and -t on (i,m),(k,j) keeps every marginal
            t = gen.uniform(0.0, 1.0) * min(x[i, m], x[k, j])
            y = x.copy()
            y[i, j] += t
            y[k, m] += t
            y[i, m] -= t
            y[k, j] -= t
            y = np.clip(y, 0.0, None)
            assert entropy_normalized(ExposureMatrix(y / y.sum())) <= best + 1e-12


class TestZeroDiagonalPrior:
    def test_values(self) -> None:
        x0 = zero_diagonal_prior(BalanceSheet.from_vectors([0.5, 0.5], [0.5, 0.5]))
        np.testing.assert_allclose(x0.entries, [[0.0, 0.25], [0.25, 0.0]], atol=1e-12)
        x0 = zero_diagonal_prior(BalanceSheet.from_vectors([0.6, 0.4], [0.3, 0.7]))
        np.testing.assert_allclose(x0.entries, [[0.0, 0.42], [0.12, 0.0]], atol=1e-12)

    def test_random_diagonal_is_zero(self) -> None:
        for stream_id in range(20):
            bs = random_balance_sheet(9, 1.0, RngStream(4, stream_id))
            assert zero_diagonal_prior(bs).has_zero_diagonal()

    def test_single_bank(self) -> None:
        with pytest.raises(InfeasibleError):
            zero_diagonal_prior(BalanceSheet.from_vectors([1.0], [1.0]))


class TestRAS:
    def test_two_banks(self) -> None:
        report = ras(BalanceSheet.from_vectors([0.5, 0.5], [0.5, 0.5]))
        assert report.converged
        np.testing.assert_allclose(
            report.solution.entries, [[0.0, 0.5], [0.5, 0.0]], atol=1e-12
        )

    def test_three_symmetric_banks(self) -> None:
        third = 1.0 / 3.0
        bs = BalanceSheet.from_vectors([third] * 3, [third] * 3)
        report = ras(bs)
        expected = np.full((3, 3), 1.0 / 6.0)
        np.fill_diagonal(expected, 0.0)
        np.testing.assert_allclose(report.solution.entries, expected, atol=1e-12)

    def test_matches_convex_oracle(self) -> None:
        bs = BalanceSheet.from_vectors([0.5, 0.3, 0.2], [0.2, 0.3, 0.5])
        report = ras(bs, SolverConfig(delta=1e-13))
        assert report.converged
        np.testing.assert_allclose(report.solution.entries, kl_oracle(bs), atol=1e-6)

    @pytest.mark.parametrize("n", [3, 4, 5])
    def test_matches_oracle_on_random_sheets(self, n: int) -> None:
        for seed in range(4):
            bs = feasible_sheet(n, seed)
            report = ras(bs, SolverConfig(delta=1e-13))
            np.testing.assert_allclose(
                report.solution.entries, kl_oracle(bs), atol=1e-6
            )

    def test_column_pass_and_diagonal(self) -> None:
        bs = feasible_sheet(12, 21)
        report = ras(bs, SolverConfig(max_iterations=7))
        x = report.solution
        assert x.has_zero_diagonal()
        np.testing.assert_allclose(x.col_sums(), bs.liabilities, atol=1e-12)

    def test_non_convergence_is_reported(self) -> None:
        bs = feasible_sheet(10, 2)
        report = ras(bs, SolverConfig(max_iterations=1))
        assert not report.converged
        assert report.iterations == 1
        assert report.final_step > report.delta

    def test_mac_count(self) -> None:
        bs = feasible_sheet(15, 6)
        report = ras(bs)
        assert report.mac_count == report.iterations * iteration_cost(15, Method.RAS)

    def test_history(self) -> None:
        bs = feasible_sheet(8, 3)
        report = ras(bs, SolverConfig(record_history=True))
        assert len(report.history) == report.iterations
        assert all(np.isfinite(report.history))
        assert report.history[-1] == report.final_step


class TestSRAS:
    def test_full_support_matches_ras(self) -> None:
        cfg = SolverConfig(delta=1e-10)
        for n in (5, 25):
            for seed in range(5):
                bs = feasible_sheet(n, seed)
                dense = ras(bs, cfg)
                sparse = sras(bs, AdjacencyMatrix.full(n), cfg)
                assert sparse.converged
                np.testing.assert_allclose(
                    sparse.solution.entries, dense.solution.entries, atol=1e-6
                )
                assert dense.deviation <= 1e-6
                assert sparse.deviation <= 1e-6

    def test_permutation_support(self) -> None:
        bs = BalanceSheet.from_vectors([0.2, 0.3, 0.5], [0.5, 0.2, 0.3])
        q = AdjacencyMatrix.from_permutation([1, 2, 0])
        report = sras(bs, q)
        expected = np.zeros((3, 3))
        expected[0, 1], expected[1, 2], expected[2, 0] = 0.2, 0.3, 0.5
        assert report.converged
        np.testing.assert_allclose(report.solution.entries, expected, atol=1e-12)
        assert report.deviation == pytest.approx(0.0, abs=1e-12)

    def test_infeasible_two_banks_keeps_best_matrix(self) -> None:
        # the marginals cannot be met; x is fixed while the gauge keeps drifting
        bs = BalanceSheet.from_vectors([0.6, 0.4], [0.5, 0.5])
        report = sras(bs, AdjacencyMatrix.full(2), SolverConfig(max_iterations=50))
        assert not report.converged
        assert not report.diverged
        np.testing.assert_allclose(
            report.solution.entries, [[0.0, 0.5], [0.5, 0.0]], atol=1e-9
        )
        assert report.deviation == pytest.approx(0.14003, abs=1e-5)

    @pytest.mark.filterwarnings("error")
    def test_drift_stops_with_diverged_report(self) -> None:
        bs = BalanceSheet.from_vectors([0.6, 0.4], [0.5, 0.5])
        report = sras(bs, AdjacencyMatrix.full(2))
        assert not report.converged
        assert report.diverged
        assert 0 < report.iterations < 100_000
        assert np.isfinite(report.final_step)
        np.testing.assert_allclose(
            report.solution.entries, [[0.0, 0.5], [0.5, 0.0]], atol=1e-9
        )
        assert report.deviation == pytest.approx(0.14003, abs=1e-5)
        assert report.to_json_dict()["diverged"] is True

    def test_solution_stays_on_support(self) -> None:
        for stream_id in range(10):
            truth = random_ground_truth(15, 0.2, 1.0, RngStream(17, stream_id))
            bs = feasible_sheet(15, stream_id)
            report = sras(bs, truth.adjacency, SolverConfig(max_iterations=500))
            assert np.all(report.solution.support().entries <= truth.adjacency.entries)

    def test_feasible_support_meets_marginals(self) -> None:
        cfg = SolverConfig(delta=1e-10)
        for stream_id in range(5):
            truth = random_ground_truth(20, 0.3, 1.0, RngStream(23, stream_id))
            report = sras(truth.balance, truth.adjacency, cfg)
            assert report.converged
            assert report.deviation <= 1e-7

    def test_gauge_invariance(self) -> None:
        truth = random_ground_truth(12, 0.4, 1.0, RngStream(31))
        factors, _ = sras_factors(truth.balance, truth.adjacency, SolverConfig())
        x = factors.exposures(truth.adjacency).entries
        gen = np.random.default_rng(7)
        for c in np.exp(gen.uniform(-20.0, 20.0, size=1000)):
            regauged = factors.regauged(float(c)).exposures(truth.adjacency).entries
            np.testing.assert_allclose(regauged, x, rtol=1e-12, atol=0.0)

    def test_regauge_rejects_nonpositive(self) -> None:
        factors = ScalingFactors(psi=np.ones(2), phi=np.ones(2))
        with pytest.raises(DomainError):
            factors.regauged(0.0)

    def test_empty_row_is_rejected(self) -> None:
        bs = BalanceSheet.from_vectors([0.5, 0.25, 0.25], [0.25, 0.25, 0.5])
        q = AdjacencyMatrix(np.array([[0, 1, 1], [1, 0, 0], [0, 0, 0]]))
        with pytest.raises(SupportError) as info:
            sras(bs, q)
        assert info.value.axis == "row"
        assert info.value.index == 2
        assert info.value.report is None

    def test_dimension_mismatch(self) -> None:
        bs = BalanceSheet.from_vectors([0.5, 0.5], [0.5, 0.5])
        with pytest.raises(DomainError):
            sras(bs, AdjacencyMatrix.full(3))

    def test_mac_count(self) -> None:
        truth = random_ground_truth(30, 0.3, 1.0, RngStream(2))
        report = sras(truth.balance, truth.adjacency)
        assert report.mac_count == report.iterations * iteration_cost(30, Method.SRAS)

    def test_history_is_finite(self) -> None:
        truth = random_ground_truth(10, 0.5, 1.0, RngStream(9))
        report = sras(truth.balance, truth.adjacency, SolverConfig(record_history=True))
        assert report.converged
        assert len(report.history) == report.iterations
        assert all(np.isfinite(report.history))


class TestIterationCost:
    def test_values(self) -> None:
        assert iteration_cost(100, Method.SRAS) == 20_000
        assert iteration_cost(100, Method.RAS) == 40_000

    def test_ratio(self) -> None:
        for n in range(2, 50):
            assert iteration_cost(n, Method.RAS) == 2 * iteration_cost(n, Method.SRAS)

    def test_domain(self) -> None:
        with pytest.raises(DomainError):
            iteration_cost(1, Method.RAS)
        with pytest.raises(DomainError):
            iteration_cost(10, Method.ME)


class TestReconstructDispatch:
    def test_methods(self) -> None:
        bs = feasible_sheet(6, 1)
        assert reconstruct(Method.ME, bs).method == "me"
        assert reconstruct(Method.RAS, bs).method == "ras"
        report = reconstruct(Method.SRAS, bs, AdjacencyMatrix.full(6))
        assert report.method == "sras"
        assert constraint_deviation(report.solution, bs) == report.deviation

    def test_sras_needs_support(self) -> None:
        with pytest.raises(DomainError):
            reconstruct(Method.SRAS, feasible_sheet(4, 0))

    def test_report_json(self) -> None:
        report = reconstruct(Method.RAS, feasible_sheet(4, 0))
        data = report.to_json_dict("solution.csv")
        assert set(data) >= {"method", "n", "delta", "iterations", "eta", "epsilon"}
        assert data["solution"] == "solution.csv"
        assert data["converged"] is True
        assert data["diverged"] is False

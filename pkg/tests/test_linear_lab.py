import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prunekit.linear_lab import (
    LinearProblem,
    RecoveryTrialConfig,
    adversarial_alpha,
    best_support_oracle,
    construct_sparser_solution,
    left_null_space,
    make_problem,
    one_shot_linear,
    pgd_linear,
    recovery_experiment,
    restricted_lstsq,
    ridge_matrix,
    ridge_solution,
    sample_rip_matrix,
    sparse_solution_bound,
    squared_loss,
    wilson_interval,
)


def gd_ridge(X, y, lam, steps=20000):
    """Plain gradient descent on ||y - w^T X||^2 + lam ||w||^2."""
    L = 2 * (np.linalg.norm(X, 2) ** 2 + lam)
    w = np.zeros(X.shape[0])
    for _ in range(steps):
        w -= (2 * X @ (X.T @ w - y) + 2 * lam * w) / L
    return w


class TestRipMatrix:
    def test_entry_variance(self):
        X = sample_rip_matrix(25_000, 4, 0)
        assert abs(X.var() / 0.25 - 1) < 0.02
        assert abs(X.mean()) < 0.01

    def test_deterministic(self):
        assert np.array_equal(sample_rip_matrix(5, 4, 7), sample_rip_matrix(5, 4, 7))

    def test_scalar(self):
        X = sample_rip_matrix(1, 1, 0)
        assert X.shape == (1, 1) and np.isfinite(X).all()

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            sample_rip_matrix(0, 3, 0)


class TestRidge:
    def test_identity_design(self):
        alpha = np.array([1.0, -2.0, 0.0, 0.5])
        X = np.eye(4)
        np.testing.assert_allclose(ridge_solution(X, alpha @ X, 1e-12), alpha, atol=1e-10)

    def test_zero_target(self, rng):
        X = rng.normal(size=(5, 3))
        assert not ridge_solution(X, np.zeros(3), 1e-2).any()

    @pytest.mark.parametrize("d,n", [(5, 2), (5, 4), (5, 10)])
    def test_residual_and_gd_oracle(self, rng, d, n):
        X = sample_rip_matrix(d, n, rng)
        y = rng.normal(size=n)
        lam = 1e-2
        w = ridge_solution(X, y, lam)
        rhs = X @ y
        assert np.linalg.norm((X @ X.T + lam * np.eye(d)) @ w - rhs) <= 1e-10 * np.linalg.norm(rhs)
        np.testing.assert_allclose(w, gd_ridge(X, y, lam), atol=1e-8)

    def test_ridge_matrix_maps_alpha(self, rng):
        X = sample_rip_matrix(5, 4, rng)
        alpha = rng.normal(size=5)
        np.testing.assert_allclose(ridge_matrix(X, 1e-2) @ alpha, ridge_solution(X, alpha @ X, 1e-2), atol=1e-12)

    def test_lambda_continuity(self, rng):
        X = sample_rip_matrix(5, 10, rng)
        y = rng.normal(size=10)
        ols = np.linalg.lstsq(X.T, y, rcond=None)[0]
        gaps = [np.linalg.norm(ridge_solution(X, y, lam) - ols) for lam in (1e-2, 1e-4, 1e-6)]
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[2] < 1e-4

    def test_singular_without_regularisation(self, rng):
        X = rng.normal(size=(5, 2))
        with pytest.raises(np.linalg.LinAlgError):
            ridge_solution(X, rng.normal(size=2), 0.0)


class TestAdversarial:
    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**16), c=st.integers(0, 4))
    def test_construction(self, seed, c):
        X = sample_rip_matrix(5, 4, seed)
        alpha = adversarial_alpha(X, 1e-2, c)
        assert alpha[c] == 0.0
        A = ridge_matrix(X, 1e-2)
        w = A @ alpha
        expected = sum(A[c, i] ** 2 for i in range(5) if i != c)
        assert w[c] == pytest.approx(expected, rel=1e-10)
        assert w[c] > 0

    def test_problem_is_exact(self, rng):
        X = sample_rip_matrix(5, 4, rng)
        p = LinearProblem.from_alpha(X, adversarial_alpha(X, 1e-2, 2), 2)
        assert np.array_equal(p.y, p.alpha @ X)
        assert np.count_nonzero(p.alpha) == 4

    def test_nonzero_c_rejected(self):
        with pytest.raises(ValueError):
            LinearProblem.from_alpha(np.eye(2), np.array([1.0, 1.0]), 0)


class TestSolvers:
    def test_one_shot_correct_support(self, rng):
        X = sample_rip_matrix(5, 10, rng)
        alpha = np.array([1.0, -1.5, 0.0, 2.0, 0.8])
        res = one_shot_linear(LinearProblem.from_alpha(X, alpha, 2))
        assert res.pruned == [2]
        np.testing.assert_allclose(res.w, alpha, atol=1e-10)

    def test_one_shot_n_equals_d_minus_one(self, rng):
        X = sample_rip_matrix(5, 4, rng)
        alpha = np.array([3.0, -2.5, 0.0, 2.0, 4.0])
        res = one_shot_linear(LinearProblem.from_alpha(X, alpha, 2))
        if res.pruned == [2]:
            np.testing.assert_allclose(res.w, alpha, atol=1e-9)

    def test_pgd_identity(self):
        alpha = np.array([0.5, -1.0, 0.0, 2.0, 1.5])
        p = LinearProblem.from_alpha(np.eye(5), alpha, 2)
        res = pgd_linear(p, eta=0.25, steps=200)
        np.testing.assert_allclose(res.w, alpha, atol=1e-10)
        assert res.pruned == [2] and not res.diverged

    def test_pgd_flags_divergence(self, rng):
        X = sample_rip_matrix(5, 10, rng)
        p = LinearProblem.from_alpha(X, np.array([1.0, 1.0, 0.0, 1.0, 1.0]), 2)
        assert pgd_linear(p, eta=10.0 / np.linalg.norm(X, 2) ** 2, steps=300).diverged

    def test_restricted_lstsq_min_norm(self):
        X = np.array([[1.0], [1.0], [0.0]])
        w = restricted_lstsq(X, np.array([2.0]), np.array([True, True, False]))
        np.testing.assert_allclose(w, [1.0, 1.0, 0.0])


class TestExperiment:
    def test_infinite_tolerance(self):
        res = recovery_experiment(RecoveryTrialConfig(n=4, trials=40, success_tol=1e9))
        assert res.p_one_shot == 1.0 and res.p_pgd == 1.0

    def test_parallel_matches_serial(self):
        cfg = RecoveryTrialConfig(n=4, alpha_mode="adversarial", trials=30, seed=5)
        assert recovery_experiment(cfg, jobs=2).counts == recovery_experiment(cfg).counts

    def test_trial_problems_are_independent_of_order(self):
        cfg = RecoveryTrialConfig(seed=3)
        a = make_problem(cfg, 17)
        make_problem(cfg, 2)
        assert np.array_equal(a.X, make_problem(cfg, 17).X)
        assert not np.array_equal(a.X, make_problem(cfg, 18).X)

    @pytest.mark.parametrize("kw", [dict(trials=0), dict(success_tol=0.0), dict(alpha_mode="x"), dict(c=5)])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            RecoveryTrialConfig(**kw)

    def test_wilson_known_values(self):
        lo, hi = wilson_interval(8, 10)
        assert lo == pytest.approx(0.4902, abs=1e-4)
        assert hi == pytest.approx(0.9433, abs=1e-4)
        assert wilson_interval(0, 50)[0] == 0.0
        assert wilson_interval(50, 50)[1] == 1.0

    def test_summary_keys(self):
        res = recovery_experiment(RecoveryTrialConfig(trials=5))
        assert {"p_one_shot", "p_pgd", "ci_one_shot", "ci_pgd"} <= set(res.summary())

    @pytest.mark.parametrize("mode", ["random", "adversarial"])
    def test_oracle_equivalence(self, mode):
        # converged IHT with a tight tolerance: near-zero alpha entries would
        # otherwise let a wrong support pass a loose tolerance
        cfg = RecoveryTrialConfig(d=6, n=8, alpha_mode=mode, trials=30, seed=11)
        outcomes = set()
        for t in range(cfg.trials):
            p = make_problem(cfg, t)
            res = pgd_linear(p, eta=0.4 / np.linalg.norm(p.X, 2) ** 2, steps=20_000)
            ok = float(np.max(np.abs(res.w - p.alpha))) <= 1e-6
            optimal, _ = best_support_oracle(p.X, p.y)
            assert ok == (tuple(res.pruned) in optimal), t
            outcomes.add(ok)
        assert outcomes == {True, False}


class TestSparserSolutions:
    @pytest.mark.parametrize("d,n,expected", [(5, 3, 10), (5, 4, 5), (7, 6, 7), (12, 11, 12)])
    def test_bound(self, d, n, expected):
        assert sparse_solution_bound(d, n) == expected == math.comb(d, d - n)

    def test_left_null_space(self, rng):
        X = rng.normal(size=(6, 2))
        V = left_null_space(X)
        assert V.shape == (6, 4)
        np.testing.assert_allclose(V.T @ X, 0, atol=1e-12)
        np.testing.assert_allclose(V.T @ V, np.eye(4), atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**16), d=st.integers(4, 8), data=st.data())
    def test_feasible(self, seed, d, data):
        n = data.draw(st.integers(1, d - 2))
        i, j = data.draw(st.lists(st.integers(0, d - 1), min_size=2, max_size=2, unique=True))
        rng = np.random.default_rng(seed)
        X = sample_rip_matrix(d, n, rng)
        alpha = rng.normal(size=d)
        w = construct_sparser_solution(X, alpha, i, j)
        if w is not None:
            assert w[i] == 0 and w[j] == 0
            assert np.max(np.abs(w @ X - alpha @ X)) <= 1e-8

    def test_sparser_than_ground_truth(self, rng):
        c = 2
        X = sample_rip_matrix(5, 3, rng)
        alpha = rng.normal(size=5)
        alpha[c] = 0.0
        w = construct_sparser_solution(X, alpha, c, 0)
        assert np.count_nonzero(w) <= 3 < np.count_nonzero(alpha)
        assert np.max(np.abs(w @ X - alpha @ X)) <= 1e-8

    def test_degenerate(self, rng):
        X = np.column_stack([np.eye(5)[:, 0], np.eye(5)[:, 1], rng.normal(size=5)])
        assert construct_sparser_solution(X, rng.normal(size=5), 0, 1) is None

    def test_needs_two_null_directions(self, rng):
        with pytest.raises(ValueError):
            construct_sparser_solution(rng.normal(size=(5, 4)), rng.normal(size=5), 0, 1)
        with pytest.raises(ValueError):
            construct_sparser_solution(rng.normal(size=(5, 2)), rng.normal(size=5), 1, 1)


def test_best_support_oracle_unique_when_overdetermined(rng):
    X = sample_rip_matrix(5, 9, rng)
    alpha = rng.normal(size=5)
    alpha[3] = 0.0
    optimal, loss = best_support_oracle(X, alpha @ X)
    assert optimal == [(3,)] and loss < 1e-20
    assert squared_loss(X, alpha @ X, alpha) == 0.0

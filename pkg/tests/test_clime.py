import math

import numpy as np
import pytest
from scipy.optimize import linprog

from disttgm.clime import (ClimeConfig, SolverError, clime_column, clime_estimate, default_lambda,
                           symmetrize_min_magnitude)

from oracles import clime_vertex_oracle


def random_correlation(d, rng):
    A = rng.standard_normal((d, d + 2))
    S = A @ A.T
    s = 1 / np.sqrt(np.diag(S))
    S = S * np.outer(s, s)
    S = (S + S.T) / 2
    np.fill_diagonal(S, 1.0)
    return S


def test_identity_tight():
    beta = clime_column(np.eye(4), 2, ClimeConfig(lam=1e-12))
    assert np.allclose(beta, np.eye(4)[2], atol=1e-10)


def test_identity_shrinks():
    beta = clime_column(np.eye(3), 0, ClimeConfig(lam=0.3))
    assert np.allclose(beta, [0.7, 0.0, 0.0], atol=1e-12)


def test_lambda_at_least_one_gives_zero():
    beta = clime_column(np.eye(3), 1, ClimeConfig(lam=1.0))
    assert np.all(beta == 0.0)


def test_two_by_two_matches_vertex_oracle():
    S = np.array([[1.0, 0.5], [0.5, 1.0]])
    beta = clime_column(S, 0, ClimeConfig(lam=0.1))
    best, _ = clime_vertex_oracle(S, 0, 0.1)
    assert np.abs(beta).sum() == pytest.approx(best, abs=1e-6)


@pytest.mark.parametrize("d", [2, 3, 4])
@pytest.mark.parametrize("lam", [0.05, 0.1, 0.3])
def test_vertex_oracle_random(d, lam):
    rng = np.random.default_rng(100 * d + int(lam * 100))
    S = random_correlation(d, rng)
    for j in range(d):
        beta = clime_column(S, j, ClimeConfig(lam))
        best, _ = clime_vertex_oracle(S, j, lam)
        assert np.abs(beta).sum() == pytest.approx(best, abs=1e-6)
        assert np.max(np.abs(S @ beta - np.eye(d)[j])) <= lam + 1e-8


@pytest.mark.parametrize("seed", range(4))
def test_matches_highs_at_moderate_d(seed):
    rng = np.random.default_rng(seed)
    d, lam = 25, 0.08
    X = rng.standard_normal((150, d)) @ (np.eye(d) + 0.3 * rng.standard_normal((d, d)))
    S = np.corrcoef(X.T)
    for j in (0, d // 2, d - 1):
        beta = clime_column(S, j, ClimeConfig(lam))
        e = np.eye(d)[j]
        A = np.vstack([np.hstack([S, -S]), np.hstack([-S, S])])
        ref = linprog(np.ones(2 * d), A_ub=A, b_ub=np.concatenate([e + lam, lam - e]), bounds=(0, None),
                      method="highs")
        assert np.abs(beta).sum() == pytest.approx(ref.fun, abs=1e-7 * (1 + ref.fun))


def test_estimate_identity():
    est = clime_estimate(np.eye(4), ClimeConfig(lam=0.2))
    assert np.allclose(est.theta_hat, 0.8 * np.eye(4), atol=1e-12)
    assert est.lambda_used == 0.2
    assert np.allclose(est.per_column_objective, 0.8)


def test_symmetrize_keeps_smaller_magnitude():
    tp = np.array([[1.0, 0.4], [-0.1, 1.0]])
    out = symmetrize_min_magnitude(tp)
    assert out[0, 1] == out[1, 0] == -0.1


def test_symmetrize_equal_magnitude_opposite_sign_is_symmetric():
    tp = np.array([[1.0, 0.3], [-0.3, 1.0]])
    out = symmetrize_min_magnitude(tp)
    assert out[0, 1] == out[1, 0]


def test_small_lambda_recovers_inverse():
    rng = np.random.default_rng(2)
    S = random_correlation(5, rng) * 0.5 + 0.5 * np.eye(5)
    est = clime_estimate(S, ClimeConfig(lam=1e-6))
    assert np.max(np.abs(est.theta_hat - np.linalg.inv(S))) <= 1e-3


def test_estimate_invariants():
    rng = np.random.default_rng(9)
    S = random_correlation(12, rng)
    lam = 0.15
    est = clime_estimate(S, ClimeConfig(lam))
    assert np.array_equal(est.theta_hat, est.theta_hat.T)
    # feasibility re-checked independently of the solver
    assert np.max(np.abs(S @ est.theta_prime - np.eye(12))) <= lam + 1e-8


def test_objective_non_increasing_in_lambda():
    rng = np.random.default_rng(4)
    S = random_correlation(8, rng)
    objs = [clime_estimate(S, ClimeConfig(lam)).per_column_objective for lam in (0.02, 0.05, 0.1, 0.2, 0.4)]
    for a, b in zip(objs, objs[1:]):
        assert np.all(b <= a + 1e-9)


def test_infeasible_reports_column():
    # singular input: no beta can reach e_0 within a tiny lambda
    S = np.ones((3, 3))
    with pytest.raises(SolverError) as info:
        clime_estimate(S, ClimeConfig(lam=1e-3))
    assert 0 in info.value.columns


def test_config_validation():
    with pytest.raises(ValueError):
        ClimeConfig(lam=0.0)
    with pytest.raises(ValueError):
        ClimeConfig(lam=0.1, feas_tol=0.0)


def test_default_lambda():
    assert default_lambda(100, 100, 0.5) == pytest.approx(0.5 * math.sqrt(math.log(100) / 100))
    assert default_lambda(100, 100, 0.5) == pytest.approx(0.10730, abs=1e-5)
    n = d = round(math.e ** 2)
    assert default_lambda(n, d, 1.0) == pytest.approx(math.sqrt(math.log(d) / n))
    assert default_lambda(400, 30) == pytest.approx(default_lambda(100, 30) / 2)
    with pytest.raises(ValueError):
        default_lambda(1, 10)

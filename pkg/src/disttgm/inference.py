"""Entrywise inference for the averaged debiased precision estimate.

The rank-based variance uses the Hajek projection of Kendall's tau: for each
observation ``i`` the row-concordance ``m_i = (1/(n-1)) sum_{i' != i} sign(...)``
is centred by tau, scaled by the derivative of the sine map, and sandwiched
between two columns of the CLIME estimate.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from .core import as_matrix
from .rank_corr import TauMatrix

MIN_INFERENCE_N = 3


class DegenerateSampleError(ValueError):
    """Fewer than three observations: the projection terms vanish identically."""


class ZeroVarianceError(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class PairVariance:
    j: int
    k: int
    sigma2: float
    worker_id: int = 0
    n: int = 0


@dataclass(frozen=True)
class TestResult:
    j: int
    k: int
    u_stat: float
    p_value: float
    reject: bool
    alpha: float
    ci_low: float
    ci_high: float
    theta_bar_jk: float

    __test__ = False  # keep pytest from collecting this as a test class


# --- standard normal ---------------------------------------------------------

_SQRT2 = math.sqrt(2.0)

# Acklam's rational approximation to the normal quantile (relative error ~1e-9),
# polished below by Newton steps on the erfc-based cdf.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def normal_sf(x: float) -> float:
    return 0.5 * math.erfc(x / _SQRT2)


def _acklam(p: float) -> float:
    plow = 0.02425
    if p < plow:
        q = math.sqrt(-2 * math.log(p))
        return (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
               ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    if p > 1 - plow:
        return -_acklam(1 - p)
    q = p - 0.5
    r = q * q
    return (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
           (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1)


def normal_quantile(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"quantile argument must lie in (0, 1), got {p}")
    x = _acklam(p)
    for _ in range(2):
        # Newton on whichever tail keeps the residual well conditioned
        dens = math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
        if dens == 0.0:
            break
        err = normal_cdf(x) - p if p < 0.5 else (1.0 - p) - normal_sf(x)
        x -= err / dens
    return x


# --- Hajek variance ----------------------------------------------------------

@numba.njit(cache=True)
def _row_concordance(x, y):
    n = x.size
    out = np.zeros(n, dtype=np.int64)
    for i in range(n):
        s = 0
        for k in range(n):
            a = (x[i] - x[k]) * (y[i] - y[k])
            if a > 0:
                s += 1
            elif a < 0:
                s -= 1
        out[i] = s
    return out


@numba.njit(cache=True)
def _row_concordance_ranked(rx, ry):
    # tie-free ranks 0..n-1: lower-left counts with a Fenwick tree, the rest by inclusion-exclusion
    n = rx.size
    by_x = np.empty(n, dtype=np.int64)
    for i in range(n):
        by_x[rx[i]] = i
    tree = np.zeros(n + 1, dtype=np.int64)
    out = np.empty(n, dtype=np.int64)
    for t in range(n):
        i = by_x[t]
        r = ry[i]
        ll = 0
        pos = r
        while pos > 0:
            ll += tree[pos]
            pos -= pos & (-pos)
        pos = r + 1
        while pos <= n:
            tree[pos] += 1
            pos += pos & (-pos)
        ur = (n - 1) - rx[i] - ry[i] + ll
        out[i] = 2 * (ll + ur) - (n - 1)
    return out


def row_concordance(x, y, fast: bool = True) -> np.ndarray:
    """Per-observation concordance sums ``sum_{i'} sign((x_i - x_i')(y_i - y_i'))``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if fast:
        rx = np.empty(x.size, dtype=np.int64)
        ry = np.empty(y.size, dtype=np.int64)
        ox = np.argsort(x, kind="stable")
        oy = np.argsort(y, kind="stable")
        if np.all(np.diff(x[ox]) > 0) and np.all(np.diff(y[oy]) > 0):
            rx[ox] = np.arange(x.size)
            ry[oy] = np.arange(y.size)
            return _row_concordance_ranked(rx, ry)
    return _row_concordance(x, y)


def _support_index(theta: np.ndarray, col: int) -> np.ndarray:
    return np.flatnonzero(theta[:, col] != 0)


def variance_estimate(X, tau: TauMatrix, theta_hat, j: int, k: int, *, restrict: bool = True,
                      worker_id: int = 0, strict: bool = False, fast: bool = True) -> PairVariance:
    """Plug-in variance of one debiased entry from a single shard.

    With ``restrict`` the sums run over the nonzero rows of columns ``j`` and
    ``k`` of ``theta_hat`` only; other terms carry a zero coefficient.
    """
    X = as_matrix(X, name="X")
    theta = as_matrix(theta_hat, square=True, name="theta_hat")
    n, d = X.shape
    if n < MIN_INFERENCE_N:
        raise DegenerateSampleError(
            f"variance estimate needs n >= {MIN_INFERENCE_N} observations, got {n}")
    if tau.tau.shape != (d, d) or theta.shape != (d, d):
        raise ValueError("tau, theta_hat and X disagree on the dimension")
    if restrict:
        sj, sk = _support_index(theta, j), _support_index(theta, k)
    else:
        sj = sk = np.arange(d)
    if sj.size == 0 or sk.size == 0:
        msg = f"column {j if sj.size == 0 else k} of theta_hat is empty; variance is zero"
        if strict:
            raise ZeroVarianceError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        return PairVariance(j, k, 0.0, worker_id, n)

    proj = np.zeros(n)
    cache: dict[tuple[int, int], np.ndarray] = {}
    for p in sj:
        a = theta[p, j]
        for q in sk:
            key = (min(p, q), max(p, q))
            h = cache.get(key)
            if h is None:
                t = tau.tau[p, q]
                m_row = row_concordance(X[:, p], X[:, q], fast=fast) / (n - 1)
                h = math.pi * math.cos(0.5 * math.pi * t) * (m_row - t)
                cache[key] = h
            proj += a * theta[q, k] * h
    sigma2 = float(np.mean(proj * proj))
    return PairVariance(j, k, sigma2, worker_id, n)


def gaussian_variance(theta_hat, j: int, k: int, m: int, worker_id: int = 0, n: int = 0) -> PairVariance:
    """Plug-in ``(theta_jj theta_kk + theta_jk^2) / m``."""
    theta = np.asarray(theta_hat, dtype=np.float64)
    sigma2 = (theta[j, j] * theta[k, k] + theta[j, k] ** 2) / m
    return PairVariance(j, k, float(sigma2), worker_id, n)


# --- statistics --------------------------------------------------------------

def _inverse_sd_sum(variances: Sequence[PairVariance]) -> float:
    if len(variances) == 0:
        raise ValueError("no variances supplied")
    total = 0.0
    for v in variances:
        if not v.sigma2 > 0:
            raise ZeroVarianceError(
                f"zero variance for pair ({v.j}, {v.k}) on worker {v.worker_id}")
        total += 1.0 / math.sqrt(v.sigma2)
    return total


def test_statistic(theta_bar_jk: float, variances: Sequence[PairVariance], n: int, m: int) -> float:
    """``(sqrt(N)/m) * sum_l theta_bar / sigma_l`` with ``N = n m``."""
    return math.sqrt(n * m) / m * theta_bar_jk * _inverse_sd_sum(variances)


test_statistic.__test__ = False


def gaussian_test_statistic(theta_bar_jk: float, variances: Sequence[PairVariance], n: int, m: int) -> float:
    """Gaussian-model statistic; each ``sigma_l^2`` already carries the ``1/m`` factor."""
    return math.sqrt(n) / m * theta_bar_jk * _inverse_sd_sum(variances)


def wald_test(u: float, alpha: float) -> tuple[bool, float]:
    """Two-sided test at level ``alpha``; returns ``(reject, p_value)``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    p = min(1.0, 2.0 * normal_sf(abs(u)))
    return bool(abs(u) > normal_quantile(1.0 - alpha / 2.0)), p


def confidence_interval(theta_bar_jk: float, variances: Sequence[PairVariance], n: int, m: int,
                        alpha: float) -> tuple[float, float]:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    half = math.sqrt(m) * normal_quantile(1.0 - alpha / 2.0) / math.sqrt(n) / _inverse_sd_sum(variances)
    return theta_bar_jk - half, theta_bar_jk + half


def gaussian_confidence_interval(theta_bar_jk: float, variances: Sequence[PairVariance], n: int, m: int,
                                 alpha: float) -> tuple[float, float]:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    half = m * normal_quantile(1.0 - alpha / 2.0) / math.sqrt(n) / _inverse_sd_sum(variances)
    return theta_bar_jk - half, theta_bar_jk + half


def run_test(theta_bar_jk: float, variances: Sequence[PairVariance], n: int, m: int, alpha: float,
             model: str = "transelliptical") -> TestResult:
    """Statistic, Wald decision, p-value and interval for one entry."""
    if model == "gaussian":
        u = gaussian_test_statistic(theta_bar_jk, variances, n, m)
        lo, hi = gaussian_confidence_interval(theta_bar_jk, variances, n, m, alpha)
    else:
        u = test_statistic(theta_bar_jk, variances, n, m)
        lo, hi = confidence_interval(theta_bar_jk, variances, n, m, alpha)
    reject, p = wald_test(u, alpha)
    v = variances[0]
    return TestResult(v.j, v.k, u, p, reject, alpha, lo, hi, theta_bar_jk)

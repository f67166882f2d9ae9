"""Kendall's tau, the sine-transformed latent correlation, and the Gaussian covariance.

All tau values are computed from exact integer concordance counts, so the
enumeration and sorting-based kernels agree bit-for-bit on tie-free input.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .core import as_matrix


class SampleSizeError(ValueError):
    pass


@dataclass(frozen=True)
class TauMatrix:
    tau: np.ndarray
    n: int

    @property
    def d(self) -> int:
        return self.tau.shape[0]


@dataclass(frozen=True)
class CorrelationEstimate:
    sigma_hat: np.ndarray
    source: str  # "kendall_sin" or "pearson_cov"
    n: int


def _check_pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise SampleSizeError(f"Kendall's tau needs n >= 2, got {x.size}")
    return x, y


@numba.njit(cache=True)
def _concordance_loop(x, y):
    n = x.size
    s = 0
    for i in range(n):
        for k in range(i + 1, n):
            # compare signs rather than multiply: the product can underflow
            dx = x[i] - x[k]
            dy = y[i] - y[k]
            if dx == 0 or dy == 0:
                continue
            s += 1 if (dx > 0) == (dy > 0) else -1
    return s


def concordance_naive(x, y) -> int:
    """Sum over i < i' of sign((x_i - x_i')(y_i - y_i')), by enumeration."""
    x, y = _check_pair(x, y)
    return int(_concordance_loop(x, y))


def kendall_tau(x, y) -> float:
    """Kendall's tau-a; tied pairs contribute zero."""
    x, y = _check_pair(x, y)
    n = x.size
    return concordance_naive(x, y) / (n * (n - 1) / 2)


@numba.njit(cache=True)
def _count_inversions(a):
    # bottom-up merge sort on a copy; returns number of pairs i < j with a[i] > a[j]
    n = a.size
    src = a.copy()
    dst = np.empty_like(src)
    inv = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i = lo
            j = mid
            k = lo
            while i < mid and j < hi:
                if src[j] < src[i]:
                    dst[k] = src[j]
                    inv += mid - i
                    j += 1
                else:
                    dst[k] = src[i]
                    i += 1
                k += 1
            while i < mid:
                dst[k] = src[i]
                i += 1
                k += 1
            while j < hi:
                dst[k] = src[j]
                j += 1
                k += 1
        src, dst = dst, src
        width *= 2
    return inv


@numba.njit(cache=True)
def _concordance_sorted(x_order, y):
    n = y.size
    yy = np.empty(n, dtype=np.float64)
    for i in range(n):
        yy[i] = y[x_order[i]]
    disc = _count_inversions(yy)
    total = n * (n - 1) // 2
    return total - 2 * disc


def _has_ties(v: np.ndarray) -> bool:
    s = np.sort(v)
    return bool(np.any(s[1:] == s[:-1]))


def kendall_tau_fast(x, y) -> float:
    """O(n log n) Kendall's tau via merge-sort inversion counting.

    Inputs with ties in either vector are routed to the enumeration kernel.
    """
    x, y = _check_pair(x, y)
    n = x.size
    if _has_ties(x) or _has_ties(y):
        return kendall_tau(x, y)
    s = _concordance_sorted(np.argsort(x, kind="stable"), y)
    return s / (n * (n - 1) / 2)


@numba.njit(cache=True)
def _inversions_bit(seq, tree):
    # seq is a permutation of 0..n-1; counts pairs i < j with seq[i] > seq[j]
    n = seq.size
    for i in range(n + 1):
        tree[i] = 0
    inv = 0
    for i in range(n):
        r = seq[i]
        below = 0
        pos = r + 1
        while pos > 0:
            below += tree[pos]
            pos -= pos & (-pos)
        inv += i - below
        pos = r + 1
        while pos <= n:
            tree[pos] += 1
            pos += pos & (-pos)
    return inv


@numba.njit(cache=True)
def _pairwise_concordance(X, ranks_t, orders_t, tied):
    n, d = X.shape
    out = np.zeros((d, d), dtype=np.int64)
    total = n * (n - 1) // 2
    seq = np.empty(n, dtype=np.int64)
    tree = np.empty(n + 1, dtype=np.int64)
    for p in range(d):
        out[p, p] = total
        order = orders_t[p]
        for q in range(p + 1, d):
            if tied[p] or tied[q]:
                s = 0
                for i in range(n):
                    for k in range(i + 1, n):
                        a = (X[i, p] - X[k, p]) * (X[i, q] - X[k, q])
                        if a > 0:
                            s += 1
                        elif a < 0:
                            s -= 1
            else:
                rq = ranks_t[q]
                for i in range(n):
                    seq[i] = rq[order[i]]
                s = total - 2 * _inversions_bit(seq, tree)
            out[p, q] = s
            out[q, p] = s
    return out


def tau_matrix(X, fast: bool = True) -> TauMatrix:
    """All pairwise Kendall's tau values of the columns of ``X``."""
    X = as_matrix(X, name="X")
    n, d = X.shape
    if n < 2:
        raise SampleSizeError(f"Kendall's tau needs n >= 2, got {n}")
    if fast:
        X = np.ascontiguousarray(X)
        orders_t = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
        ranks_t = np.empty_like(orders_t)
        np.put_along_axis(ranks_t, orders_t, np.arange(n)[None, :], axis=1)
        tied = np.array([_has_ties(X[:, j]) for j in range(d)])
        counts = _pairwise_concordance(X, ranks_t, orders_t, tied)
    else:
        counts = np.empty((d, d), dtype=np.int64)
        for p in range(d):
            counts[p, p] = n * (n - 1) // 2
            for q in range(p + 1, d):
                counts[p, q] = counts[q, p] = concordance_naive(X[:, p], X[:, q])
    tau = counts / (n * (n - 1) / 2)
    np.fill_diagonal(tau, 1.0)
    return TauMatrix(tau, n)


def latent_correlation(X, fast: bool = True) -> tuple[TauMatrix, CorrelationEstimate]:
    """Sine-transformed Kendall correlation matrix with unit diagonal."""
    tm = tau_matrix(X, fast=fast)
    sigma = np.sin(0.5 * np.pi * tm.tau)
    np.fill_diagonal(sigma, 1.0)
    # sin is odd and tau is exactly symmetric, but force bitwise symmetry anyway
    sigma = np.triu(sigma) + np.triu(sigma, 1).T
    return tm, CorrelationEstimate(sigma, "kendall_sin", tm.n)


def sample_covariance(X) -> CorrelationEstimate:
    """Uncentred second-moment matrix (1/n) X^T X for zero-mean data."""
    X = as_matrix(X, name="X")
    n = X.shape[0]
    if n < 1:
        raise SampleSizeError("sample covariance needs at least one row")
    S = X.T @ X / n
    S = np.triu(S) + np.triu(S, 1).T
    return CorrelationEstimate(S, "pearson_cov", n)

"""Column-wise constrained l1 minimisation (CLIME) on a dense tableau simplex.

Column ``j`` solves::

    min ||beta||_1   s.t.   ||S beta - e_j||_inf <= lam

written as an LP in ``u, v >= 0`` with ``beta = u - v``. Rows ``0..d-1`` carry
``S(u - v) + s = e_j + lam`` and rows ``d..2d-1`` carry
``-S(u - v) + s = lam - e_j``. Only row ``d + j`` can start infeasible, so
phase one needs a single artificial variable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .core import as_matrix

_PIVOT_TOL = 1e-11
_COST_TOL = 1e-11
_SNAP = 1e-12

# solver status codes
_OPTIMAL, _ITER_CAP, _UNBOUNDED = 0, 1, 2


class SolverError(RuntimeError):
    """A CLIME column LP failed; carries the column indices and residuals."""

    def __init__(self, message, columns=(), residuals=()):
        super().__init__(message)
        self.columns = tuple(columns)
        self.residuals = tuple(residuals)


@dataclass(frozen=True)
class ClimeConfig:
    lam: float
    feas_tol: float = 1e-8
    obj_tol: float = 1e-7
    max_iter: int | None = None  # per column; default 50*d

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be > 0, got {self.lam}")
        if not (self.feas_tol > 0 and self.obj_tol > 0):
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class PrecisionEstimate:
    theta_hat: np.ndarray
    lambda_used: float
    per_column_objective: np.ndarray
    theta_prime: np.ndarray = field(repr=False)


@numba.njit(cache=True)
def _pivot(T, r, c):
    ncol = T.shape[1]
    inv = 1.0 / T[r, c]
    for k in range(ncol):
        T[r, k] *= inv
    T[r, c] = 1.0
    for i in range(T.shape[0]):
        if i != r:
            f = T[i, c]
            if f != 0.0:
                for k in range(ncol):
                    T[i, k] -= f * T[r, k]
                T[i, c] = 0.0


@numba.njit(cache=True)
def _iterate(T, basis, n_enter, max_iter):
    """Primal simplex on tableau ``T`` whose last row holds reduced costs.

    Dantzig pricing, switching to Bland's rule after a run of degenerate pivots.
    Returns (status, iterations).
    """
    m = T.shape[0] - 1
    rhs = T.shape[1] - 1
    it = 0
    degenerate_run = 0
    while it < max_iter:
        bland = degenerate_run > 20
        c = -1
        best = -_COST_TOL
        for jcol in range(n_enter):
            rc = T[m, jcol]
            if rc < -_COST_TOL:
                if bland:
                    c = jcol
                    break
                if rc < best:
                    best = rc
                    c = jcol
        if c < 0:
            return _OPTIMAL, it
        r = -1
        ratio = math.inf
        for i in range(m):
            a = T[i, c]
            if a > _PIVOT_TOL:
                q = T[i, rhs] / a
                if q < ratio - 1e-14 or (abs(q - ratio) <= 1e-14 and basis[i] < basis[r]):
                    ratio = q
                    r = i
        if r < 0:
            return _UNBOUNDED, it
        if ratio <= 1e-14:
            degenerate_run += 1
        else:
            degenerate_run = 0
        _pivot(T, r, c)
        basis[r] = c
        it += 1
    return _ITER_CAP, it


@numba.njit(cache=True)
def _solve_column(S, j, lam, max_iter):
    d = S.shape[0]
    m = 2 * d
    n_struct = 2 * d
    art = n_struct + m  # artificial column
    rhs = art + 1
    T = np.zeros((m + 1, rhs + 1))
    basis = np.empty(m, dtype=np.int64)
    for i in range(d):
        for k in range(d):
            T[i, k] = S[i, k]
            T[i, d + k] = -S[i, k]
            T[d + i, k] = -S[i, k]
            T[d + i, d + k] = S[i, k]
        T[i, n_struct + i] = 1.0
        T[d + i, n_struct + d + i] = 1.0
        T[i, rhs] = lam + (1.0 if i == j else 0.0)
        T[d + i, rhs] = lam - (1.0 if i == j else 0.0)
        basis[i] = n_struct + i
        basis[d + i] = n_struct + d + i
    status = _OPTIMAL
    iters = 0
    rj = d + j
    if T[rj, rhs] < 0.0:
        # flip the row and put an artificial variable in the basis
        for k in range(rhs + 1):
            T[rj, k] = -T[rj, k]
        T[rj, art] = 1.0
        basis[rj] = art
        # phase one objective: minimise the artificial
        for k in range(rhs + 1):
            T[m, k] = -T[rj, k]
        T[m, art] = 0.0
        status, iters = _iterate(T, basis, art, max_iter)
        if status != _OPTIMAL or -T[m, rhs] > 1e-9:
            return np.zeros(d), 3, iters
        for i in range(m):
            if basis[i] == art:
                # degenerate artificial at zero: pivot it out on any usable column
                for k in range(art):
                    if abs(T[i, k]) > 1e-9:
                        _pivot(T, i, k)
                        basis[i] = k
                        break
        for i in range(m + 1):
            T[i, art] = 0.0
    # phase two: costs 1 on u and v
    T[m, :] = 0.0
    for k in range(n_struct):
        T[m, k] = 1.0
    for i in range(m):
        b = basis[i]
        if b < n_struct:
            T[m, :] -= T[i, :]
    status2, it2 = _iterate(T, basis, art, max_iter - iters)
    iters += it2
    beta = np.zeros(d)
    for i in range(m):
        b = basis[i]
        if b < d:
            beta[b] += T[i, rhs]
        elif b < n_struct:
            beta[b - d] -= T[i, rhs]
    return beta, status2, iters


def _prepare(sigma_hat) -> np.ndarray:
    S = as_matrix(sigma_hat, square=True, name="sigma_hat")
    return np.ascontiguousarray(S)


def clime_column(sigma_hat, j: int, cfg: ClimeConfig) -> np.ndarray:
    """Solve one CLIME column; returns ``beta`` with tiny entries snapped to 0."""
    S = _prepare(sigma_hat)
    d = S.shape[0]
    if not 0 <= j < d:
        raise IndexError(f"column {j} out of range for d={d}")
    beta = _column_or_raise(S, j, cfg)
    return beta


def _column_or_raise(S, j, cfg):
    d = S.shape[0]
    max_iter = cfg.max_iter if cfg.max_iter is not None else 50 * d
    # the tableau has 2d rows; allow at least that many pivots
    max_iter = max(max_iter, 4 * d + 10)
    beta, status, _ = _solve_column(S, j, float(cfg.lam), max_iter)
    beta[np.abs(beta) < _SNAP] = 0.0
    e = np.zeros(d)
    e[j] = 1.0
    resid = float(np.max(np.abs(S @ beta - e)))
    if status != _OPTIMAL or resid > cfg.lam + cfg.feas_tol:
        reason = {1: "iteration cap hit", 2: "unbounded", 3: "no feasible point"}.get(status, "infeasible result")
        raise SolverError(
            f"CLIME column {j} failed ({reason}); residual {resid:.3e} vs lambda {cfg.lam:.3e}",
            columns=[j], residuals=[resid],
        )
    return beta


def symmetrize_min_magnitude(theta_prime: np.ndarray) -> np.ndarray:
    """Keep, for each pair, whichever of the two mirrored entries is smaller in magnitude."""
    a = theta_prime
    keep = np.abs(a) <= np.abs(a.T)
    out = np.where(keep, a, a.T)
    # ties in magnitude with opposite signs: resolve on the upper triangle and mirror
    return np.triu(out) + np.triu(out, 1).T


def clime_estimate(sigma_hat, cfg: ClimeConfig) -> PrecisionEstimate:
    S = _prepare(sigma_hat)
    d = S.shape[0]
    theta_prime = np.zeros((d, d))
    failed, resids = [], []
    for j in range(d):
        try:
            theta_prime[:, j] = _column_or_raise(S, j, cfg)
        except SolverError as exc:
            failed.extend(exc.columns)
            resids.extend(exc.residuals)
    if failed:
        raise SolverError(f"CLIME failed on columns {failed}", columns=failed, residuals=resids)
    objective = np.abs(theta_prime).sum(axis=0)
    theta = symmetrize_min_magnitude(theta_prime)
    return PrecisionEstimate(theta, float(cfg.lam), objective, theta_prime)


def default_lambda(n: int, d: int, c: float = 0.5) -> float:
    """Rate-shaped regularisation ``c * sqrt(log d / n)``."""
    if n < 2 or d < 2:
        raise ValueError(f"need n >= 2 and d >= 2, got n={n}, d={d}")
    if not c > 0:
        raise ValueError("c must be positive")
    return c * math.sqrt(math.log(d) / n)

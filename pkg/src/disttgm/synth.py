"""Ground-truth precision matrices and Gaussian / nonparanormal / transelliptical samplers."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from .core import DimensionError, SupportSet, as_matrix, support

GRAPH_KINDS = ("chain", "random", "hub")
MARGINAL_KINDS = ("identity", "nonparanormal_sqrt", "cube")
_ZERO_TOL = 1e-10


@dataclass(frozen=True)
class GraphSpec:
    d: int
    kind: str = "random"
    v: float = 0.3
    edge_prob: float | None = None  # random graphs only; default 3/d
    delta: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.d < 2:
            raise DimensionError(f"graph dimension must be >= 2, got {self.d}")
        if self.kind not in GRAPH_KINDS:
            raise ValueError(f"unknown graph kind {self.kind!r}")
        if self.v == 0:
            raise ValueError("edge magnitude must be nonzero")
        if not self.delta > 0:
            raise ValueError("diagonal boost must be positive")
        if self.edge_prob is not None and not 0 < self.edge_prob < 1:
            raise ValueError("edge_prob must lie in (0, 1)")

    @property
    def prob(self) -> float:
        return self.edge_prob if self.edge_prob is not None else min(3.0 / self.d, 0.5)


@dataclass(frozen=True)
class GroundTruth:
    sigma_star: np.ndarray
    theta_star: np.ndarray
    support: SupportSet

    @property
    def d(self) -> int:
        return self.sigma_star.shape[0]

    @property
    def sparsity(self) -> int:
        """Largest number of nonzeros in a row of the precision matrix (diagonal included)."""
        nz = np.abs(self.theta_star) > 1e-10
        return int(nz.sum(axis=1).max())

    def zero_pairs(self) -> list[tuple[int, int]]:
        d = self.d
        return [(j, k) for j in range(d) for k in range(j + 1, d) if (j, k) not in self.support.pairs]


def adjacency(spec: GraphSpec) -> np.ndarray:
    d = spec.d
    A = np.zeros((d, d))
    if spec.kind == "chain":
        idx = np.arange(d - 1)
        A[idx, idx + 1] = 1.0
    elif spec.kind == "random":
        rng = np.random.default_rng(spec.seed)
        A = np.triu((rng.random((d, d)) < spec.prob).astype(float), k=1)
    else:
        for block in np.array_split(np.arange(d), math.ceil(d / 20)):
            A[block[0], block[1:]] = 1.0
    return A + A.T


def _correlation_pair(theta0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sigma0 = np.linalg.inv(theta0)
    sigma0 = (sigma0 + sigma0.T) / 2
    scale = 1.0 / np.sqrt(np.diag(sigma0))
    sigma = sigma0 * np.outer(scale, scale)
    sigma = (sigma + sigma.T) / 2
    np.fill_diagonal(sigma, 1.0)
    theta = np.linalg.inv(sigma)
    theta = (theta + theta.T) / 2
    # structural zeros come back as rounding dust; make them exact
    theta[np.abs(theta) <= _ZERO_TOL] = 0.0
    return sigma, theta


def _truth_from_precision(theta0: np.ndarray) -> GroundTruth:
    sigma, theta = _correlation_pair(theta0)
    if np.linalg.eigvalsh(sigma)[0] <= 0:
        raise np.linalg.LinAlgError("generated correlation matrix is not positive definite")
    return GroundTruth(sigma, theta, support(theta, 1e-10))


def generate_precision(spec: GraphSpec) -> GroundTruth:
    """Sparse precision matrix whose inverse is a correlation matrix."""
    vA = spec.v * adjacency(spec)
    shift = abs(np.linalg.eigvalsh(vA)[0]) + spec.delta
    theta0 = vA + shift * np.eye(spec.d)
    assert np.linalg.eigvalsh(theta0)[0] > 0
    return _truth_from_precision(theta0)


def plant_entry(truth: GroundTruth, j: int, k: int, mu: float) -> tuple[GroundTruth, float]:
    """Set the (j, k) entry of the precision matrix to ``mu`` and restore a valid truth.

    Returns the new truth and the realised entry after correlation rescaling.
    """
    if j == k:
        raise IndexError("planted entry must be off-diagonal")
    theta = truth.theta_star.copy()
    if theta[j, k] == mu and theta[k, j] == mu:
        return truth, float(mu)
    theta[j, k] = theta[k, j] = mu
    lam_min = np.linalg.eigvalsh(theta)[0]
    if lam_min <= 0.05:
        theta += (0.05 - lam_min + 1e-6) * np.eye(truth.d)
    new = _truth_from_precision(theta)
    return new, float(new.theta_star[j, k])


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_gaussian(truth: GroundTruth, n: int, seed) -> np.ndarray:
    if n < 1:
        raise ValueError(f"need n >= 1 samples, got {n}")
    L = np.linalg.cholesky(truth.sigma_star)
    Z = _rng(seed).standard_normal((n, truth.d))
    return Z @ L.T


def sample_elliptical(truth: GroundTruth, n: int, seed, xi: str = "chi_d") -> np.ndarray:
    """Rows ``xi * A^T U`` with ``A^T A = Sigma``, ``U`` uniform on the sphere, ``xi ~ chi_d``."""
    if xi != "chi_d":
        raise ValueError(f"unsupported generating variate {xi!r}")
    if n < 1:
        raise ValueError(f"need n >= 1 samples, got {n}")
    d = truth.d
    rng = _rng(seed)
    L = np.linalg.cholesky(truth.sigma_star)
    G = rng.standard_normal((n, d))
    U = G / np.linalg.norm(G, axis=1, keepdims=True)
    r = np.sqrt(rng.chisquare(d, size=n))
    return (U * r[:, None]) @ L.T


@lru_cache(maxsize=None)
def abs_normal_moment() -> float:
    """E|Z| for standard normal Z, by adaptive quadrature."""
    val, _ = integrate.quad(lambda t: abs(t) * math.exp(-0.5 * t * t) / math.sqrt(2 * math.pi), -np.inf, np.inf,
                            epsabs=1e-13, epsrel=1e-13, limit=200)
    return val


def transform_marginals(latent, kind: str) -> np.ndarray:
    """Apply the same strictly increasing transform to every coordinate."""
    Y = as_matrix(latent, name="latent")
    if kind == "identity":
        return Y.copy()
    if kind == "nonparanormal_sqrt":
        return np.sign(Y) * np.sqrt(np.abs(Y)) / math.sqrt(abs_normal_moment())
    if kind == "cube":
        return np.sign(Y) * np.abs(Y) ** 3
    raise ValueError(f"unknown marginal transform {kind!r}")


MODELS = ("gaussian", "nonparanormal", "transelliptical")


def sample_model(truth: GroundTruth, model: str, n: int, seed) -> np.ndarray:
    """Draw ``n`` observations from one of the three data models used in the experiments."""
    if model == "gaussian":
        return sample_gaussian(truth, n, seed)
    if model == "nonparanormal":
        return transform_marginals(sample_gaussian(truth, n, seed), "nonparanormal_sqrt")
    if model == "transelliptical":
        return transform_marginals(sample_elliptical(truth, n, seed), "cube")
    raise ValueError(f"unknown model {model!r}")

"""Master-side combination: debiasing, averaging and hard thresholding."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import DimensionError, as_matrix

THRESHOLD_MODES = ("fixed", "formula", "oracle_grid")


@dataclass(frozen=True)
class ThresholdConfig:
    mode: str = "formula"
    t: float = 0.0
    c_t: float = 2.0
    grid: tuple = field(default=(0.5, 0.6, 0.7, 0.8, 0.9, 0.95))
    threshold_diagonal: bool = False

    def __post_init__(self):
        if self.mode not in THRESHOLD_MODES:
            raise ValueError(f"unknown threshold mode {self.mode!r}")
        if self.mode == "fixed" and self.t < 0:
            raise ValueError("threshold must be non-negative")


def debias(theta_hat, sigma_hat) -> np.ndarray:
    """One-step correction ``2*Theta - Theta Sigma Theta``, symmetrised."""
    theta = as_matrix(theta_hat, square=True, name="theta_hat")
    sigma = as_matrix(sigma_hat, square=True, name="sigma_hat")
    if theta.shape != sigma.shape:
        raise DimensionError(f"shape mismatch {theta.shape} vs {sigma.shape}")
    out = 2.0 * theta - theta @ sigma @ theta
    return (out + out.T) / 2.0


def average(matrices: Sequence[np.ndarray]) -> np.ndarray:
    """Mean of the matrices, accumulated left to right in the given order."""
    if len(matrices) == 0:
        raise ValueError("nothing to average")
    shape = np.shape(matrices[0])
    acc = np.zeros(shape)
    for mat in matrices:
        if np.shape(mat) != shape:
            raise DimensionError(f"shape mismatch {np.shape(mat)} vs {shape}")
        acc += mat
    return acc / len(matrices)


def hard_threshold(theta_bar, t: float, threshold_diagonal: bool = False) -> np.ndarray:
    """Zero entries with ``|x| <= t``; the diagonal is kept unless asked otherwise."""
    a = as_matrix(theta_bar, name="theta_bar")
    if t < 0:
        raise ValueError("threshold must be non-negative")
    out = np.where(np.abs(a) > t, a, 0.0)
    if not threshold_diagonal and a.shape[0] == a.shape[1]:
        np.fill_diagonal(out, np.diag(a))
    return out


def default_threshold(n: int, d: int, m: int, s_hat: float, c_t: float = 2.0) -> float:
    """``c_t * (sqrt(log d / N) + sqrt(d / (N (n-1))) + s m log d / N)`` with ``N = n m``."""
    if n <= 1:
        raise ValueError(f"need n >= 2, got {n}")
    N = n * m
    logd = math.log(d)
    return c_t * (math.sqrt(logd / N) + math.sqrt(d / (N * (n - 1))) + s_hat * m * logd / N)


def row_support_size(theta: np.ndarray) -> float:
    """Median number of nonzeros per row (diagonal included)."""
    return float(np.median((theta != 0).sum(axis=1)))


def resolve_threshold(cfg: ThresholdConfig, n: int, d: int, m: int, s_hat: float) -> float:
    if cfg.mode == "fixed":
        return float(cfg.t)
    if cfg.mode == "formula":
        return default_threshold(n, d, m, s_hat, cfg.c_t)
    raise ValueError("oracle_grid thresholds need the ground truth; resolve them in the experiment driver")

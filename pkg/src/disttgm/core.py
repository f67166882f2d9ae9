"""Matrix helpers, support sets and recovery metrics shared across the package.

Dense matrices are plain ``numpy.ndarray`` objects of dtype float64. Indices are
0-based internally; the CLI and file formats present them 1-based.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np


class DimensionError(ValueError):
    """Raised when array shapes do not fit an operation."""


def as_matrix(a, *, square: bool = False, name: str = "matrix") -> np.ndarray:
    """Validate ``a`` as a finite 2-D float64 array."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if square and arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def inf_norm(a: np.ndarray) -> float:
    """Elementwise max-abs norm."""
    a = np.asarray(a, dtype=np.float64)
    return float(np.max(np.abs(a))) if a.size else 0.0


def matrix_norms(a) -> tuple[float, float, float]:
    """Return ``(max|a_jk|, spectral norm, Frobenius norm)`` of a square matrix."""
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"spectral norm needs a square matrix, got {a.shape}")
    if np.array_equal(a, a.T):
        spectral = float(np.max(np.abs(np.linalg.eigvalsh(a)))) if a.size else 0.0
    else:
        spectral = float(np.linalg.norm(a, 2)) if a.size else 0.0
    big = inf_norm(a)
    # scale first so tiny or huge entries neither underflow nor overflow when squared
    fro = big * float(np.sqrt(np.sum((a / big) ** 2))) if big > 0 else 0.0
    return big, spectral, fro


@dataclass(frozen=True)
class SupportSet:
    """Off-diagonal nonzero pattern stored as ``(j, k)`` pairs with ``j < k``."""

    dimension: int
    pairs: frozenset

    def __post_init__(self):
        for j, k in self.pairs:
            if not (0 <= j < k < self.dimension):
                raise ValueError(f"invalid support pair {(j, k)} for dimension {self.dimension}")

    @classmethod
    def from_pairs(cls, dimension: int, pairs: Iterable[tuple[int, int]]) -> "SupportSet":
        return cls(dimension, frozenset((min(j, k), max(j, k)) for j, k in pairs))

    def __len__(self) -> int:
        return len(self.pairs)

    def __contains__(self, pair) -> bool:
        j, k = pair
        return (min(j, k), max(j, k)) in self.pairs

    def sorted_pairs(self) -> list[tuple[int, int]]:
        return sorted(self.pairs)


def support(a, tol: float = 0.0) -> SupportSet:
    """Pairs ``j < k`` with ``max(|a_jk|, |a_kj|) > tol``."""
    a = as_matrix(a, square=True)
    mag = np.maximum(np.abs(a), np.abs(a.T))
    js, ks = np.nonzero(np.triu(mag > tol, k=1))
    return SupportSet(a.shape[0], frozenset(zip(js.tolist(), ks.tolist())))


def f1_score(est: SupportSet, truth: SupportSet) -> float:
    if est.dimension != truth.dimension:
        raise DimensionError("support sets have different dimensions")
    if not truth.pairs and not est.pairs:
        return 1.0
    if not est.pairs or not truth.pairs:
        return 0.0
    hits = len(est.pairs & truth.pairs)
    if hits == 0:
        return 0.0
    precision = hits / len(est.pairs)
    recall = hits / len(truth.pairs)
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class ErrorReport:
    inf_norm: float
    spectral: float
    frobenius: float
    f1: float


def error_report(estimate, truth, truth_support: SupportSet | None = None, tol: float = 0.0) -> ErrorReport:
    """Score an estimate against the true precision matrix."""
    estimate = as_matrix(estimate, square=True, name="estimate")
    truth = as_matrix(truth, square=True, name="truth")
    if estimate.shape != truth.shape:
        raise DimensionError(f"shape mismatch {estimate.shape} vs {truth.shape}")
    if truth_support is None:
        truth_support = support(truth, 1e-10)
    e_inf, e_spec, e_fro = matrix_norms(estimate - truth)
    return ErrorReport(e_inf, e_spec, e_fro, f1_score(support(estimate, tol), truth_support))

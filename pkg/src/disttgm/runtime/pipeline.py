"""One-round worker/master orchestration.

Each worker turns its shard into a debiased estimate plus per-pair variances
and sends exactly one :class:`WorkerSummary` to the master, which averages,
thresholds and runs the entrywise tests.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import aggregate, inference
from ..aggregate import ThresholdConfig
from ..clime import ClimeConfig, clime_estimate, default_lambda
from ..core import DimensionError, as_matrix
from ..rank_corr import latent_correlation, sample_covariance
from .codec import WorkerSummary
from .transport import TRANSPORTS, collect

MODELS = ("transelliptical", "gaussian")


class ProtocolError(RuntimeError):
    pass


class WorkerError(RuntimeError):
    def __init__(self, worker_id: int, cause: BaseException):
        super().__init__(f"worker {worker_id}: {type(cause).__name__}: {cause}")
        self.worker_id = worker_id
        self.cause = cause


class PipelineError(RuntimeError):
    def __init__(self, failures: Sequence[WorkerError]):
        ids = sorted(f.worker_id for f in failures)
        super().__init__(f"{len(failures)} worker(s) failed: {ids}; first: {failures[0]}")
        self.failures = list(failures)


@dataclass(frozen=True)
class DataShard:
    worker_id: int
    X: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class PipelineConfig:
    m: int = 1
    model: str = "transelliptical"
    lam: float | None = None          # fixed lambda; None -> lambda_c * sqrt(log d / n)
    lambda_c: float = 0.5
    feas_tol: float = 1e-8
    threshold: ThresholdConfig = field(default_factory=ThresholdConfig)
    infer_pairs: tuple = ()
    alpha: float = 0.05
    seed: int = 0
    transport: str = "inprocess"
    concurrent: bool = True
    truncate: bool = False
    kendall_fast: bool = True

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("need at least one worker")
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}")
        if self.transport not in TRANSPORTS:
            raise ValueError(f"unknown transport {self.transport!r}")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")

    def clime_config(self, n: int, d: int) -> ClimeConfig:
        lam = self.lam if self.lam is not None else default_lambda(n, d, self.lambda_c)
        return ClimeConfig(lam, feas_tol=self.feas_tol)


@dataclass
class EstimateReport:
    theta_bar: np.ndarray
    theta_check: np.ndarray
    threshold: float
    tests: list
    per_worker: list
    messages: int
    timings: dict = field(default_factory=dict)

    def identical(self, other: "EstimateReport") -> bool:
        """Bitwise comparison of every computed quantity (timings excluded)."""
        return (
            self.theta_bar.tobytes() == other.theta_bar.tobytes()
            and self.theta_check.tobytes() == other.theta_check.tobytes()
            and np.float64(self.threshold).tobytes() == np.float64(other.threshold).tobytes()
            and self.tests == other.tests
            and self.per_worker == other.per_worker
            and self.messages == other.messages
        )


def worker_seed(run_seed: int, worker_id: int) -> np.random.SeedSequence:
    """Independent stream for worker ``worker_id``, fixed regardless of scheduling."""
    return np.random.SeedSequence(entropy=run_seed, spawn_key=(worker_id,))


def partition(X, m: int, truncate: bool = False) -> list[DataShard]:
    """Split rows into ``m`` equal contiguous blocks."""
    X = as_matrix(X, name="X")
    N = X.shape[0]
    if m < 1:
        raise ValueError("need at least one worker")
    if N % m and not truncate:
        raise ValueError(f"N={N} is not divisible by m={m}; pass truncate=True to drop {N % m} rows")
    n = N // m
    if n < inference.MIN_INFERENCE_N:
        raise inference.DegenerateSampleError(f"shards of {n} rows are too small (need >= {inference.MIN_INFERENCE_N})")
    return [DataShard(l, X[l * n:(l + 1) * n].copy()) for l in range(m)]


@dataclass(frozen=True)
class LocalFit:
    sigma_hat: np.ndarray
    tau: object  # TauMatrix or None
    estimate: object  # PrecisionEstimate
    theta_tilde: np.ndarray


def local_fit(X: np.ndarray, cfg: PipelineConfig) -> LocalFit:
    """Correlation estimate, CLIME and debiasing on one block of data."""
    n, d = X.shape
    if cfg.model == "transelliptical":
        tau, corr = latent_correlation(X, fast=cfg.kendall_fast)
    else:
        tau, corr = None, sample_covariance(X)
    est = clime_estimate(corr.sigma_hat, cfg.clime_config(n, d))
    return LocalFit(corr.sigma_hat, tau, est, aggregate.debias(est.theta_hat, corr.sigma_hat))


def worker_run(shard: DataShard, cfg: PipelineConfig) -> WorkerSummary:
    try:
        fit = local_fit(shard.X, cfg)
        variances = []
        for j, k in cfg.infer_pairs:
            if cfg.model == "transelliptical":
                v = inference.variance_estimate(shard.X, fit.tau, fit.estimate.theta_hat, j, k,
                                                worker_id=shard.worker_id)
            else:
                if shard.n < inference.MIN_INFERENCE_N:
                    raise inference.DegenerateSampleError(f"inference needs n >= {inference.MIN_INFERENCE_N}")
                v = inference.gaussian_variance(fit.estimate.theta_hat, j, k, cfg.m, shard.worker_id, shard.n)
            variances.append(v)
    except Exception as exc:
        raise WorkerError(shard.worker_id, exc) from exc
    return WorkerSummary(shard.worker_id, shard.n, shard.d, fit.theta_tilde, tuple(variances),
                         fit.estimate.lambda_used)


def _formula_threshold(theta_bar, n, d, m, cfg: ThresholdConfig) -> float:
    # workers only ship the debiased estimate, so the row sparsity is read off
    # theta_bar after a first pass at the sparsity-free part of the rate
    rate = cfg.c_t * (np.sqrt(np.log(d) / (n * m)) + np.sqrt(d / (n * m * (n - 1))))
    s_hat = aggregate.row_support_size(aggregate.hard_threshold(theta_bar, rate))
    return aggregate.default_threshold(n, d, m, s_hat, cfg.c_t)


def master_aggregate(summaries: Sequence[WorkerSummary], cfg: PipelineConfig,
                     messages: int | None = None) -> EstimateReport:
    ids = [s.worker_id for s in summaries]
    if len(set(ids)) != len(ids):
        raise ProtocolError(f"duplicate worker ids in {sorted(ids)}")
    if len(summaries) != cfg.m:
        raise ProtocolError(f"expected {cfg.m} summaries, got {len(summaries)}")
    ordered = sorted(summaries, key=lambda s: s.worker_id)
    d, n = ordered[0].d, ordered[0].n
    for s in ordered:
        if s.d != d:
            raise DimensionError(f"worker {s.worker_id} sent d={s.d}, expected {d}")
        if s.n != n:
            raise ProtocolError(f"worker {s.worker_id} used n={s.n}; shards must be equal-sized")
    theta_bar = aggregate.average([s.theta_tilde for s in ordered])
    tcfg = cfg.threshold
    if tcfg.mode == "formula":
        t = _formula_threshold(theta_bar, n, d, cfg.m, tcfg)
    else:
        t = aggregate.resolve_threshold(tcfg, n, d, cfg.m, 0.0)
    theta_check = aggregate.hard_threshold(theta_bar, t, tcfg.threshold_diagonal)
    tests = []
    for idx, (j, k) in enumerate(cfg.infer_pairs):
        variances = [s.variances[idx] for s in ordered]
        if any((v.j, v.k) != (j, k) for v in variances):
            raise ProtocolError(f"variance records out of order for pair {(j, k)}")
        tests.append(inference.run_test(float(theta_bar[j, k]), variances, n, cfg.m, cfg.alpha, cfg.model))
    per_worker = [{"worker_id": s.worker_id, "n": s.n, "lambda_used": s.lambda_used} for s in ordered]
    return EstimateReport(theta_bar, theta_check, float(t), tests, per_worker,
                          messages if messages is not None else len(summaries))


def run_pipeline(X, cfg: PipelineConfig) -> EstimateReport:
    """Partition, run every worker under the configured transport, aggregate."""
    t0 = time.perf_counter()
    shards = partition(X, cfg.m, cfg.truncate)
    summaries, failures, messages = collect(shards, lambda sh: worker_run(sh, cfg), cfg.transport, cfg.concurrent)
    t1 = time.perf_counter()
    if failures:
        raise PipelineError(sorted(failures, key=lambda f: f.worker_id))
    if messages != cfg.m:
        raise ProtocolError(f"expected one message per worker ({cfg.m}), observed {messages}")
    report = master_aggregate(summaries, cfg, messages)
    report.timings = {"workers": t1 - t0, "master": time.perf_counter() - t1}
    return report

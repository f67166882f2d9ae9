"""Monte-Carlo drivers for the estimation, type-I error and power experiments.

Every repetition draws its data from ``SeedSequence(seed, spawn_key=(rep, ...))``,
so serial and pooled execution produce the same rows. Oracle tuning (grid
search against the known truth) lives here and nowhere in the library.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from . import aggregate
from .aggregate import ThresholdConfig
from .clime import default_lambda
from .core import SupportSet, error_report, f1_score, support
from .runtime.pipeline import PipelineConfig, local_fit, partition, run_pipeline
from .synth import GraphSpec, GroundTruth, generate_precision, plant_entry, sample_model

log = logging.getLogger(__name__)

ESTIMATORS = ("Centralized", "Debiased", "NaiveDist", "DistTGM")
SETTINGS = ("fixed_N", "fixed_n", "type1", "power")
DATA_MODELS = ("gaussian", "nonparanormal", "transelliptical")


@dataclass(frozen=True)
class ExperimentConfig:
    setting: str = "type1"
    model: str = "nonparanormal"
    d: int = 50
    N: int | None = 2000
    n: int | None = None
    m_grid: tuple = (1, 5, 10)
    mu_grid: tuple = (0.0, 0.2, 0.4, 0.6, 0.8)
    reps: int = 200
    alpha: float = 0.05
    estimators: tuple = ESTIMATORS
    tuning: str = "formula"
    lambda_c: float = 0.5
    lambda_grid: tuple = (0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5)
    graph: str = "random"
    edge_prob: float | None = None
    seed: int = 2024
    jobs: int = 1
    transport: str = "inprocess"

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"unknown setting {self.setting!r}")
        if self.model not in DATA_MODELS:
            raise ValueError(f"unknown model {self.model!r}")
        if not self.m_grid or (self.setting == "power" and not self.mu_grid):
            raise ValueError("grids must be nonempty")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.tuning not in ("formula", "oracle_grid"):
            raise ValueError(f"unknown tuning {self.tuning!r}")
        if self.setting == "fixed_n" and not self.n:
            raise ValueError("fixed_n needs the per-machine sample size n")
        if self.setting != "fixed_n" and not self.N:
            raise ValueError(f"{self.setting} needs the total sample size N")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimators {sorted(unknown)}")
        if any(not 0 <= mu <= 1 for mu in self.mu_grid):
            raise ValueError("mu_grid must lie in [0, 1]")

    @property
    def pipeline_model(self) -> str:
        return "gaussian" if self.model == "gaussian" else "transelliptical"

    def full_scale(self) -> "ExperimentConfig":
        """The full-size profile: d = 200, 500 repetitions for tests, 10 for estimation."""
        if self.setting in ("type1", "power"):
            return dataclasses.replace(self, d=200, N=2000, reps=500)
        if self.setting == "fixed_N":
            return dataclasses.replace(self, d=200, N=10_000, reps=10)
        return dataclasses.replace(self, d=200, n=100, reps=10)

    def truth(self) -> GroundTruth:
        return generate_precision(GraphSpec(self.d, self.graph, edge_prob=self.edge_prob, seed=self.seed))


@dataclass(frozen=True)
class ResultRow:
    estimator: str
    m: int
    rep: int
    f1: float
    err_inf: float
    err_spec: float
    err_fro: float
    elapsed: float
    error: str = ""


@dataclass(frozen=True)
class TestRow:
    estimator: str
    m: int
    rep: int
    mu: float
    rejection: bool
    u_stat: float
    p_value: float
    realized: float
    elapsed: float
    error: str = ""

    __test__ = False


# --- helpers -------------------------------------------------------------------

def rep_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)))


def _draw(cfg: ExperimentConfig, truth: GroundTruth, rep: int, m: int) -> np.ndarray:
    if cfg.setting == "fixed_n":
        # one independent stream per machine; a larger m extends the same blocks
        blocks = [sample_model(truth, cfg.model, cfg.n, rep_rng(cfg.seed, rep, l)) for l in range(m)]
        return np.vstack(blocks)
    return sample_model(truth, cfg.model, cfg.N, rep_rng(cfg.seed, rep))


def null_pair(cfg: ExperimentConfig, truth: GroundTruth) -> tuple[int, int]:
    zeros = truth.zero_pairs()
    if not zeros:
        raise ValueError("the generated graph has no zero off-diagonal entry to test")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(2 ** 32 - 1,)))
    return zeros[int(rng.integers(len(zeros)))]


def best_threshold(theta_bar: np.ndarray, truth_support: SupportSet) -> tuple[float, float]:
    """Threshold maximising F1 against the truth; returns ``(t, f1)``.

    F1 only changes when ``t`` crosses an off-diagonal magnitude, so every such
    cut is evaluated exactly.
    """
    d = theta_bar.shape[0]
    ju, ku = np.triu_indices(d, 1)
    mag = np.maximum(np.abs(theta_bar[ju, ku]), np.abs(theta_bar[ku, ju]))
    # exact zeros survive no threshold, so they never count as kept
    live = mag > 0
    ju, ku, mag = ju[live], ku[live], mag[live]
    if mag.size == 0:
        return 0.0, (1.0 if len(truth_support) == 0 else 0.0)
    order = np.argsort(-mag, kind="stable")
    hit = np.array([(int(a), int(b)) in truth_support.pairs for a, b in zip(ju[order], ku[order])])
    n_true = len(truth_support)
    kept = np.arange(1, mag.size + 1)
    tp = np.cumsum(hit)
    with np.errstate(invalid="ignore", divide="ignore"):
        f1 = np.where(tp > 0, 2 * tp / (kept + n_true), 0.0)
    f1_empty = 1.0 if n_true == 0 else 0.0
    sorted_mag = mag[order]
    best_t, best_f1 = float(sorted_mag[0]), f1_empty
    for i in range(mag.size):
        # keeping the top i+1 is only realisable if the next magnitude is strictly smaller
        if i + 1 < mag.size and sorted_mag[i + 1] == sorted_mag[i]:
            continue
        if f1[i] > best_f1:
            best_f1 = float(f1[i])
            best_t = float(sorted_mag[i + 1]) if i + 1 < mag.size else 0.0
    return best_t, best_f1


def _score(estimator: str, m: int, rep: int, est: np.ndarray, truth: GroundTruth, elapsed: float) -> ResultRow:
    r = error_report(est, truth.theta_star, truth.support)
    return ResultRow(estimator, m, rep, r.f1, r.inf_norm, r.spectral, r.frobenius, elapsed)


def _map(fn: Callable, tasks: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


# --- estimation ----------------------------------------------------------------

def _lambda_choices(cfg: ExperimentConfig, n_local: int) -> list[float]:
    if cfg.tuning == "formula":
        return [default_lambda(n_local, cfg.d, cfg.lambda_c)]
    base = math.sqrt(math.log(cfg.d) / n_local)
    return [c * base for c in cfg.lambda_grid]


def _pcfg(cfg: ExperimentConfig, m: int, lam: float, **kw) -> PipelineConfig:
    return PipelineConfig(m=m, model=cfg.pipeline_model, lam=lam, transport=cfg.transport,
                          threshold=ThresholdConfig("fixed", t=0.0), alpha=cfg.alpha, seed=cfg.seed, **kw)


def _estimation_rep(args) -> list[ResultRow]:
    cfg, m, rep = args
    truth = cfg.truth()
    rows: list[ResultRow] = []
    try:
        X = _draw(cfg, truth, rep, m)
    except Exception as exc:  # noqa: BLE001 - recorded, not fatal
        return [_failed_row(e, m, rep, exc) for e in cfg.estimators]
    N = X.shape[0]
    n = N // m
    d = cfg.d
    c_t = ThresholdConfig().c_t
    for name in cfg.estimators:
        try:
            candidates = []  # (f1, -index, estimate, elapsed)
            local_n = N if name in ("Centralized", "Debiased") else n
            for idx, lam in enumerate(_lambda_choices(cfg, local_n)):
                t0 = time.perf_counter()
                if name == "Centralized":
                    est = local_fit(X, _pcfg(cfg, 1, lam)).estimate.theta_hat
                elif name == "Debiased":
                    est = local_fit(X, _pcfg(cfg, 1, lam)).theta_tilde
                elif name == "NaiveDist":
                    fits = [local_fit(sh.X, _pcfg(cfg, m, lam)).estimate.theta_hat for sh in partition(X, m)]
                    est = aggregate.average(fits)
                else:
                    est = run_pipeline(X, _pcfg(cfg, m, lam)).theta_bar
                elapsed = time.perf_counter() - t0
                if name in ("Debiased", "DistTGM"):
                    if cfg.tuning == "oracle_grid":
                        t, _ = best_threshold(est, truth.support)
                    else:
                        mm = 1 if name == "Debiased" else m
                        rate = c_t * (math.sqrt(math.log(d) / N) + math.sqrt(d / (N * (N // mm - 1))))
                        s_hat = aggregate.row_support_size(aggregate.hard_threshold(est, rate))
                        t = aggregate.default_threshold(N // mm, d, mm, s_hat, c_t)
                    est = aggregate.hard_threshold(est, t)
                f1 = f1_score(support(est), truth.support)
                candidates.append((f1, -idx, est, elapsed))
            f1, _, est, elapsed = max(candidates, key=lambda c: (c[0], c[1]))
            rows.append(_score(name, m, rep, est, truth, elapsed))
        except Exception as exc:  # noqa: BLE001 - recorded, not fatal
            log.warning("rep %d, m=%d, %s failed: %s", rep, m, name, exc)
            rows.append(_failed_row(name, m, rep, exc))
    return rows


def _failed_row(name, m, rep, exc) -> ResultRow:
    nan = float("nan")
    return ResultRow(name, m, rep, nan, nan, nan, nan, nan, f"{type(exc).__name__}: {exc}")


def run_estimation_experiment(cfg: ExperimentConfig) -> list[ResultRow]:
    """Score the four estimators for every machine count and repetition."""
    if cfg.setting not in ("fixed_N", "fixed_n"):
        raise ValueError("estimation experiments need setting fixed_N or fixed_n")
    tasks = [(cfg, m, rep) for m in cfg.m_grid for rep in range(cfg.reps)]
    rows = [row for chunk in _map(_estimation_rep, tasks, cfg.jobs) for row in chunk]
    order = {name: i for i, name in enumerate(ESTIMATORS)}
    return sorted(rows, key=lambda r: (order[r.estimator], r.m, r.rep))


def summarize_estimation(rows: Iterable[ResultRow]) -> dict:
    """Mean and standard error of each metric per (estimator, m), skipping failed reps."""
    groups: dict = {}
    for r in rows:
        if not r.error:
            groups.setdefault((r.estimator, r.m), []).append(r)
    out = {}
    for key, rs in sorted(groups.items()):
        entry = {}
        for metric in ("f1", "err_inf", "err_spec", "err_fro", "elapsed"):
            vals = np.array([getattr(r, metric) for r in rs])
            se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
            entry[metric] = (float(vals.mean()), se)
        entry["reps"] = len(rs)
        out[key] = entry
    return out


# --- inference -----------------------------------------------------------------

def _test_rep(args) -> TestRow:
    cfg, truth, pair, m, rep, mu, realized, lam_c = args
    t0 = time.perf_counter()
    try:
        X = sample_model(truth, cfg.model, cfg.N, rep_rng(cfg.seed, rep))
        pcfg = PipelineConfig(m=m, model=cfg.pipeline_model, lambda_c=lam_c, infer_pairs=(pair,),
                              alpha=cfg.alpha, transport=cfg.transport,
                              threshold=ThresholdConfig("fixed", t=0.0), seed=cfg.seed)
        res = run_pipeline(X, pcfg).tests[0]
    except Exception as exc:  # noqa: BLE001 - recorded, not fatal
        log.warning("rep %d, m=%d, mu=%g failed: %s", rep, m, mu, exc)
        nan = float("nan")
        return TestRow(_test_name(m), m, rep, mu, False, nan, nan, realized, time.perf_counter() - t0,
                       f"{type(exc).__name__}: {exc}")
    return TestRow(_test_name(m), m, rep, float(mu), res.reject, res.u_stat, res.p_value, realized,
                   time.perf_counter() - t0)


def _test_name(m: int) -> str:
    return "Centralized" if m == 1 else "DistTGM"


def _test_rows(cfg: ExperimentConfig, truth, pair, m, mu, realized, lam_c) -> list[TestRow]:
    tasks = [(cfg, truth, pair, m, rep, mu, realized, lam_c) for rep in range(cfg.reps)]
    return _map(_test_rep, tasks, cfg.jobs)


def rejection_summary(rows: Sequence[TestRow], level: float = 0.99) -> dict:
    """Empirical rejection rate with its standard error and exact binomial interval."""
    ok = [r for r in rows if not r.error]
    k, n = sum(r.rejection for r in ok), len(ok)
    if n == 0:
        return {"rate": float("nan"), "se": float("nan"), "ci": (float("nan"), float("nan")), "reps": 0,
                "failed": len(rows)}
    rate = k / n
    ci = stats.binomtest(k, n).proportion_ci(confidence_level=level, method="exact")
    return {"rate": rate, "se": math.sqrt(rate * (1 - rate) / n), "ci": (ci.low, ci.high), "reps": n,
            "failed": len(rows) - n}


def run_type1(cfg: ExperimentConfig) -> tuple[list[TestRow], dict]:
    """Rejection rate of the entrywise test at a true zero, per machine count."""
    if cfg.setting != "type1":
        raise ValueError("run_type1 needs setting type1")
    truth = cfg.truth()
    pair = null_pair(cfg, truth)
    rows, summary = [], {}
    for m in cfg.m_grid:
        rs = _test_rows(cfg, truth, pair, m, 0.0, 0.0, cfg.lambda_c)
        rows.extend(rs)
        summary[m] = rejection_summary(rs)
    summary["pair"] = pair
    return rows, summary


def _power_curve(cfg, base, pair, m, lam_c):
    rows = []
    for mu in cfg.mu_grid:
        truth, realized = plant_entry(base, *pair, mu)
        rows.extend(_test_rows(cfg, truth, pair, m, float(mu), realized, lam_c))
    return rows


def tune_power_lambda(cfg: ExperimentConfig, m: int) -> float:
    """Largest mean power over the grid among constants whose type-I rate stays <= alpha."""
    base = cfg.truth()
    pair = null_pair(cfg, base)
    best_c, best_power = cfg.lambda_c, -1.0
    for c in cfg.lambda_grid:
        rows = _power_curve(cfg, base, pair, m, c)
        null = [r for r in rows if r.mu == 0.0]
        alt = [r for r in rows if r.mu > 0.0]
        if null and rejection_summary(null)["rate"] > cfg.alpha:
            continue
        power = rejection_summary(alt)["rate"] if alt else 0.0
        if power > best_power:
            best_c, best_power = c, power
    return best_c


def run_power(cfg: ExperimentConfig) -> tuple[list[TestRow], dict]:
    """Rejection rate of the test of a zero entry as the planted value grows."""
    if cfg.setting != "power":
        raise ValueError("run_power needs setting power")
    base = cfg.truth()
    pair = null_pair(cfg, base)
    rows, summary = [], {}
    for m in cfg.m_grid:
        lam_c = tune_power_lambda(cfg, m) if cfg.tuning == "oracle_grid" else cfg.lambda_c
        rs = _power_curve(cfg, base, pair, m, lam_c)
        rows.extend(rs)
        for mu in cfg.mu_grid:
            summary[(m, float(mu))] = rejection_summary([r for r in rs if r.mu == float(mu)])
    summary["pair"] = pair
    return rows, summary


# --- output --------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return float(f"{v:.10g}") if math.isfinite(v) else None
    return v


def emit_report(rows: Sequence, fmt: str, path, timings: bool = True) -> None:
    """Write rows as CSV (fixed header, 10 significant digits) or a JSON array.

    With ``timings=False`` the wall-clock column is left empty so repeated runs
    give byte-identical files.
    """
    if not rows:
        raise ValueError("refusing to write an empty report")
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    as_dict = dataclasses.asdict if dataclasses.is_dataclass(rows[0]) else dict
    names = list(as_dict(rows[0]))
    records = []
    for r in rows:
        raw = as_dict(r)
        rec = {k: _fmt(raw[k]) for k in names}
        if not timings and "elapsed" in rec:
            rec["elapsed"] = None
        records.append(rec)
    try:
        with open(path, "w", newline="") as fh:
            if fmt == "json":
                json.dump(records, fh, indent=1)
                fh.write("\n")
            else:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(names)
                for rec in records:
                    w.writerow(["" if rec[k] is None else (f"{rec[k]:.10g}" if isinstance(rec[k], float) else rec[k])
                                for k in names])
    except OSError as exc:
        raise OSError(f"could not write report to {path}: {exc}") from exc


def read_report(path, fmt: str) -> list[dict]:
    """Parse a file written by :func:`emit_report` back into dictionaries."""
    with open(path, newline="") as fh:
        if fmt == "json":
            return json.load(fh)
        out = []
        for rec in csv.DictReader(fh):
            parsed = {}
            for k, v in rec.items():
                if v == "":
                    parsed[k] = None if k != "error" else ""
                    continue
                try:
                    parsed[k] = int(v)
                except ValueError:
                    try:
                        parsed[k] = float(v)
                    except ValueError:
                        parsed[k] = v
            out.append(parsed)
        return out

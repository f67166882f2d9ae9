import dataclasses
import math

import numpy as np
import pytest

from disttgm import experiments as ex
from disttgm.core import SupportSet, f1_score, support
from disttgm.experiments import ExperimentConfig, ResultRow, TestRow


def small(**kw):
    base = dict(setting="fixed_n", model="nonparanormal", d=12, n=60, N=None, m_grid=(1, 3), reps=2)
    base.update(kw)
    return ExperimentConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(setting="bogus")
    with pytest.raises(ValueError):
        ExperimentConfig(reps=0)
    with pytest.raises(ValueError):
        ExperimentConfig(m_grid=())
    with pytest.raises(ValueError):
        ExperimentConfig(setting="fixed_n", n=None)
    with pytest.raises(ValueError):
        ExperimentConfig(setting="power", mu_grid=(0.0, 1.5))
    with pytest.raises(ValueError):
        ExperimentConfig(estimators=("Magic",))


def test_full_scale_profile():
    cfg = ExperimentConfig().full_scale()
    assert (cfg.d, cfg.reps) == (200, 500)


@pytest.mark.parametrize("seed", range(5))
def test_best_threshold_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    d = 7
    A = np.round(rng.standard_normal((d, d)), 1)  # coarse values force ties
    A = (A + A.T) / 2
    truth = support(np.where(rng.random((d, d)) < 0.3, 1.0, 0.0) + np.eye(d))
    truth = SupportSet.from_pairs(d, truth.pairs)
    t, f1 = ex.best_threshold(A, truth)
    cands = [0.0] + sorted(set(np.abs(A[np.triu_indices(d, 1)]).tolist()))
    brute = max(f1_score(support(np.where(np.abs(A) > c, A, 0.0)), truth) for c in cands)
    assert f1 == pytest.approx(brute, abs=1e-12)
    assert f1_score(support(np.where(np.abs(A) > t, A, 0.0)), truth) == pytest.approx(f1, abs=1e-12)


def test_estimation_rows_complete_and_finite():
    rows = ex.run_estimation_experiment(small())
    assert len(rows) == 4 * 2 * 2
    for r in rows:
        assert not r.error
        for v in (r.f1, r.err_inf, r.err_spec, r.err_fro, r.elapsed):
            assert math.isfinite(v) and v >= 0


@pytest.mark.parametrize("tuning", ["formula", "oracle_grid"])
def test_single_machine_distributed_equals_debiased(tuning):
    rows = ex.run_estimation_experiment(small(m_grid=(1,), tuning=tuning, lambda_grid=(0.3, 1.0)))
    by = {(r.estimator, r.rep): r for r in rows}
    for rep in range(2):
        a, b = by[("DistTGM", rep)], by[("Debiased", rep)]
        assert (a.f1, a.err_inf, a.err_spec, a.err_fro) == (b.f1, b.err_inf, b.err_spec, b.err_fro)
        c, n = by[("Centralized", rep)], by[("NaiveDist", rep)]
        assert (c.f1, c.err_fro) == (n.f1, n.err_fro)


def _strip(rows):
    return [dataclasses.replace(r, elapsed=0.0) for r in rows]


def test_parallel_equals_serial():
    cfg = small(reps=3)
    serial = ex.run_estimation_experiment(cfg)
    pooled = ex.run_estimation_experiment(dataclasses.replace(cfg, jobs=2))
    assert _strip(serial) == _strip(pooled)


def test_failed_rep_is_recorded(monkeypatch):
    real = ex.run_pipeline

    def broken(X, cfg):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(ex, "run_pipeline", broken)
    rows = ex.run_estimation_experiment(small(m_grid=(3,), reps=1))
    failed = [r for r in rows if r.error]
    assert [r.estimator for r in failed] == ["DistTGM"]
    assert "solver exploded" in failed[0].error
    assert "DistTGM" not in {k[0] for k in ex.summarize_estimation(rows)}
    monkeypatch.setattr(ex, "run_pipeline", real)


def test_null_pair_is_a_true_zero():
    cfg = ExperimentConfig(d=20, N=200, reps=1)
    truth = cfg.truth()
    j, k = ex.null_pair(cfg, truth)
    assert truth.theta_star[j, k] == 0.0
    assert ex.null_pair(cfg, truth) == (j, k)


def test_null_pair_requires_a_zero():
    cfg = ExperimentConfig(d=3, N=200, reps=1, edge_prob=0.99)
    truth = cfg.truth()
    if truth.zero_pairs():
        pytest.skip("graph happened to have a zero")
    with pytest.raises(ValueError, match="no zero"):
        ex.null_pair(cfg, truth)


def test_type1_single_machine_matches_centralized():
    cfg = ExperimentConfig(setting="type1", d=10, N=120, m_grid=(1, 2), reps=4)
    rows, summary = ex.run_type1(cfg)
    assert len(rows) == 8
    assert {r.estimator for r in rows if r.m == 1} == {"Centralized"}
    assert 0 <= summary[1]["rate"] <= 1
    lo, hi = summary[2]["ci"]
    assert lo <= summary[2]["rate"] <= hi


def test_power_mu_zero_is_type1():
    t1 = ExperimentConfig(setting="type1", d=10, N=120, m_grid=(2,), reps=3)
    pw = dataclasses.replace(t1, setting="power", mu_grid=(0.0, 0.5))
    rows_t1, _ = ex.run_type1(t1)
    rows_pw, summary = ex.run_power(pw)
    null = [r for r in rows_pw if r.mu == 0.0]
    assert [r.u_stat for r in null] == [r.u_stat for r in rows_t1]
    assert (2, 0.5) in summary
    assert all(r.realized != 0 for r in rows_pw if r.mu == 0.5)


def test_rejection_summary_exact_interval():
    rows = [TestRow("DistTGM", 2, i, 0.0, i < 10, 0.0, 1.0, 0.0, 0.0) for i in range(200)]
    s = ex.rejection_summary(rows)
    assert s["rate"] == 0.05
    assert s["ci"][0] < 0.05 < s["ci"][1]


# --- report --------------------------------------------------------------------

ROWS = [ResultRow("DistTGM", 5, 0, 0.9, 0.123456789123456, 1.5, 2.25, 0.01),
        ResultRow("DistTGM", 5, 1, 1.0, 1e-17, 2.0, 3.0, 0.02)]


def test_emit_refuses_empty(tmp_path):
    with pytest.raises(ValueError):
        ex.emit_report([], "csv", tmp_path / "x.csv")


def test_emit_bad_path_names_path(tmp_path):
    with pytest.raises(OSError, match="nowhere"):
        ex.emit_report(ROWS, "csv", tmp_path / "nowhere" / "x.csv")


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_emit_roundtrip(tmp_path, fmt):
    path = tmp_path / f"r.{fmt}"
    ex.emit_report(ROWS, fmt, path)
    back = ex.read_report(path, fmt)
    assert len(back) == 2
    for row, rec in zip(ROWS, back):
        for k, v in dataclasses.asdict(row).items():
            if isinstance(v, float):
                assert rec[k] == pytest.approx(v, rel=1e-9)
            else:
                assert rec[k] == v


def test_csv_header_and_digits(tmp_path):
    path = tmp_path / "r.csv"
    ex.emit_report(ROWS, "csv", path)
    lines = path.read_text().splitlines()
    assert lines[0] == "estimator,m,rep,f1,err_inf,err_spec,err_fro,elapsed,error"
    assert "0.1234567891," in lines[1] and "0.12345678912" not in lines[1]


def test_same_seed_byte_identical(tmp_path):
    cfg = ExperimentConfig(setting="type1", d=10, N=120, m_grid=(1, 2), reps=2)
    for name in ("a", "b"):
        rows, _ = ex.run_type1(cfg)
        ex.emit_report(rows, "csv", tmp_path / name, timings=False)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

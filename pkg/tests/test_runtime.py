import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from disttgm.aggregate import ThresholdConfig, debias
from disttgm.inference import DegenerateSampleError, PairVariance
from disttgm.runtime import (BadMagicError, DecodeError, LengthMismatchError, PipelineConfig, PipelineError,
                             ProtocolError, TruncatedPayloadError, UnsupportedVersionError, WorkerSummary,
                             codec_roundtrip, decode_summary, encode_summary, local_fit, master_aggregate,
                             partition, read_matrix, run_pipeline, worker_run, worker_seed, write_matrix)
from disttgm.runtime.codec import HEADER_SIZE, MessageTypeError, decode_matrix, encode_matrix
from disttgm.runtime.transport import collect
from disttgm.synth import GraphSpec, generate_precision, sample_model


def data(d=8, N=240, seed=0, model="nonparanormal"):
    truth = generate_precision(GraphSpec(d, "chain"))
    return sample_model(truth, model, N, seed)


def summary(d=3, pairs=((0, 1), (2, 2)), seed=0, worker_id=2):
    rng = np.random.default_rng(seed)
    return WorkerSummary(worker_id, 50, d, rng.standard_normal((d, d)),
                         tuple(PairVariance(j, k, float(rng.random()), worker_id, 50) for j, k in pairs), 0.125)


# --- partition -------------------------------------------------------------------

def test_partition_even():
    X = np.arange(24.0).reshape(12, 2)
    shards = partition(X, 3)
    assert [s.worker_id for s in shards] == [0, 1, 2]
    assert np.array_equal(np.vstack([s.X for s in shards]), X)


def test_partition_uneven_requires_truncate():
    X = np.zeros((13, 2))
    with pytest.raises(ValueError, match="divisible"):
        partition(X, 3)
    assert sum(s.n for s in partition(X, 3, truncate=True)) == 12


def test_partition_too_small():
    with pytest.raises(DegenerateSampleError):
        partition(np.zeros((4, 2)), 2)


def test_worker_seed_independent_of_order():
    a = [worker_seed(7, l).generate_state(2).tolist() for l in range(4)]
    b = [worker_seed(7, l).generate_state(2).tolist() for l in reversed(range(4))][::-1]
    assert a == b
    assert len({tuple(x) for x in a}) == 4


# --- codec -----------------------------------------------------------------------

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(0, 65535), st.integers(1, 10_000), st.data())
def test_summary_roundtrip(d, worker_id, n, draw):
    theta = np.array(draw.draw(st.lists(finite, min_size=d * d, max_size=d * d))).reshape(d, d)
    pairs = draw.draw(st.lists(st.tuples(st.integers(0, d - 1), st.integers(0, d - 1), finite), max_size=5))
    s = WorkerSummary(worker_id, n, d, theta, tuple(PairVariance(j, k, v, worker_id, n) for j, k, v in pairs),
                      draw.draw(finite))
    assert codec_roundtrip(s).identical(s)


def test_wire_indices_are_one_based():
    buf = encode_summary(summary(pairs=((0, 1),)))
    j, k = struct.unpack_from("<II", buf, HEADER_SIZE + 8 * 9)
    assert (j, k) == (1, 2)


def test_every_truncation_fails():
    buf = encode_summary(summary())
    for cut in range(len(buf)):
        with pytest.raises(DecodeError):
            decode_summary(buf[:cut])
    with pytest.raises(TruncatedPayloadError):
        decode_summary(buf[:-1])


def test_bad_magic():
    buf = bytearray(encode_summary(summary()))
    buf[0:4] = b"XXXX"
    with pytest.raises(BadMagicError):
        decode_summary(bytes(buf))


def test_bad_version():
    buf = bytearray(encode_summary(summary()))
    buf[4] = 9
    with pytest.raises(UnsupportedVersionError):
        decode_summary(bytes(buf))


def test_length_mismatch():
    buf = encode_summary(summary())
    with pytest.raises(LengthMismatchError):
        decode_summary(buf + b"\0")
    bad = bytearray(buf)
    struct.pack_into("<Q", bad, HEADER_SIZE - 8, len(buf) - HEADER_SIZE + 8)
    with pytest.raises(LengthMismatchError):
        decode_summary(bytes(bad))


def test_message_types_not_interchangeable():
    with pytest.raises(MessageTypeError):
        decode_summary(encode_matrix(np.eye(2)))
    with pytest.raises(MessageTypeError):
        decode_matrix(encode_summary(summary()))


def test_matrix_file_roundtrip(tmp_path):
    a = np.random.default_rng(1).standard_normal((7, 3))
    write_matrix(tmp_path / "a.dtgm", a)
    b = read_matrix(tmp_path / "a.dtgm")
    assert b.shape == (7, 3) and b.tobytes() == a.tobytes()


# --- pipeline --------------------------------------------------------------------

def test_deterministic():
    X = data()
    cfg = PipelineConfig(m=4, infer_pairs=((0, 1), (2, 5)))
    assert run_pipeline(X, cfg).identical(run_pipeline(X, cfg))


@pytest.mark.parametrize("model", ["transelliptical", "gaussian"])
def test_single_worker_reduces_to_centralized(model):
    X = data()
    cfg = PipelineConfig(m=1, model=model, threshold=ThresholdConfig("fixed", t=0.0))
    fit = local_fit(X, cfg)
    report = run_pipeline(X, cfg)
    assert report.theta_bar.tobytes() == fit.theta_tilde.tobytes()
    assert np.array_equal(fit.theta_tilde, debias(fit.estimate.theta_hat, fit.sigma_hat))


@pytest.mark.parametrize("transport", ["inprocess", "socket"])
@pytest.mark.parametrize("concurrent", [True, False])
def test_transports_agree(transport, concurrent):
    X = data(N=320)
    base = run_pipeline(X, PipelineConfig(m=4, infer_pairs=((0, 1),), concurrent=False))
    other = run_pipeline(X, PipelineConfig(m=4, infer_pairs=((0, 1),), transport=transport, concurrent=concurrent))
    assert base.identical(other)
    assert other.messages == 4


def test_arrival_order_irrelevant():
    X = data()
    cfg = PipelineConfig(m=4, infer_pairs=((1, 2),))
    sums = [worker_run(s, cfg) for s in partition(X, 4)]
    a = master_aggregate(sums, cfg)
    b = master_aggregate(sums[::-1], cfg)
    assert a.identical(b)


def test_duplicate_worker_rejected():
    X = data()
    cfg = PipelineConfig(m=2)
    s = worker_run(partition(X, 2)[0], cfg)
    with pytest.raises(ProtocolError, match="duplicate"):
        master_aggregate([s, s], cfg)


def test_missing_worker_rejected():
    X = data()
    cfg = PipelineConfig(m=2)
    with pytest.raises(ProtocolError):
        master_aggregate([worker_run(partition(X, 2)[0], cfg)], cfg)


@pytest.mark.parametrize("transport", ["inprocess", "socket"])
def test_worker_failure_surfaces_with_id(monkeypatch, transport):
    import disttgm.runtime.pipeline as pl
    real = pl.latent_correlation

    def flaky(X, fast=True):
        if np.all(X[:, 3] == 1.0):
            raise FloatingPointError("boom")
        return real(X, fast)

    monkeypatch.setattr(pl, "latent_correlation", flaky)
    X = data(N=40)
    X[10:20, 3] = 1.0  # marks worker 1
    with pytest.raises(PipelineError) as info:
        run_pipeline(X, PipelineConfig(m=4, transport=transport))
    assert [f.worker_id for f in info.value.failures] == [1]
    assert isinstance(info.value.failures[0].cause, FloatingPointError)


def test_collect_counts_messages():
    shards = partition(data(), 3)
    cfg = PipelineConfig(m=3)
    for transport in ("inprocess", "socket"):
        got, failures, count = collect(shards, lambda sh: worker_run(sh, cfg), transport)
        assert count == 3 and not failures
        assert sorted(s.worker_id for s in got) == [0, 1, 2]


def test_gaussian_identity_debiased_close():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((5000, 10))
    report = run_pipeline(X, PipelineConfig(m=1, model="gaussian", threshold=ThresholdConfig("fixed", t=0.0)))
    assert np.max(np.abs(report.theta_bar - np.eye(10))) <= 0.1


def test_tests_reported_per_pair():
    X = data(N=400)
    report = run_pipeline(X, PipelineConfig(m=2, infer_pairs=((0, 1), (0, 7))))
    first, second = report.tests
    assert (first.j, first.k) == (0, 1) and first.reject  # chain edge
    assert second.ci_low <= second.theta_bar_jk <= second.ci_high

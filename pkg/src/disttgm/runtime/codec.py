"""Little-endian binary framing for worker summaries and data matrices.

Header (28 bytes)::

    magic "DTGM" | version u8 | msg_type u8 | worker_id u16 | d u32 | n u32 |
    pair_count u32 | payload_len u64

A SUMMARY payload is the d*d float64 debiased estimate (row-major), then
``pair_count`` records of ``(j u32, k u32, sigma2 f64)`` with 1-based indices,
then ``lambda_used`` as float64. A MATRIX payload is ``n`` rows of ``d``
float64 values.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ..inference import PairVariance

MAGIC = b"DTGM"
VERSION = 1
MSG_SUMMARY = 1
MSG_MATRIX = 2

HEADER = struct.Struct("<4sBBHIIIQ")
HEADER_SIZE = HEADER.size
_PAIR = np.dtype([("j", "<u4"), ("k", "<u4"), ("sigma2", "<f8")])


class DecodeError(ValueError):
    pass


class BadMagicError(DecodeError):
    pass


class UnsupportedVersionError(DecodeError):
    pass


class LengthMismatchError(DecodeError):
    pass


class TruncatedPayloadError(DecodeError):
    pass


class MessageTypeError(DecodeError):
    pass


@dataclass(frozen=True)
class WorkerSummary:
    worker_id: int
    n: int
    d: int
    theta_tilde: np.ndarray = field(repr=False)
    variances: tuple = ()
    lambda_used: float = 0.0

    def __post_init__(self):
        if self.theta_tilde.shape != (self.d, self.d):
            raise ValueError(f"theta_tilde shape {self.theta_tilde.shape} does not match d={self.d}")

    def identical(self, other: "WorkerSummary") -> bool:
        """Bitwise equality of every field, floats included."""
        return (
            self.worker_id == other.worker_id
            and self.n == other.n
            and self.d == other.d
            and self.theta_tilde.tobytes() == other.theta_tilde.tobytes()
            and len(self.variances) == len(other.variances)
            and all(a.j == b.j and a.k == b.k and struct.pack("<d", a.sigma2) == struct.pack("<d", b.sigma2)
                    for a, b in zip(self.variances, other.variances))
            and struct.pack("<d", self.lambda_used) == struct.pack("<d", other.lambda_used)
        )


def _header(msg_type: int, worker_id: int, d: int, n: int, pair_count: int, payload_len: int) -> bytes:
    return HEADER.pack(MAGIC, VERSION, msg_type, worker_id, d, n, pair_count, payload_len)


def encode_summary(summary: WorkerSummary) -> bytes:
    theta = np.ascontiguousarray(summary.theta_tilde, dtype="<f8")
    pairs = np.empty(len(summary.variances), dtype=_PAIR)
    for i, v in enumerate(summary.variances):
        pairs[i] = (v.j + 1, v.k + 1, v.sigma2)
    payload = theta.tobytes() + pairs.tobytes() + struct.pack("<d", summary.lambda_used)
    head = _header(MSG_SUMMARY, summary.worker_id, summary.d, summary.n, len(pairs), len(payload))
    return head + payload


def encode_matrix(a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a, dtype="<f8")
    if a.ndim != 2:
        raise ValueError("only 2-D matrices can be encoded")
    rows, cols = a.shape
    payload = a.tobytes()
    return _header(MSG_MATRIX, 0, cols, rows, 0, len(payload)) + payload


def decode_header(buf: bytes) -> tuple[int, int, int, int, int, int]:
    """Validate a header; returns ``(msg_type, worker_id, d, n, pair_count, payload_len)``."""
    if len(buf) < HEADER_SIZE:
        raise TruncatedPayloadError(f"header needs {HEADER_SIZE} bytes, got {len(buf)}")
    magic, version, msg_type, worker_id, d, n, pair_count, payload_len = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    return msg_type, worker_id, d, n, pair_count, payload_len


def _payload(buf: bytes, payload_len: int, expected: int) -> memoryview:
    if payload_len != expected:
        raise LengthMismatchError(f"declared payload length {payload_len} != expected {expected}")
    body = memoryview(buf)[HEADER_SIZE:]
    if len(body) < payload_len:
        raise TruncatedPayloadError(f"payload truncated: {len(body)} of {payload_len} bytes")
    if len(body) > payload_len:
        raise LengthMismatchError(f"{len(body) - payload_len} trailing bytes after payload")
    return body


def decode_summary(buf: bytes) -> WorkerSummary:
    msg_type, worker_id, d, n, pair_count, payload_len = decode_header(buf)
    if msg_type != MSG_SUMMARY:
        raise MessageTypeError(f"expected SUMMARY message, got type {msg_type}")
    expected = 8 * d * d + _PAIR.itemsize * pair_count + 8
    body = _payload(buf, payload_len, expected)
    theta = np.frombuffer(body, dtype="<f8", count=d * d).astype(np.float64).reshape(d, d)
    pairs = np.frombuffer(body, dtype=_PAIR, count=pair_count, offset=8 * d * d)
    (lam,) = struct.unpack_from("<d", body, 8 * d * d + _PAIR.itemsize * pair_count)
    variances = tuple(PairVariance(int(p["j"]) - 1, int(p["k"]) - 1, float(p["sigma2"]), worker_id, n)
                      for p in pairs)
    return WorkerSummary(worker_id, n, d, theta, variances, float(lam))


def decode_matrix(buf: bytes) -> np.ndarray:
    msg_type, _, d, n, _, payload_len = decode_header(buf)
    if msg_type != MSG_MATRIX:
        raise MessageTypeError(f"expected MATRIX message, got type {msg_type}")
    body = _payload(buf, payload_len, 8 * d * n)
    return np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(n, d)


def codec_roundtrip(summary: WorkerSummary) -> WorkerSummary:
    return decode_summary(encode_summary(summary))


def write_matrix(path, a: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_matrix(a))


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_matrix(fh.read())

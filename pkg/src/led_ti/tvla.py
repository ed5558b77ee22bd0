"""Fixed-vs-random Welch t-test and the LEDT trace-set file format.

File layout (all integers little-endian)::

    offset  size  field
    0       4     magic b"LEDT"
    4       4     version (uint32, = 1)
    8       4     n_traces (uint32, > 0)
    12      4     n_samples (uint32, > 0)
    16      1     model tag (0 = Hamming distance, 1 = Hamming weight)
    17      3     reserved, zero
    20      8     noise sigma (float64, >= 0)
    28      8     base seed (uint64)
    36      ...   n_traces records: class byte (0 fixed, 1 random)
                  followed by n_samples float32 samples
"""

from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .power import ClassLabel, LeakageModel

MAGIC = b"LEDT"
VERSION = 1
HEADER = struct.Struct("<4sIIIB3xdQ")
DEFAULT_THRESHOLD = 4.5


class TraceFormatError(ValueError):
    """Malformed trace-set file; ``field`` names the offending header field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class TvlaError(ValueError):
    """Trace set unusable for a two-class test."""


@dataclass
class TraceSet:
    labels: np.ndarray  # (n,) uint8, ClassLabel values
    samples: np.ndarray  # (n, n_samples) float32
    model: LeakageModel = LeakageModel.HAMMING_DISTANCE
    sigma: float = 0.0
    base_seed: int = 0

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 2 or self.samples.shape[0] != self.labels.shape[0]:
            raise ValueError("samples must be (n_traces, n_samples) matching labels")

    @property
    def n_traces(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    def class_counts(self) -> tuple[int, int]:
        n_random = int(np.count_nonzero(self.labels == ClassLabel.RANDOM))
        return self.n_traces - n_random, n_random

    def __eq__(self, other):
        if not isinstance(other, TraceSet):
            return NotImplemented
        return (
            np.array_equal(self.labels, other.labels)
            and np.array_equal(self.samples, other.samples)
            and self.model == other.model
            and self.sigma == other.sigma
            and self.base_seed == other.base_seed
        )


def encode_header(n_traces: int, n_samples: int, model, sigma: float, base_seed: int) -> bytes:
    return HEADER.pack(MAGIC, VERSION, n_traces, n_samples, int(model), float(sigma), base_seed)


def encode_records(labels: np.ndarray, samples: np.ndarray) -> bytes:
    n, ns = samples.shape
    rec = np.empty((n, 1 + 4 * ns), dtype=np.uint8)
    rec[:, 0] = labels
    rec[:, 1:] = np.ascontiguousarray(samples, dtype="<f4").view(np.uint8).reshape(n, 4 * ns)
    return rec.tobytes()


def write_trace_set(ts: TraceSet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_header(ts.n_traces, ts.n_samples, ts.model, ts.sigma, ts.base_seed))
        fh.write(encode_records(ts.labels, ts.samples))


def write_trace_stream(path, chunks, n_traces: int, n_samples: int, model, sigma: float, base_seed: int) -> tuple[int, int]:
    """Write (labels, samples) chunks without holding the whole set in memory.

    Returns the (fixed, random) class counts.
    """
    counts = [0, 0]
    written = 0
    with open(path, "wb") as fh:
        fh.write(encode_header(n_traces, n_samples, model, sigma, base_seed))
        for labels, samples in chunks:
            if samples.shape[1] != n_samples:
                raise ValueError("chunk sample count differs from header")
            fh.write(encode_records(labels, samples))
            written += len(labels)
            counts[1] += int(np.count_nonzero(labels == ClassLabel.RANDOM))
    if written != n_traces:
        raise ValueError(f"wrote {written} traces, header says {n_traces}")
    counts[0] = written - counts[1]
    return counts[0], counts[1]


def decode_header(raw: bytes):
    if len(raw) < HEADER.size:
        raise TraceFormatError("header", f"file shorter than the {HEADER.size}-byte header")
    magic, version, n_traces, n_samples, model, sigma, seed = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise TraceFormatError("magic", f"expected {MAGIC!r}, found {magic!r}")
    if version != VERSION:
        raise TraceFormatError("version", f"unsupported version {version}")
    if n_traces == 0:
        raise TraceFormatError("n_traces", "must be positive")
    if n_samples == 0:
        raise TraceFormatError("n_samples", "must be positive")
    if model not in (0, 1):
        raise TraceFormatError("model", f"unknown model tag {model}")
    if not (sigma >= 0 and math.isfinite(sigma)):
        raise TraceFormatError("sigma", f"invalid noise sigma {sigma}")
    return n_traces, n_samples, LeakageModel(model), sigma, seed


def open_trace_records(path):
    """Validate a trace-set file and memory-map its records.

    Returns (header, records) where header is (n_traces, n_samples, model,
    sigma, base_seed) and records is a read-only (n_traces, 1 + 4*n_samples)
    uint8 view.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(HEADER.size)
    header = decode_header(head)
    n_traces, n_samples = header[0], header[1]
    expected = HEADER.size + n_traces * (1 + 4 * n_samples)
    size = path.stat().st_size
    if size != expected:
        raise TraceFormatError("length", f"file holds {size} bytes, header implies {expected}")
    records = np.memmap(path, dtype=np.uint8, mode="r", offset=HEADER.size, shape=(n_traces, 1 + 4 * n_samples))
    return header, records


def _decode_records(rec):
    labels = np.array(rec[:, 0])
    if np.any(labels > 1):
        bad = int(np.argmax(labels > 1))
        raise TraceFormatError("class_label", f"trace {bad} has label {labels[bad]}")
    samples = np.ascontiguousarray(rec[:, 1:]).view("<f4").astype(np.float32)
    return labels, samples


def iter_trace_chunks(path, chunk: int = 2000):
    """Yield (labels, samples) from a trace-set file without loading it whole."""
    _, records = open_trace_records(path)
    for start in range(0, records.shape[0], chunk):
        yield _decode_records(records[start : start + chunk])


def read_trace_set(path) -> TraceSet:
    (n_traces, n_samples, model, sigma, seed), records = open_trace_records(path)
    labels, samples = _decode_records(records)
    del records
    return TraceSet(labels, samples, model, sigma, seed)


def tvla_file(path, threshold: float = DEFAULT_THRESHOLD, chunk: int = 2000) -> TvlaReport:
    """Streaming fixed-vs-random test over a trace-set file."""
    (n_traces, n_samples, *_), _ = open_trace_records(path)
    acc = WelchAccumulator(n_samples)
    for labels, samples in iter_trace_chunks(path, chunk):
        acc.update(labels, samples)
    if acc.n[0] == 0 or acc.n[1] == 0:
        raise TvlaError(f"trace set needs both classes (fixed={acc.n[0]}, random={acc.n[1]})")
    return report_from_accumulator(acc, threshold)


# ---------------------------------------------------------------------------
# Statistics


def welch_t(fixed, random):
    """Welch's t between two classes along axis 0.

    Accepts 1-D series or (traces, samples) arrays.  Degenerate samples where
    both classes have zero variance give 0 if the means agree and +/-inf
    otherwise (see `tvla_fixed_vs_random` for the warning flag).
    """
    f = np.asarray(fixed, dtype=np.float64)
    r = np.asarray(random, dtype=np.float64)
    if f.shape[0] < 2 or r.shape[0] < 2:
        raise TvlaError("each class needs at least two traces")
    return _t_from_moments(f.mean(axis=0), f.var(axis=0, ddof=1), f.shape[0], r.mean(axis=0), r.var(axis=0, ddof=1), r.shape[0])


def _t_from_moments(mf, vf, nf, mr, vr, nr):
    diff = np.asarray(mf - mr, dtype=np.float64)
    denom = np.sqrt(np.asarray(vf / nf + vr / nr, dtype=np.float64))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = diff / denom
    flat = denom == 0
    t = np.where(flat & (diff == 0), 0.0, t)
    t = np.where(flat & (diff != 0), np.copysign(np.inf, diff), t)
    return float(t) if t.ndim == 0 else t


class WelchAccumulator:
    """One-pass per-class mean/variance (Chan et al. batch merge) in float64."""

    def __init__(self, n_samples: int):
        self.n = np.zeros(2, dtype=np.int64)
        self.mean = np.zeros((2, n_samples))
        self.m2 = np.zeros((2, n_samples))

    def update(self, labels, samples) -> None:
        labels = np.asarray(labels)
        samples = np.asarray(samples, dtype=np.float64)
        for cls in (ClassLabel.FIXED, ClassLabel.RANDOM):
            x = samples[labels == cls]
            nb = x.shape[0]
            if nb == 0:
                continue
            mb = x.mean(axis=0)
            m2b = ((x - mb) ** 2).sum(axis=0)
            na = self.n[cls]
            n = na + nb
            delta = mb - self.mean[cls]
            self.mean[cls] += delta * (nb / n)
            self.m2[cls] += m2b + delta**2 * (na * nb / n)
            self.n[cls] = n

    def variance(self, cls) -> np.ndarray:
        return self.m2[cls] / (self.n[cls] - 1)

    def t_values(self) -> np.ndarray:
        nf, nr = self.n
        if nf < 2 or nr < 2:
            raise TvlaError(f"need >= 2 traces per class, have fixed={nf} random={nr}")
        return _t_from_moments(self.mean[0], self.variance(0), nf, self.mean[1], self.variance(1), nr)


@dataclass
class TvlaReport:
    t_values: np.ndarray
    threshold: float
    n_fixed: int
    n_random: int
    degenerate_samples: int = 0
    max_abs_t: float = field(init=False)
    verdict: str = field(init=False)

    def __post_init__(self):
        self.max_abs_t = float(np.max(np.abs(self.t_values)))
        self.verdict = "Leaks" if self.max_abs_t >= self.threshold else "NoEvidence"

    @property
    def leaks(self) -> bool:
        return self.verdict == "Leaks"

    def to_json(self) -> str:
        def num(v):
            return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")

        return json.dumps(
            {
                "max_abs_t": num(self.max_abs_t),
                "threshold": self.threshold,
                "verdict": self.verdict,
                "n_fixed": self.n_fixed,
                "n_random": self.n_random,
                "degenerate_samples": self.degenerate_samples,
                "t_values": [num(float(v)) for v in self.t_values],
            },
            indent=1,
        )

    def to_csv(self) -> str:
        return "sample_index,t\n" + "".join(f"{i},{float(v)!r}\n" for i, v in enumerate(self.t_values))


def report_from_accumulator(acc: WelchAccumulator, threshold: float = DEFAULT_THRESHOLD) -> TvlaReport:
    t = acc.t_values()
    return _report(t, threshold, int(acc.n[0]), int(acc.n[1]))


def _report(t, threshold, nf, nr) -> TvlaReport:
    degenerate = int(np.count_nonzero(np.isinf(t)))
    if degenerate:
        warnings.warn(f"{degenerate} samples have constant but unequal classes; t set to +/-inf")
    return TvlaReport(np.asarray(t), threshold, nf, nr, degenerate)


def tvla_fixed_vs_random(ts: TraceSet, threshold: float = DEFAULT_THRESHOLD) -> TvlaReport:
    nf, nr = ts.class_counts()
    if nf == 0 or nr == 0:
        raise TvlaError(f"trace set needs both classes (fixed={nf}, random={nr})")
    f = ts.samples[ts.labels == ClassLabel.FIXED]
    r = ts.samples[ts.labels == ClassLabel.RANDOM]
    return _report(np.atleast_1d(welch_t(f, r)), threshold, nf, nr)

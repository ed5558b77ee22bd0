"""Power traces synthesized from register activity.

One sample per clock cycle: the sum over every register updated in that
cycle of its Hamming distance (old -> new) or the Hamming weight of its new
value, plus Gaussian noise.

Per-trace randomness comes from a SplitMix64 stream seeded with
``derive_seed(base_seed, trace_index)`` and is consumed in this order:
class coin, random plaintext (drawn for both classes), datapath masks in
cycle order, then one normal per sample in cycle order.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .datapath import Datapath, TransitionLog
from .rng import MASK64, SplitMix64

POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)


class LeakageModel(enum.IntEnum):
    HAMMING_DISTANCE = 0
    HAMMING_WEIGHT = 1


class ClassLabel(enum.IntEnum):
    FIXED = 0
    RANDOM = 1


DESIGNS = {"protected": True, "led-ti": True, "unprotected": False, "led": False}

DEFAULT_SIGMA = 1.0
DEFAULT_SEED = 0x1ED_7E57
# all-zero fixed plaintext, arbitrary fixed key
DEFAULT_FIXED_PLAINTEXT = 0x0000000000000000
DEFAULT_KEY = 0x0123456789ABCDEFFEDCBA9876543210


@dataclass(frozen=True)
class LeakageConfig:
    model: LeakageModel = LeakageModel.HAMMING_DISTANCE
    noise_sigma: float = DEFAULT_SIGMA
    base_seed: int = DEFAULT_SEED

    def __post_init__(self):
        if not self.noise_sigma >= 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not 0 <= self.base_seed <= MASK64:
            raise ValueError("base_seed must fit in 64 bits")
        object.__setattr__(self, "model", LeakageModel(self.model))


@dataclass
class Trace:
    samples: np.ndarray
    class_label: ClassLabel


def hamming_weight(x: int) -> int:
    return bin(x).count("1")


def hamming_distance(a: int, b: int, a_width: Optional[int] = None, b_width: Optional[int] = None) -> int:
    """popcount(a ^ b); when widths are given they must agree and bound the values."""
    if a_width is not None and b_width is not None and a_width != b_width:
        raise ValueError(f"width mismatch: {a_width} vs {b_width}")
    width = a_width if a_width is not None else b_width
    if a < 0 or b < 0:
        raise ValueError("bit strings must be non-negative")
    if width is not None and (a >> width or b >> width):
        raise ValueError(f"value wider than {width} bits")
    return hamming_weight(a ^ b)


def _entry_leakage(transitions, model: LeakageModel) -> float:
    if model == LeakageModel.HAMMING_DISTANCE:
        return float(sum(hamming_distance(old, new, w, w) for _, w, old, new in transitions))
    return float(sum(hamming_weight(new) for _, _, _, new in transitions))


def synthesize_trace(
    log: TransitionLog,
    cfg: LeakageConfig,
    trace_index: int = 0,
    rng: Optional[SplitMix64] = None,
    class_label: ClassLabel = ClassLabel.FIXED,
) -> Trace:
    """Turn a transition log into one trace.

    Noise comes from `rng` if given, else from a fresh stream for
    `trace_index` under ``cfg.base_seed``.
    """
    clean = np.array([_entry_leakage(e.transitions, cfg.model) for e in log.entries])
    if cfg.noise_sigma > 0:
        if rng is None:
            rng = SplitMix64.for_traces(cfg.base_seed, [trace_index])
        clean = clean + cfg.noise_sigma * rng.normal(clean.size)[0]
    return Trace(clean, class_label)


def batch_leakage(dp: Datapath, model: LeakageModel) -> np.ndarray:
    """Run a loaded batch datapath to completion; noiseless leakage (batch, cycles)."""
    rows = []
    hd = model == LeakageModel.HAMMING_DISTANCE
    while not dp.finished:
        ch = dp.advance()
        total = np.zeros(dp.batch, dtype=np.int64)
        for g in ch.groups:
            if hd:
                total += POPCOUNT[g.old ^ g.new].sum(axis=1)
            else:
                total += (POPCOUNT[g.new] * (g.old != g.new)).sum(axis=1)
        if hd:
            total += sum(bin(old ^ new).count("1") for _, _, old, new in ch.control)
        else:
            total += sum(bin(new).count("1") for _, _, _, new in ch.control)
        rows.append(total)
    return np.stack(rows, axis=1).astype(np.float64)


def simulate_batch(
    protected: bool,
    indices: np.ndarray,
    fixed_plaintext: int,
    key: int,
    cfg: LeakageConfig,
    decomposition=None,
    split_round_constant: bool = True,
):
    """Simulate traces `indices` of a trace set.

    Returns (labels, plaintexts, ciphertexts, samples) with samples as a
    (len(indices), cycles) float64 array.
    """
    rng = SplitMix64.for_traces(cfg.base_seed, indices)
    labels = rng.bit()
    random_pts = rng.next_u64()
    pts = np.where(labels == ClassLabel.RANDOM, random_pts, np.uint64(fixed_plaintext))
    dp = Datapath(
        protected=protected,
        batch=len(indices),
        decomposition=decomposition,
        split_round_constant=split_round_constant,
    )
    dp.load_inputs(pts, key, rng if protected else None)
    samples = batch_leakage(dp, cfg.model)
    if cfg.noise_sigma > 0:
        samples += cfg.noise_sigma * rng.normal(samples.shape[1])
    return labels, pts, dp.ciphertexts(), samples


def iter_trace_batches(
    design: str,
    n_traces: int,
    fixed_plaintext: int = DEFAULT_FIXED_PLAINTEXT,
    key: int = DEFAULT_KEY,
    cfg: LeakageConfig = LeakageConfig(),
    batch_size: int = 2000,
    **kwargs,
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (labels, samples) chunks in trace order.

    Output does not depend on `batch_size`: every trace has its own stream.
    """
    if design not in DESIGNS:
        raise ValueError(f"unknown design {design!r}; choose from {sorted(DESIGNS)}")
    if n_traces < 2:
        raise ValueError(f"n_traces must be >= 2, got {n_traces}")
    for start in range(0, n_traces, batch_size):
        idx = np.arange(start, min(start + batch_size, n_traces), dtype=np.uint64)
        labels, _, _, samples = simulate_batch(DESIGNS[design], idx, fixed_plaintext, key, cfg, **kwargs)
        yield labels, samples


def generate_trace_set(
    design: str,
    n_traces: int,
    fixed_plaintext: int = DEFAULT_FIXED_PLAINTEXT,
    key: int = DEFAULT_KEY,
    cfg: LeakageConfig = LeakageConfig(),
    batch_size: int = 2000,
    **kwargs,
):
    from .tvla import TraceSet

    chunks = list(iter_trace_batches(design, n_traces, fixed_plaintext, key, cfg, batch_size, **kwargs))
    labels = np.concatenate([c[0] for c in chunks])
    samples = np.concatenate([c[1] for c in chunks]).astype(np.float32)
    return TraceSet(labels, samples, cfg.model, cfg.noise_sigma, cfg.base_seed)

import itertools

import numpy as np
import pytest

from led_ti.datapath import CycleEntry, Datapath, FsmState, TransitionLog, run_protected, run_unprotected
from led_ti.power import (
    ClassLabel,
    LeakageConfig,
    LeakageModel,
    batch_leakage,
    generate_trace_set,
    hamming_distance,
    hamming_weight,
    iter_trace_batches,
    simulate_batch,
    synthesize_trace,
)
from led_ti.rng import SplitMix64

NOISELESS_HD = LeakageConfig(noise_sigma=0.0)
NOISELESS_HW = LeakageConfig(model=LeakageModel.HAMMING_WEIGHT, noise_sigma=0.0)


def _log(*cycles):
    log = TransitionLog()
    for i, trans in enumerate(cycles):
        log.entries.append(CycleEntry(i, FsmState.ADDKEY, list(trans)))
    return log


def test_hamming_distance_examples():
    assert hamming_distance(0x7, 0x7) == 0
    assert hamming_distance(0x0, 0xF) == 4
    for a, b in itertools.product(range(16), repeat=2):
        assert hamming_distance(a, b, 4, 4) == hamming_distance(b, a, 4, 4) == bin(a ^ b).count("1")


def test_hamming_distance_width_checks():
    with pytest.raises(ValueError):
        hamming_distance(1, 2, 4, 6)
    with pytest.raises(ValueError):
        hamming_distance(0x1F, 0, 4, 4)


def test_noiseless_samples():
    log = _log([], [("d00.0", 4, 0x0, 0xF)], [("d00.0", 4, 0x3, 0x5), ("k1_00.0", 4, 0x0, 0x1)])
    assert synthesize_trace(log, NOISELESS_HD).samples.tolist() == [0.0, 4.0, 3.0]
    assert synthesize_trace(log, NOISELESS_HW).samples.tolist() == [0.0, 4.0, 3.0]


def test_hw_and_hd_agree_from_zero():
    rng = np.random.default_rng(1)
    trans = [("r", 4, 0, int(v)) for v in rng.integers(0, 16, 20)]
    log = _log(trans[:7], trans[7:])
    assert np.array_equal(synthesize_trace(log, NOISELESS_HD).samples, synthesize_trace(log, NOISELESS_HW).samples)


def test_synthesize_is_deterministic():
    _, log = run_unprotected(1, 2)
    cfg = LeakageConfig(noise_sigma=1.0, base_seed=42)
    a = synthesize_trace(log, cfg, trace_index=3).samples
    b = synthesize_trace(log, cfg, trace_index=3).samples
    c = synthesize_trace(log, cfg, trace_index=4).samples
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert len(a) == len(log)


def test_scalar_log_matches_batch_leakage():
    _, log = run_protected(0x1234, 0x5678, seed=9)
    scalar = synthesize_trace(log, NOISELESS_HD).samples
    dp = Datapath(protected=True)
    dp.load_inputs(0x1234, 0x5678, SplitMix64(9))
    batch = batch_leakage(dp, LeakageModel.HAMMING_DISTANCE)[0]
    assert np.array_equal(scalar, batch)


def test_scalar_hw_matches_batch_leakage():
    _, log = run_unprotected(0xFEED, 0xBEEF)
    scalar = synthesize_trace(log, NOISELESS_HW).samples
    dp = Datapath(protected=False)
    dp.load_inputs(0xFEED, 0xBEEF)
    assert np.array_equal(scalar, batch_leakage(dp, LeakageModel.HAMMING_WEIGHT)[0])


@pytest.mark.parametrize("protected", [True, False])
@pytest.mark.parametrize("model", list(LeakageModel))
def test_noiseless_samples_bounded(protected, model):
    cfg = LeakageConfig(model=model, noise_sigma=0.0)
    _, _, _, samples = simulate_batch(protected, np.arange(8, dtype=np.uint64), 0, 123, cfg)
    bound = Datapath(protected=protected).total_register_bits()
    assert samples.min() >= 0
    assert samples.max() <= bound
    assert np.array_equal(samples, np.round(samples))


def test_trace_set_shape_and_classes():
    n = 400
    ts = generate_trace_set("unprotected", n, cfg=LeakageConfig(base_seed=5))
    assert ts.samples.shape == (n, 3472)
    fixed, rnd = ts.class_counts()
    assert fixed + rnd == n
    assert abs(fixed - n / 2) <= 5 * np.sqrt(n) / 2


def test_fixed_class_uses_fixed_plaintext():
    labels, pts, cts, _ = simulate_batch(False, np.arange(64, dtype=np.uint64), 0xABCD, 0, NOISELESS_HD)
    assert np.all(pts[labels == ClassLabel.FIXED] == 0xABCD)
    assert len(set(pts[labels == ClassLabel.RANDOM].tolist())) == int((labels == ClassLabel.RANDOM).sum())


def test_batch_size_does_not_change_output():
    cfg = LeakageConfig(base_seed=77)
    a = np.concatenate([s for _, s in iter_trace_batches("led-ti", 10, cfg=cfg, batch_size=3)])
    b = np.concatenate([s for _, s in iter_trace_batches("led-ti", 10, cfg=cfg, batch_size=10)])
    assert np.array_equal(a, b)


def test_protected_traces_differ_for_same_plaintext():
    cfg = LeakageConfig(noise_sigma=0.0, base_seed=1)
    labels, pts, _, samples = simulate_batch(True, np.arange(40, dtype=np.uint64), 0, 0, cfg)
    fixed = samples[labels == ClassLabel.FIXED]
    assert len(fixed) >= 2
    assert not np.array_equal(fixed[0], fixed[1])


def test_unprotected_noiseless_fixed_traces_identical():
    labels, _, _, samples = simulate_batch(False, np.arange(40, dtype=np.uint64), 0, 0, NOISELESS_HD)
    fixed = samples[labels == ClassLabel.FIXED]
    assert np.all(fixed == fixed[0])


def test_errors():
    with pytest.raises(ValueError):
        list(iter_trace_batches("led", 1))
    with pytest.raises(ValueError):
        list(iter_trace_batches("aes", 10))
    with pytest.raises(ValueError):
        LeakageConfig(noise_sigma=-1)
    with pytest.raises(ValueError):
        LeakageConfig(base_seed=-1)


def test_hamming_weight():
    assert hamming_weight(0) == 0
    assert hamming_weight(0xF0F0) == 8

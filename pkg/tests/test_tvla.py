import json
import math
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from led_ti.power import LeakageModel
from led_ti.tvla import (
    HEADER,
    TraceFormatError,
    TraceSet,
    TvlaError,
    WelchAccumulator,
    encode_header,
    read_trace_set,
    tvla_file,
    tvla_fixed_vs_random,
    welch_t,
    write_trace_set,
)


def two_pass_t(f, r):
    """Textbook Welch t with explicit two-pass sample variances."""
    def mv(xs):
        m = sum(xs) / len(xs)
        return m, sum((x - m) ** 2 for x in xs) / (len(xs) - 1)

    mf, vf = mv(f)
    mr, vr = mv(r)
    return (mf - mr) / math.sqrt(vf / len(f) + vr / len(r))


def test_hand_example():
    t = welch_t([1, 1, 3, 3], [0, 0, 0, 0, 0, 0])
    assert t == pytest.approx(2 / math.sqrt(1 / 3), abs=1e-12)
    assert t == pytest.approx(3.4641, abs=1e-4)


def test_identical_classes_give_zero():
    assert welch_t([1, 2, 3, 4], [4, 3, 2, 1]) == 0.0


def test_degenerate_cases():
    assert welch_t([2, 2, 2], [2, 2]) == 0.0
    assert welch_t([3, 3, 3], [2, 2]) == math.inf
    assert welch_t([1, 1], [2, 2, 2]) == -math.inf
    with pytest.raises(TvlaError):
        welch_t([1], [1, 2])


small = st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=12)


@given(small, small)
def test_matches_two_pass_and_antisymmetric(f, r):
    try:
        want = two_pass_t(f, r)
    except ZeroDivisionError:
        return
    if abs(want) > 1e12:  # variances near rounding noise
        return
    got = welch_t(f, r)
    assert got == pytest.approx(want, rel=1e-9, abs=1e-9)
    assert welch_t(r, f) == pytest.approx(-got, rel=1e-12, abs=1e-12)


@given(
    st.lists(st.integers(-50, 50), min_size=3, max_size=10),
    st.lists(st.integers(-50, 50), min_size=3, max_size=10),
    st.integers(-1000, 1000),
    st.integers(1, 64),
)
def test_shift_and_scale_invariance(f, r, shift, scale):
    f, r = np.array(f, float), np.array(r, float)
    if f.var() == 0 and r.var() == 0:
        return
    t = welch_t(f, r)
    assert welch_t(f + shift, r + shift) == pytest.approx(t, rel=1e-9, abs=1e-9)
    assert welch_t(f * scale, r * scale) == pytest.approx(t, rel=1e-9, abs=1e-9)


def test_vector_form_matches_columns():
    rng = np.random.default_rng(3)
    f, r = rng.normal(size=(30, 5)), rng.normal(0.3, 2, size=(40, 5))
    t = welch_t(f, r)
    for j in range(5):
        assert t[j] == pytest.approx(two_pass_t(f[:, j].tolist(), r[:, j].tolist()), rel=1e-12)


def _exact_moments(v):
    m = math.fsum(v) / len(v)
    return m, math.fsum((v - m) ** 2) / (len(v) - 1)


def test_streaming_matches_two_pass_on_a_million_values():
    rng = np.random.default_rng(8)
    n = 1_000_000
    labels = rng.integers(0, 2, n).astype(np.uint8)
    # leakage-scale values: counts near 100, unit noise, small class offset
    x = 100.0 + rng.normal(size=(n, 1)) + 0.01 * labels[:, None]
    acc = WelchAccumulator(1)
    for start in range(0, n, 65_536):
        acc.update(labels[start : start + 65_536], x[start : start + 65_536])
    moments = []
    for cls in (0, 1):
        m, v = _exact_moments(x[labels == cls, 0])
        assert acc.mean[cls, 0] == pytest.approx(m, rel=1e-9)
        assert acc.variance(cls)[0] == pytest.approx(v, rel=1e-9)
        moments.append((m, v, int((labels == cls).sum())))
    (mf, vf, nf), (mr, vr, nr) = moments
    want = (mf - mr) / math.sqrt(vf / nf + vr / nr)
    assert acc.t_values()[0] == pytest.approx(want, rel=1e-9)


def _set(n=50, ns=7, seed=0, shift=0.0):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n).astype(np.uint8)
    samples = rng.normal(size=(n, ns)).astype(np.float32) + shift * labels[:, None]
    return TraceSet(labels, samples, LeakageModel.HAMMING_DISTANCE, 1.0, 99)


def test_null_set_no_evidence():
    ts = _set(n=20_000, ns=200, seed=2024)
    rep = tvla_fixed_vs_random(ts)
    assert rep.verdict == "NoEvidence"
    assert rep.max_abs_t < 4.5


def test_shifted_set_leaks():
    rep = tvla_fixed_vs_random(_set(n=2000, shift=1.0))
    assert rep.leaks and rep.max_abs_t >= 4.5


def test_report_verdict_boundary():
    ts = _set()
    rep = tvla_fixed_vs_random(ts, threshold=0.0)
    assert rep.verdict == "Leaks"  # max|t| >= threshold


def test_single_class_rejected(tmp_path):
    ts = _set()
    ts.labels[:] = 0
    with pytest.raises(TvlaError):
        tvla_fixed_vs_random(ts)
    p = tmp_path / "one.bin"
    write_trace_set(ts, p)
    with pytest.raises(TvlaError):
        tvla_file(p)


def test_round_trip(tmp_path):
    ts = _set()
    p, q = tmp_path / "a.bin", tmp_path / "b.bin"
    write_trace_set(ts, p)
    back = read_trace_set(p)
    assert back == ts
    write_trace_set(back, q)
    assert p.read_bytes() == q.read_bytes()
    assert len(p.read_bytes()) == HEADER.size + 50 * (1 + 4 * 7)


def test_file_header_layout(tmp_path):
    ts = _set(n=3, ns=2)
    p = tmp_path / "a.bin"
    write_trace_set(ts, p)
    raw = p.read_bytes()
    assert raw[:4] == b"LEDT"
    assert struct.unpack_from("<III", raw, 4) == (1, 3, 2)
    assert raw[36] in (0, 1)
    assert struct.unpack_from("<2f", raw, 37) == tuple(float(v) for v in ts.samples[0])


def test_streamed_report_matches_in_memory(tmp_path):
    ts = _set(n=500, ns=9, seed=4, shift=0.2)
    p = tmp_path / "s.bin"
    write_trace_set(ts, p)
    a = tvla_fixed_vs_random(ts)
    b = tvla_file(p, chunk=37)
    np.testing.assert_allclose(a.t_values, b.t_values, rtol=1e-9)
    assert (a.n_fixed, a.n_random) == (b.n_fixed, b.n_random)


def test_report_exports():
    rep = tvla_fixed_vs_random(_set())
    doc = json.loads(rep.to_json())
    assert set(doc) >= {"t_values", "max_abs_t", "verdict", "threshold", "n_fixed", "n_random"}
    assert len(doc["t_values"]) == 7
    lines = rep.to_csv().splitlines()
    assert lines[0] == "sample_index,t" and len(lines) == 8


def test_infinite_t_is_flagged():
    labels = np.array([0, 0, 1, 1], np.uint8)
    samples = np.array([[1.0, 0.0], [1.0, 1.0], [2.0, 0.0], [2.0, 1.0]], np.float32)
    with pytest.warns(UserWarning):
        rep = tvla_fixed_vs_random(TraceSet(labels, samples))
    assert rep.degenerate_samples == 1
    assert json.loads(rep.to_json())["max_abs_t"] == "inf"


def _corrupt(raw, offset, fmt, value):
    b = bytearray(raw)
    struct.pack_into(fmt, b, offset, value)
    return bytes(b)


@pytest.mark.parametrize(
    "field,mutate",
    [
        ("magic", lambda r: b"XEDT" + r[4:]),
        ("version", lambda r: _corrupt(r, 4, "<I", 2)),
        ("n_traces", lambda r: _corrupt(r, 8, "<I", 0)),
        ("n_samples", lambda r: _corrupt(r, 12, "<I", 0)),
        ("model", lambda r: _corrupt(r, 16, "<B", 7)),
        ("sigma", lambda r: _corrupt(r, 20, "<d", -1.0)),
        ("length", lambda r: r[:-3]),
        ("length", lambda r: _corrupt(r, 8, "<I", 51)),
        ("class_label", lambda r: r[:36] + b"\x05" + r[37:]),
        ("header", lambda r: r[:20]),
    ],
)
def test_malformed_files(tmp_path, field, mutate):
    p = tmp_path / "a.bin"
    write_trace_set(_set(), p)
    p.write_bytes(mutate(p.read_bytes()))
    with pytest.raises(TraceFormatError) as err:
        read_trace_set(p)
    assert err.value.field == field
    assert field in str(err.value)


def test_encode_header_size():
    assert len(encode_header(1, 1, 0, 0.0, 0)) == 36

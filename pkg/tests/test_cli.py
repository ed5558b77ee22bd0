import json
import struct

import numpy as np
import pytest

from led_ti import sharing
from led_ti.acceptance import CRITERIA, PROTECTED_TRACES, UNPROTECTED_TRACES
from led_ti.cli import main
from led_ti.power import LeakageModel
from led_ti.tvla import TraceSet, write_trace_set

PT, KEY = "0123456789abcdef", "0123456789abcdef0123456789abcdef"


def run(capsys, *argv):
    try:
        code = main(list(argv))
    except SystemExit as exc:  # argparse usage errors
        code = exc.code
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.mark.parametrize("impl", ["reference", "serial", "ti"])
def test_encrypt_vector(capsys, impl):
    code, out, _ = run(capsys, "encrypt", PT, KEY, "--impl", impl)
    assert code == 0
    assert out.splitlines()[0] == "d6b824587f014fc2"


def test_encrypt_impls_agree(capsys):
    outs = {run(capsys, "encrypt", "fedcba9876543210", "00112233445566778899aabbccddeeff", "--impl", i)[1] for i in ("reference", "serial", "ti")}
    assert len(outs) == 1


def test_encrypt_verbose_cycles(capsys):
    code, out, _ = run(capsys, "encrypt", PT, KEY, "--impl", "ti", "--verbose", "--seed", "5")
    assert code == 0
    assert out.splitlines() == ["d6b824587f014fc2", "cycles: 5040"]


@pytest.mark.parametrize(
    "args,field",
    [
        ((PT, KEY[:-1]), "key"),
        ((PT + "0", KEY), "plaintext"),
        (("zz23456789abcdef", KEY), "plaintext"),
        ((PT, "g" * 32), "key"),
    ],
)
def test_encrypt_bad_hex(capsys, args, field):
    code, _, err = run(capsys, "encrypt", *args)
    assert code == 2
    assert field in err


def test_verify_ti_shipped(capsys):
    code, out, _ = run(capsys, "verify-ti")
    assert code == 0
    assert out.count("PASS") == 3


def test_verify_ti_flipped_entry(capsys, tmp_path):
    d = sharing.load_decomposition()
    p = tmp_path / "bad.txt"
    sharing.write_tables(d.with_entry(1, 40, d.tables()[1][40] ^ 0x4), p)
    code, out, _ = run(capsys, "verify-ti", "--tables", str(p))
    assert code == 1
    assert "FAIL" in out and "counterexample" in out


def test_verify_ti_missing_and_malformed(capsys, tmp_path):
    assert run(capsys, "verify-ti", "--tables", str(tmp_path / "nope.txt"))[0] == 2
    p = tmp_path / "junk.txt"
    p.write_text("G1\n1 2 3\n")
    assert run(capsys, "verify-ti", "--tables", str(p))[0] == 2


def test_simulate_csv(capsys, tmp_path):
    p = tmp_path / "log.csv"
    code, out, _ = run(capsys, "simulate", PT, KEY, "--design", "led", "--log", str(p))
    assert code == 0
    assert out.startswith("d6b824587f014fc2")
    assert p.read_text().splitlines()[0] == "cycle,state,reg_id,old_hex,new_hex"


def _header(path):
    return struct.unpack_from("<4sIII", path.read_bytes(), 0)


def test_gen_traces(capsys, tmp_path):
    a, b, c = tmp_path / "a.bin", tmp_path / "b.bin", tmp_path / "c.bin"
    code, out, _ = run(capsys, "gen-traces", "--design", "led", "--n", "100", "--out", str(a))
    assert code == 0
    assert "100 traces" in out and "fixed=" in out and "random=" in out
    assert _header(a) == (b"LEDT", 1, 100, 3472)
    run(capsys, "gen-traces", "--design", "led", "--n", "100", "--out", str(b))
    assert a.read_bytes() == b.read_bytes()
    run(capsys, "gen-traces", "--design", "led-ti", "--n", "100", "--out", str(c))
    assert _header(c)[3] > _header(a)[3]


def test_gen_traces_errors(capsys, tmp_path):
    assert run(capsys, "gen-traces", "--design", "led", "--n", "10", "--out", str(tmp_path / "no" / "x.bin"))[0] == 2
    assert run(capsys, "gen-traces", "--design", "led", "--n", "1", "--out", str(tmp_path / "x.bin"))[0] == 2
    assert run(capsys, "gen-traces", "--design", "aes", "--n", "10", "--out", str(tmp_path / "x.bin"))[0] == 2


def test_tvla_unprotected_recipe_leaks(capsys, tmp_path):
    f = tmp_path / "led.bin"
    assert run(capsys, "gen-traces", "--design", "led", "--n", str(UNPROTECTED_TRACES), "--out", str(f))[0] == 0
    rep = tmp_path / "r.json"
    code, out, _ = run(capsys, "tvla", "--in", str(f), "--threshold", "4.5", "--report", str(rep))
    assert code == 1
    assert "verdict = Leaks" in out
    doc = json.loads(rep.read_text())
    assert doc["verdict"] == "Leaks" and len(doc["t_values"]) == 3472
    assert (tmp_path / "r.csv").read_text().startswith("sample_index,t\n0,")


def test_tvla_protected_recipe_no_evidence(capsys, tmp_path):
    f = tmp_path / "ti.bin"
    assert run(capsys, "gen-traces", "--design", "led-ti", "--n", str(PROTECTED_TRACES), "--out", str(f))[0] == 0
    code, out, _ = run(capsys, "tvla", "--in", str(f), "--report", str(tmp_path / "r.json"), "--csv", str(tmp_path / "t.csv"))
    assert code == 0, out
    assert "verdict = NoEvidence" in out
    assert (tmp_path / "t.csv").exists()


def _null_set(path, labels):
    rng = np.random.default_rng(12345)
    samples = rng.normal(50, 1, size=(len(labels), 300))
    write_trace_set(TraceSet(labels, samples, LeakageModel.HAMMING_DISTANCE, 1.0, 12345), path)


def test_tvla_null_set(capsys, tmp_path):
    p = tmp_path / "null.bin"
    _null_set(p, np.arange(4000) % 2)
    assert run(capsys, "tvla", "--in", str(p))[0] == 0


def test_tvla_bad_inputs(capsys, tmp_path):
    p = tmp_path / "one.bin"
    _null_set(p, np.zeros(20))
    code, _, err = run(capsys, "tvla", "--in", str(p))
    assert code == 2 and "both classes" in err
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOPE" + p.read_bytes()[4:])
    code, _, err = run(capsys, "tvla", "--in", str(bad))
    assert code == 2 and "magic" in err
    assert run(capsys, "tvla", "--in", str(tmp_path / "absent.bin"))[0] == 2


def test_selftest_all_criteria(capsys):
    code, out, _ = run(capsys, "selftest")
    assert code == 0, out
    for cid, _, _ in CRITERIA:
        assert f"[PASS] {cid} " in out


def test_selftest_corrupted_tables(capsys, tmp_path, monkeypatch):
    text = sharing.shipped_tables_text()
    lines = text.splitlines()
    i = lines.index("F2") + 1
    row = lines[i].split()
    row[0] = format(int(row[0], 16) ^ 1, "X")
    lines[i] = " ".join(row)
    monkeypatch.setattr(sharing, "shipped_tables_text", lambda: "\n".join(lines) + "\n")
    code, out, _ = run(capsys, "selftest", "--only", "AC1,AC2")
    assert code == 1
    assert "[PASS] AC1" in out
    assert "[FAIL] AC2" in out


def test_selftest_tables_flag(capsys, tmp_path):
    p = tmp_path / "bad.txt"
    d = sharing.load_decomposition()
    sharing.write_tables(d.with_entry(0, 3, d.tables()[0][3] ^ 2), p)
    code, out, _ = run(capsys, "selftest", "--only", "AC2", "--tables", str(p))
    assert code == 1 and "[FAIL] AC2" in out
    assert run(capsys, "selftest", "--only", "AC99")[0] == 2

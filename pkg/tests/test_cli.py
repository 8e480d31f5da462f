import csv
import json

import numpy as np
import pytest

from wiener_aec.attention import AttentionParams, save_checkpoint
from wiener_aec.cli import main, read_wav, write_wav
from wiener_aec.simulate import measured_ser


def wav_payloads(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*.wav"))}


def simulate(tmp_path, name, *extra):
    out = tmp_path / name
    assert main(["simulate", "--out-dir", str(out), "--duration", "0.5", *extra]) == 0
    return out


def test_simulate_is_byte_deterministic(tmp_path, capsys):
    a = simulate(tmp_path, "a", "--seed", "1", "--n-scenarios", "10")
    b = simulate(tmp_path, "b", "--seed", "1", "--n-scenarios", "10")
    pa, pb = wav_payloads(a), wav_payloads(b)
    assert len(pa) == 40 and pa == pb
    assert (a / "scenario_000" / "meta.json").read_text() == (b / "scenario_000" / "meta.json").read_text()


def test_worker_count_does_not_change_output(tmp_path):
    a = simulate(tmp_path, "a", "--seed", "2", "--n-scenarios", "3")
    b = simulate(tmp_path, "b", "--seed", "2", "--n-scenarios", "3", "--workers", "2")
    assert wav_payloads(a) == wav_payloads(b)


def test_ser_sweep(tmp_path):
    out = simulate(tmp_path, "s", "--ser-db", "-10", "0", "10")
    for i, ser in enumerate((-10, 0, 10)):
        d = out / f"scenario_{i:03d}"
        _, near = read_wav(d / "near.wav")
        _, echo = read_wav(d / "echo.wav")
        assert abs(measured_ser(near, echo) - ser) <= 0.01
        assert json.loads((d / "meta.json").read_text())["scenario"]["ser_db"] == ser


def test_invalid_scenario_exit_2(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"out_dir": str(tmp_path / "o"), "scenarios": [
        {"room": [9.5, 4, 3], "mic_pos": [2, 2, 1.5], "src_pos": [2.5, 2, 1.5],
         "t60": 0.3, "ser_db": 0}]}))
    assert main(["simulate", "--config", str(cfg)]) == 2
    assert "room" in capsys.readouterr().err


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"out_dir": str(tmp_path / "o"), "n_scenarios": 3, "duration": 0.5,
                               "wav_format": "pcm16"}))
    assert main(["simulate", "--config", str(cfg), "--n-scenarios", "1"]) == 0
    assert len(list((tmp_path / "o").glob("scenario_*"))) == 1


def test_process_and_evaluate(tmp_path, capsys):
    out = simulate(tmp_path, "s", "--seed", "3", "--ser-db", "0")
    d = out / "scenario_000"
    args = ["process", "--far", str(d / "far.wav"), "--mic", str(d / "mic.wav"), "--m", "4"]
    assert main(args + ["--out", str(d / "enhanced.wav"), "--filter-dump", str(tmp_path / "f.npz")]) == 0
    with np.load(tmp_path / "f.npz") as z:
        assert z["filter_norm"].shape[1] == 257
    assert main(args + ["--out", str(tmp_path / "on1.wav"), "--attention", "on"]) == 0
    assert main(args + ["--out", str(tmp_path / "on2.wav"), "--attention", "on"]) == 0
    assert (tmp_path / "on1.wav").read_bytes() == (tmp_path / "on2.wav").read_bytes()

    assert main(["evaluate", "--root", str(out), "--out-dir", str(tmp_path / "rep")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "rep" / "report.csv")))
    assert rows[0]["condition"] == "DT"
    summary = json.loads((tmp_path / "rep" / "summary.json").read_text())
    assert "DT@0dB" in summary


def test_evaluate_mix_and_perfect(tmp_path):
    out = simulate(tmp_path, "s", "--seed", "4", "--ser-db", "0")
    assert main(["evaluate", "--root", str(out), "--processed", "mic.wav",
                 "--out-dir", str(tmp_path / "mix")]) == 0
    row = next(csv.DictReader(open(tmp_path / "mix" / "report.csv")))
    assert abs(float(row["sdr_db"])) < 0.05
    assert main(["evaluate", "--root", str(out), "--processed", "near.wav",
                 "--out-dir", str(tmp_path / "ref")]) == 0
    row = next(csv.DictReader(open(tmp_path / "ref" / "report.csv")))
    assert float(row["sdr_db"]) == 100


def test_evaluate_empty_and_missing(tmp_path, capsys):
    assert main(["evaluate", "--out-dir", str(tmp_path / "e")]) == 0
    assert (tmp_path / "e" / "report.csv").read_text().strip().startswith("name,condition")
    assert len((tmp_path / "e" / "report.csv").read_text().strip().splitlines()) == 1
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"items": [{"name": "x", "near": str(tmp_path / "nope.wav"),
                                          "mic": str(tmp_path / "nope.wav"),
                                          "out": str(tmp_path / "nope.wav")}]}))
    assert main(["evaluate", "--config", str(cfg), "--out-dir", str(tmp_path / "e2")]) == 2


def test_process_silent_far_end_passes_mic_through(tmp_path):
    rng = np.random.default_rng(0)
    mic = 0.1 * rng.standard_normal(8000)
    write_wav(tmp_path / "far.wav", np.zeros(8000))
    write_wav(tmp_path / "mic.wav", mic)
    assert main(["process", "--far", str(tmp_path / "far.wav"), "--mic", str(tmp_path / "mic.wav"),
                 "--out", str(tmp_path / "o.wav")]) == 0
    _, out = read_wav(tmp_path / "o.wav")
    np.testing.assert_allclose(out, mic.astype(np.float32), atol=1e-6)


def test_process_errors(tmp_path, capsys):
    write_wav(tmp_path / "a.wav", np.zeros(800))
    write_wav(tmp_path / "b.wav", np.zeros(800), rate=8000)
    write_wav(tmp_path / "c.wav", np.zeros(900))
    base = ["process", "--far", str(tmp_path / "a.wav"), "--out", str(tmp_path / "o.wav")]
    assert main(base + ["--mic", str(tmp_path / "b.wav")]) == 2
    assert main(base + ["--mic", str(tmp_path / "c.wav")]) == 2
    assert main(base + ["--mic", str(tmp_path / "missing.wav")]) == 2
    assert main(base + ["--mic", str(tmp_path / "a.wav"), "--m", "0"]) == 2
    save_checkpoint(AttentionParams.init(3), tmp_path / "p.npz")
    assert main(base + ["--mic", str(tmp_path / "a.wav"), "--attention", "on",
                        "--checkpoint", str(tmp_path / "p.npz")]) == 2


def test_gradcheck_default_and_reproducible(capsys):
    assert main(["gradcheck"]) == 0
    first = capsys.readouterr().out
    assert first.strip().endswith("PASS")
    assert main(["gradcheck"]) == 0
    assert capsys.readouterr().out == first


def test_gradcheck_corrupt_checkpoint(tmp_path, capsys):
    p = AttentionParams.init(2)
    arrays = p.arrays()
    arrays["ln_k_scale"] = np.array([np.nan, 1.0])
    np.savez(tmp_path / "bad.npz", __version__=np.array(1), m=np.array(2), seed=np.array(17), **arrays)
    assert main(["gradcheck", "--checkpoint", str(tmp_path / "bad.npz")]) == 1
    out = capsys.readouterr().out
    assert "FAIL" in out and "ln_k_scale" in out


def test_gradcheck_with_checkpoint(tmp_path, capsys):
    save_checkpoint(AttentionParams.init(2, seed=5), tmp_path / "p.npz")
    assert main(["gradcheck", "--checkpoint", str(tmp_path / "p.npz")]) == 0


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "wiener_aec", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "simulate" in res.stdout

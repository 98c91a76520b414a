from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest

from bpump.cli import main
from bpump.formats import read_trace, write_trace
from bpump.signal import ProbeCombo, PumpProbeTrace

FAST_FIT = {"fit": {"n_starts": 1, "n_bootstrap": 2, "max_evaluations": 300, "xatol": 1e-3}}


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_tables_csv_and_json_agree(capsys):
    code, csv_out, _ = run(["tables", "--gamma", "0", "--format", "csv"], capsys)
    assert code == 0
    rows = [line.split(",") for line in csv_out.strip().splitlines()[1:]]
    code, json_out, _ = run(["tables", "--gamma", "0", "--format", "json"], capsys)
    doc = json.loads(json_out)
    assert doc["schema"] == 1
    from_json = {(e["level"], e["polarization"], e["row"], e["col"]): e["value"] for e in doc["entries"]}
    from_csv = {(r[0], r[1], int(r[2]), int(r[3])): float(r[4]) for r in rows}
    assert from_json == from_csv
    assert from_csv[("g7", "plus", 1, 0)] == pytest.approx(2 / 3, abs=1e-12)
    assert from_csv[("g7", "minus", 0, 0)] == pytest.approx(1 / 12, abs=1e-12)
    assert {round(v, 12) for v in from_csv.values()} == {0.0, 0.25, 0.75, round(2 / 3, 12), round(1 / 12, 12)}


def test_tables_small_entries_at_default_gamma(capsys):
    _, out, _ = run(["tables", "--gamma", "-0.0069"], capsys)
    entries = {(e["level"], e["polarization"], e["row"], e["col"]): e["value"] for e in json.loads(out)["entries"]}
    assert entries[("g6", "plus", 1, 0)] == pytest.approx(3.57e-5, rel=0.01)


@pytest.mark.parametrize(
    "pol, excited, dim, index",
    [("plus", "g6,g7", 1, 1), ("minus", "g6,g7", 1, 2), ("plus", "g6", 2, None)],
)
def test_dark(capsys, pol, excited, dim, index):
    code, out, _ = run(["dark", "--pol", pol, "--excited", excited, "--gamma", "0"], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["dimension"] == dim
    if index is not None:
        vec = np.array([c["re"] + 1j * c["im"] for c in doc["basis"][0]])
        expected = np.zeros(4)
        expected[index] = 1
        np.testing.assert_allclose(vec, expected, atol=1e-12)


def test_dark_validation(capsys):
    assert run(["dark", "--excited", ""], capsys)[0] == 2
    assert run(["dark", "--excited", "g8"], capsys)[0] == 2
    assert run(["tables", "--format", "xml"], capsys)[0] == 2


def test_simulate_writes_readable_trace(tmp_path, capsys):
    out = tmp_path / "scp.csv"
    code, _, _ = run(["simulate", "--combo", "SCP", "--delays", "0:500:25", "--out", out], capsys)
    assert code == 0
    trace = read_trace(out)
    assert trace.combo == ProbeCombo.parse("SCP")
    assert len(trace) == 21 and trace.values[4] > 0
    # byte-identical re-emission
    copy = tmp_path / "copy.csv"
    write_trace(trace, copy)
    assert copy.read_bytes() == out.read_bytes()


def test_simulate_all_combos_to_directory(tmp_path, capsys):
    outdir = tmp_path / "traces"
    code, _, _ = run(["simulate", "--delays", "0:200:50", "--out", outdir], capsys)
    assert code == 0
    assert sorted(p.name for p in outdir.iterdir()) == ["ocp_plus.csv", "pcp_plus.csv", "scp_plus.csv"]


def _make_dataset(tmp_path, capsys):
    data = tmp_path / "data"
    assert run(["simulate", "--delays", "10:1500:30", "--out", data], capsys)[0] == 0
    return data


def test_fit_is_byte_deterministic(tmp_path, capsys):
    data = _make_dataset(tmp_path, capsys)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(FAST_FIT))
    outs = []
    for k in range(2):
        out = tmp_path / f"fit{k}.json"
        code, _, err = run(["fit", data, "--config", cfg, "--seed", "7", "--out", out], capsys)
        assert code == 0, err
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    doc = json.loads(outs[0])
    assert doc["schema"] == 1 and doc["status"] == "converged" and doc["seed"] == 7
    assert doc["t_spin_ps"] == pytest.approx(1136.0, rel=1e-3)
    assert doc["rate_ratio_alpha_squared"] == pytest.approx(0.104, rel=1e-3)


def test_fit_non_convergence_exit_code(tmp_path, capsys):
    data = _make_dataset(tmp_path, capsys)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": {"t_spin": 600.0}, "fit": {"n_starts": 1, "n_bootstrap": 0, "max_evaluations": 5}}))
    out = tmp_path / "fit.json"
    code, _, _ = run(["fit", data, "--config", cfg, "--out", out], capsys)
    assert code == 3
    assert json.loads(out.read_text())["status"] == "max_evaluations"


def test_fit_io_and_validation_errors(tmp_path, capsys):
    assert run(["fit", tmp_path / "missing"], capsys)[0] == 1
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "a.csv").write_text("# combo=SCP\ndelay_ps,dtau_over_tau\n0,1\n1,oops\n")
    code, _, err = run(["fit", bad], capsys)
    assert code == 2 and "a.csv:4:" in err
    one = tmp_path / "one"
    one.mkdir()
    write_trace(PumpProbeTrace(ProbeCombo.parse("OCP"), [0.0, 1.0], [0.0, -0.1]), one / "o.csv")
    assert run(["fit", one], capsys)[0] == 2


def test_config_validation(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": {"omega": 1.0}}))
    code, _, err = run(["tables", "--config", cfg], capsys)
    assert code == 2 and "omega" in err
    cfg.write_text("{not json")
    assert run(["tables", "--config", cfg], capsys)[0] == 2
    cfg.write_text(json.dumps({"model": {"alpha": 0.3, "rate_ratio": 0.1}}))
    assert run(["tables", "--config", cfg], capsys)[0] == 2
    assert run(["tables", "--config", tmp_path / "nope.json"], capsys)[0] == 1


def test_tempfit(tmp_path, capsys):
    temps = np.linspace(3, 11, 6)
    lifetimes = 1 / (2.5e-5 * temps**2)
    path = tmp_path / "series.csv"
    path.write_text("temperature_K,t_spin_ps,error_ps\n" + "".join(f"{t},{x},{0.05 * x}\n" for t, x in zip(temps.tolist(), lifetimes.tolist())))
    code, out, _ = run(["tempfit", path], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["exponent"] == pytest.approx(2.0, abs=1e-9)
    code, out, _ = run(["tempfit", path, "--fixed-exponent", "--correct-temperatures"], capsys)
    doc = json.loads(out)
    assert doc["exponent"] == 2.0 and doc["temperatures_K"][0] == pytest.approx(3 + 9.8 / 3)


def test_initialise_strained_writes_report_and_trajectory(tmp_path, capsys):
    out = tmp_path / "init.json"
    code, _, _ = run(["initialise", "--strained", "--t-orbital", "15", "--out", out], capsys)
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["mode"] == "strained" and doc["time_to_target_ps"] == pytest.approx(245, rel=0.25)
    lines = (tmp_path / "init.json.trajectory.csv").read_text().splitlines()
    assert lines[0] == "time_ps,dark_population"
    assert float(lines[1].split(",")[1]) == pytest.approx(0.5)


def test_initialise_continuous_pulse(capsys):
    code, out, _ = run(["initialise", "--duration", "1000"], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["mode"] == "continuous_pulse" and doc["saturated"]
    assert run(["initialise", "--target", "1.5"], capsys)[0] == 2


def test_global_flags_before_subcommand(tmp_path, capsys):
    out = tmp_path / "t.csv"
    assert run(["--format", "csv", "--out", out, "tables"], capsys)[0] == 0
    assert out.read_text().startswith("level,polarization")


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "bpump", "dark", "--pol", "plus"], capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["dimension"] == 1
    proc = subprocess.run([sys.executable, "-m", "bpump", "nosuch"], capture_output=True, text=True)
    assert proc.returncode == 2

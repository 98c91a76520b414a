from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bpump.formats import (
    FormatError,
    atomic_write,
    dumps_json,
    format_trace,
    parse_trace,
    parse_trajectory,
    read_temperature_series,
    read_trace,
    read_trace_dir,
    write_trace,
)
from bpump.signal import ProbeCombo, PumpProbeTrace

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=1, max_size=30), st.sampled_from(["SCP", "OCP", "PCP"]), st.sampled_from(["plus", "minus"]))
def test_trace_text_round_trip_is_exact(values, kind, probe):
    delays = np.arange(len(values), dtype=float) * 0.1 - 1.0
    trace = PumpProbeTrace(ProbeCombo.parse(kind, probe), delays, values, temperature=2.9, pump_energy=2.9)
    back = parse_trace(format_trace(trace))
    assert back.combo == trace.combo
    assert back.delays.tobytes() == trace.delays.tobytes()
    assert back.values.tobytes() == trace.values.tobytes()
    assert back.temperature == 2.9 and back.pump_energy == 2.9


def test_sigma_column_round_trip(tmp_path):
    trace = PumpProbeTrace(ProbeCombo.parse("OCP"), [0.0, 1.0], [0.1, -0.2], sigma=[0.01, 0.02])
    path = tmp_path / "t.csv"
    write_trace(trace, path)
    back = read_trace(path)
    np.testing.assert_array_equal(back.sigma, [0.01, 0.02])
    assert math.isnan(back.temperature)


BAD = [
    ("# combo=SCP\ndelay,value\n0,1\n", 2),
    ("# combo=SCP\ndelay_ps,dtau_over_tau\n0,1\n1,abc\n", 4),
    ("# combo=XYZ\ndelay_ps,dtau_over_tau\n0,1\n", 1),
    ("# colour=red\ndelay_ps,dtau_over_tau\n", 1),
    ("delay_ps,dtau_over_tau\n0,1\n", 1),
    ("# combo=SCP\ndelay_ps,dtau_over_tau\n0,1,2\n", 3),
    ("# combo=SCP\ndelay_ps,dtau_over_tau\n1,1\n0,1\n", 2),
    ("# combo=SCP\n# probe=x\ndelay_ps,dtau_over_tau\n", 1),
]


@pytest.mark.parametrize("text, line", BAD)
def test_malformed_traces_report_line(text, line):
    with pytest.raises(FormatError) as info:
        parse_trace(text, "f.csv")
    assert info.value.line == line
    assert f"f.csv:{line}:" in str(info.value)


def test_trace_dir(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_trace_dir(tmp_path / "missing")
    with pytest.raises(FileNotFoundError):
        read_trace_dir(tmp_path)
    for k in ("SCP", "OCP"):
        write_trace(PumpProbeTrace(ProbeCombo.parse(k), [0.0, 1.0], [0.0, 0.1]), tmp_path / f"{k}.csv")
    assert [t.combo.kind.value for t in read_trace_dir(tmp_path)] == ["OCP", "SCP"]


def test_temperature_series_reader(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("# note\ntemperature_K,t_spin_ps,error_ps\n3,1000,10\n5,400,5\n")
    np.testing.assert_array_equal(read_temperature_series(path), [[3, 1000, 10], [5, 400, 5]])
    path.write_text("temperature,t\n3,1\n")
    with pytest.raises(FormatError):
        read_temperature_series(path)


def test_trajectory_parser():
    arr = parse_trajectory("time_ps,dark_population\n0.0,0.25\n0.5,0.26\n")
    assert arr.shape == (2, 2)


def test_atomic_write_leaves_nothing_on_failure(tmp_path):
    with pytest.raises(OSError):
        atomic_write(tmp_path / "no" / "such" / "dir.txt", "x")
    atomic_write(tmp_path / "ok.txt", "hello\n")
    assert sorted(p.name for p in tmp_path.iterdir()) == ["ok.txt"]


def test_json_is_canonical():
    a = dumps_json({"b": 1.0, "a": np.array([1.5, 2.0]), "c": math.inf})
    assert a == dumps_json({"c": math.inf, "a": [1.5, 2.0], "b": 1.0})
    assert a.index('"a"') < a.index('"b"')
    assert '"c": null' in a

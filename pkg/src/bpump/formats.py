"""File formats: trace CSV, temperature-series CSV, JSON results.

Floats are written with ``repr`` so that reading a file back gives the
exact same binary values.  All writes go through a temporary file in the
destination directory followed by an atomic rename.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable

import numpy as np

from .signal import ComboKind, ProbeCombo, PumpProbeTrace
from .selection_rules import Polarization

SCHEMA_VERSION = 1
TRACE_COLUMNS = ("delay_ps", "dtau_over_tau")
SIGMA_COLUMN = "sigma"
SERIES_COLUMNS = ("temperature_K", "t_spin_ps", "error_ps")
TRAJECTORY_COLUMNS = ("time_ps", "dark_population")


class FormatError(ValueError):
    """Malformed input file; ``line`` is 1-based."""

    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


def atomic_write(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt(x: float) -> str:
    return repr(float(x))


def dumps_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=True) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, float) and math.isinf(obj):
        return None
    return obj


# ---------------------------------------------------------------------------
# traces


def format_trace(trace: PumpProbeTrace) -> str:
    lines = [
        f"# combo={trace.combo.kind.value}",
        f"# probe={trace.combo.probe_polarization.value}",
        f"# temperature_K={fmt(trace.temperature)}",
        f"# pump_energy_nJ={fmt(trace.pump_energy)}",
    ]
    cols = list(TRACE_COLUMNS)
    if trace.sigma is not None:
        cols.append(SIGMA_COLUMN)
    lines.append(",".join(cols))
    for i in range(len(trace)):
        row = [fmt(trace.delays[i]), fmt(trace.values[i])]
        if trace.sigma is not None:
            row.append(fmt(trace.sigma[i]))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def write_trace(trace: PumpProbeTrace, path) -> None:
    atomic_write(path, format_trace(trace))


def _parse_float(path, lineno, text, what):
    try:
        return float(text)
    except ValueError:
        raise FormatError(path, lineno, f"cannot parse {what} {text!r}") from None


def parse_trace(text: str, path: str = "<string>") -> PumpProbeTrace:
    meta: dict[str, str] = {}
    header = None
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if header is not None:
                raise FormatError(path, lineno, "comment after column header")
            body = line[1:].strip()
            if "=" not in body:
                raise FormatError(path, lineno, "header comment must be key=value")
            key, value = (s.strip() for s in body.split("=", 1))
            if key not in ("combo", "probe", "temperature_K", "pump_energy_nJ"):
                raise FormatError(path, lineno, f"unknown header key {key!r}")
            meta[key] = value
            continue
        cells = [c.strip() for c in line.split(",")]
        if header is None:
            if tuple(cells[:2]) != TRACE_COLUMNS or cells[2:] not in ([], [SIGMA_COLUMN]):
                raise FormatError(
                    path, lineno, f"expected column header {','.join(TRACE_COLUMNS)}[,{SIGMA_COLUMN}]"
                )
            header = cells
            header_line = lineno
            continue
        if len(cells) != len(header):
            raise FormatError(path, lineno, f"expected {len(header)} fields, got {len(cells)}")
        rows.append([_parse_float(path, lineno, c, name) for c, name in zip(cells, header)])
    if header is None:
        raise FormatError(path, max(1, len(text.splitlines())), "missing column header")
    if "combo" not in meta:
        raise FormatError(path, 1, "missing '# combo=' header")
    try:
        combo = ProbeCombo(ComboKind(meta["combo"].upper()), Polarization(meta.get("probe", "plus").lower()))
    except ValueError as exc:
        raise FormatError(path, 1, f"bad combo/probe header: {exc}") from None
    data = np.asarray(rows, dtype=float).reshape(-1, len(header))
    try:
        return PumpProbeTrace(
            combo,
            data[:, 0],
            data[:, 1],
            temperature=_parse_float(path, 1, meta.get("temperature_K", "nan"), "temperature"),
            pump_energy=_parse_float(path, 1, meta.get("pump_energy_nJ", "nan"), "pump energy"),
            sigma=data[:, 2] if len(header) == 3 else None,
        )
    except ValueError as exc:
        raise FormatError(path, header_line, str(exc)) from None


def read_trace(path) -> PumpProbeTrace:
    with open(path, encoding="utf-8") as fh:
        return parse_trace(fh.read(), str(path))


def read_trace_dir(directory) -> list[PumpProbeTrace]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"no such directory: {directory}")
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise FileNotFoundError(f"no *.csv traces in {directory}")
    return [read_trace(f) for f in files]


# ---------------------------------------------------------------------------
# other tables


def _numeric_table(text: str, path: str, columns: tuple[str, ...], min_cols: int) -> np.ndarray:
    header = None
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cells = [c.strip() for c in line.split(",")]
        if header is None:
            if tuple(cells) != columns[: len(cells)] or len(cells) < min_cols:
                raise FormatError(path, lineno, f"expected column header {','.join(columns)}")
            header = cells
            continue
        if len(cells) != len(header):
            raise FormatError(path, lineno, f"expected {len(header)} fields, got {len(cells)}")
        rows.append([_parse_float(path, lineno, c, n) for c, n in zip(cells, header)])
    if header is None:
        raise FormatError(path, 1, "missing column header")
    return np.asarray(rows, dtype=float).reshape(-1, len(header))


def read_temperature_series(path) -> np.ndarray:
    """Rows of (temperature K, t_spin ps[, std error ps])."""
    with open(path, encoding="utf-8") as fh:
        return _numeric_table(fh.read(), str(path), SERIES_COLUMNS, 2)


def format_columns(columns: Iterable[str], data: Iterable[Iterable[float]]) -> str:
    lines = [",".join(columns)]
    lines += [",".join(fmt(x) for x in row) for row in data]
    return "\n".join(lines) + "\n"


def parse_trajectory(text: str, path: str = "<string>") -> np.ndarray:
    return _numeric_table(text, path, TRAJECTORY_COLUMNS, 2)

"""Command-line interface: ``bpump <subcommand> [options]``.

Exit codes: 0 success, 1 I/O error, 2 invalid input or configuration,
3 fit did not converge (the result file is still written).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Sequence

import jsonschema
import numpy as np

from . import estimation, formats, schemes
from .dynamics import DEFAULT_STEP, ModelParameters, PulseShape
from .selection_rules import (
    DEFAULT_GAMMA,
    Doublet,
    MixingParameters,
    Polarization,
    dark_subspace,
    dipole_block,
    normalized_intensities,
)
from .signal import ComboKind, ProbeCombo, synthesize_trace

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_NOT_CONVERGED = 0, 1, 2, 3

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "step": _POS,
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "omega0": _NONNEG,
                "alpha": _NONNEG,
                "rate_ratio": _NONNEG,
                "eta": _NONNEG,
                "xi": _NONNEG,
                "t_orbital": _POS,
                "t_spin": _POS,
                "delta6": _NUM,
                "delta7": _NUM,
                "gamma": _NUM,
                "lam": _NONNEG,
                "pulse_start": _NONNEG,
                "pulse_duration": _POS,
                "zeeman_shifts": {"type": "array", "items": _NUM, "minItems": 8, "maxItems": 8},
            },
        },
        "fit": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "fixed": {"type": "array", "items": {"enum": list(estimation.FIT_PARAMETERS)}},
                "n_starts": {"type": "integer", "minimum": 1},
                "n_bootstrap": {"type": "integer", "minimum": 0},
                "max_evaluations": {"type": "integer", "minimum": 1},
                "xatol": _POS,
                "fit_offsets": {"type": "boolean"},
                "bounds": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        n: {"type": "array", "items": _POS, "minItems": 2, "maxItems": 2}
                        for n in estimation.FIT_PARAMETERS
                    },
                },
            },
        },
        "simulate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "delays": {"type": "array", "items": _NUM, "minItems": 1},
                "combos": {"type": "array", "items": {"enum": ["SCP", "OCP", "PCP"]}, "minItems": 1},
                "probe": {"enum": ["plus", "minus"]},
                "probe_duration": _POS,
            },
        },
        "initialise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "target": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "duration": _POS,
                "strained": {"type": "boolean"},
                "strained_t_orbital": _POS,
                "strained_t_spin": _POS,
                "drive_scale": _NONNEG,
            },
        },
    },
}


_GLOBAL_FLAGS = ("config", "seed", "out", "format")


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"config {where}: {exc.message}") from None
    model = cfg.get("model", {})
    for a, b in (("alpha", "rate_ratio"), ("eta", "t_orbital"), ("xi", "t_spin")):
        if a in model and b in model:
            raise UsageError(f"config model: give either {a} or {b}, not both")


def model_from_config(cfg: dict, step: float = DEFAULT_STEP) -> ModelParameters:
    """Reference operating point with config overrides.

    When ``omega0`` is not given it is calibrated to the single-cycle
    dark population of 0.279 for the configured model.
    """
    m = dict(cfg.get("model", {}))
    base = schemes.reference_parameters()
    changes = {}
    for key in ("alpha", "eta", "xi", "delta6", "delta7", "gamma", "lam"):
        if key in m:
            changes[key] = float(m[key])
    if "rate_ratio" in m:
        changes["alpha"] = math.sqrt(m["rate_ratio"])
    if "t_orbital" in m:
        changes["eta"] = 1.0 / (4 * m["t_orbital"])
    if "t_spin" in m:
        changes["xi"] = 1.0 / (4 * m["t_spin"])
    if "zeeman_shifts" in m:
        changes["zeeman_shifts"] = tuple(m["zeeman_shifts"])
    if "pulse_start" in m or "pulse_duration" in m:
        changes["pulse"] = PulseShape(
            start=m.get("pulse_start", base.pulse.start), duration=m.get("pulse_duration", base.pulse.duration)
        )
    params = base.with_(**changes)
    if "omega0" in m:
        return params.with_(omega0=float(m["omega0"]))
    return params.with_(omega0=schemes.calibrate_rabi(params, step=step))


def params_dict(p: ModelParameters) -> dict:
    return {
        "omega0": p.omega0,
        "alpha": p.alpha,
        "eta": p.eta,
        "xi": p.xi,
        "delta6": p.delta6,
        "delta7": p.delta7,
        "gamma": p.gamma,
        "lam": p.lam,
        "pulse_start_ps": p.pulse.start,
        "pulse_duration_ps": p.pulse.duration,
        "t_orbital_ps": p.t_orbital,
        "t_spin_ps": p.t_spin,
    }


# ---------------------------------------------------------------------------
# output


def emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        formats.atomic_write(out, text)


def _format_of(args) -> str:
    return args.format or "json"


# ---------------------------------------------------------------------------
# subcommands


def cmd_tables(args, cfg) -> int:
    mix = MixingParameters(gamma=args.gamma, alpha=args.alpha)
    entries = []
    for level in (Doublet.GAMMA6, Doublet.GAMMA7):
        for pol in (Polarization.PLUS, Polarization.MINUS):
            table = normalized_intensities(dipole_block(level, pol, mix))
            for (r, c), v in np.ndenumerate(table):
                entries.append({"level": level.value, "polarization": pol.value, "row": r, "col": c, "value": float(v)})
    if _format_of(args) == "csv":
        lines = ["level,polarization,row,col,value"]
        lines += [f"{e['level']},{e['polarization']},{e['row']},{e['col']},{formats.fmt(e['value'])}" for e in entries]
        emit("\n".join(lines) + "\n", args.out)
    else:
        emit(formats.dumps_json({"schema": formats.SCHEMA_VERSION, "gamma": args.gamma, "alpha": args.alpha, "entries": entries}), args.out)
    return EXIT_OK


def _parse_excited(text: str) -> list[Doublet]:
    names = [s.strip().lower() for s in text.split(",") if s.strip()]
    if not names:
        raise UsageError("--excited must name at least one of g6, g7")
    try:
        return [Doublet(n) for n in dict.fromkeys(names)]
    except ValueError:
        raise UsageError(f"--excited entries must be g6 or g7, got {text!r}") from None


def cmd_dark(args, cfg) -> int:
    levels = _parse_excited(args.excited)
    mix = MixingParameters(gamma=args.gamma, alpha=1.0)
    pol = Polarization(args.pol)
    dim, basis = dark_subspace([dipole_block(lv, pol, mix) for lv in levels])
    vectors = [[{"re": float(z.real), "im": float(z.imag)} for z in v] for v in basis]
    if _format_of(args) == "csv":
        lines = [f"# dimension={dim}", "index,mj_+3/2,mj_+1/2,mj_-1/2,mj_-3/2"]
        for k, v in enumerate(basis):
            lines.append(f"{k}," + ",".join(_complex_str(z) for z in v))
        emit("\n".join(lines) + "\n", args.out)
    else:
        doc = {
            "schema": formats.SCHEMA_VERSION,
            "polarization": pol.value,
            "excited": [lv.value for lv in levels],
            "gamma": args.gamma,
            "dimension": dim,
            "basis": vectors,
        }
        emit(formats.dumps_json(doc), args.out)
    return EXIT_OK


def _complex_str(z: complex) -> str:
    z = complex(z)
    if abs(z.imag) < 1e-15:
        return formats.fmt(z.real)
    return formats.fmt(z.real) + ("+" if z.imag >= 0 else "-") + formats.fmt(abs(z.imag)) + "j"


def _parse_delays(text: str) -> np.ndarray:
    try:
        if ":" in text:
            start, stop, step = (float(s) for s in text.split(":"))
            if step <= 0 or stop <= start:
                raise ValueError
            n = int(math.floor((stop - start) / step + 1e-9))
            return start + step * np.arange(n + 1)
        return np.array([float(s) for s in text.split(",")])
    except ValueError:
        raise UsageError(f"--delays must be start:stop:step or a comma list, got {text!r}") from None


def cmd_simulate(args, cfg) -> int:
    sim = cfg.get("simulate", {})
    step = cfg.get("step", DEFAULT_STEP)
    if args.delays is not None:
        delays = _parse_delays(args.delays)
    elif "delays" in sim:
        delays = np.asarray(sim["delays"], dtype=float)
    else:
        delays = _parse_delays("0:2000:5")
    combos = args.combo.split(",") if args.combo else sim.get("combos", ["SCP", "OCP", "PCP"])
    probe = args.probe or sim.get("probe", "plus")
    try:
        parsed = [ProbeCombo.parse(c.strip(), probe) for c in combos]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    params = model_from_config(cfg, step)
    cache: dict = {}
    traces = [
        synthesize_trace(params, c, delays, probe_duration=sim.get("probe_duration"), step=step, trajectory_cache=cache)
        for c in parsed
    ]
    fmt_ = args.format or "csv"
    if len(traces) > 1 and args.out is not None:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        for t in traces:
            name = f"{t.combo.kind.value.lower()}_{t.combo.probe_polarization.value}.{fmt_}"
            formats.atomic_write(outdir / name, _render_trace(t, fmt_))
    else:
        emit("".join(_render_trace(t, fmt_) for t in traces), args.out)
    return EXIT_OK


def _render_trace(trace, fmt_: str) -> str:
    if fmt_ == "csv":
        return formats.format_trace(trace)
    return formats.dumps_json(
        {
            "schema": formats.SCHEMA_VERSION,
            "combo": trace.combo.kind.value,
            "probe": trace.combo.probe_polarization.value,
            "delays_ps": trace.delays,
            "dtau_over_tau": trace.values,
        }
    )


def fit_result_dict(res: estimation.FitResult, seed: int) -> dict:
    return {
        "schema": formats.SCHEMA_VERSION,
        "status": res.status,
        "seed": seed,
        "params": params_dict(res.params),
        "t_orbital_ps": res.t_orbital,
        "t_spin_ps": res.t_spin,
        "alpha": res.alpha,
        "rate_ratio_alpha_squared": res.rate_ratio,
        "uncertainties": res.uncertainties,
        "residual_norm": res.residual_norm,
        "n_points": res.n_points,
        "n_evaluations": res.n_evaluations,
        "free": list(res.free),
        "offsets": list(res.offsets),
        "poorly_constrained": res.poorly_constrained,
    }


def cmd_fit(args, cfg) -> int:
    traces = formats.read_trace_dir(args.data)
    fit_cfg = cfg.get("fit", {})
    step = cfg.get("step", DEFAULT_STEP)
    init = model_from_config(cfg, step)
    seed = _seed(args, cfg)
    if len({t.combo for t in traces}) < 2 and not args.single:
        raise UsageError("global fit needs at least two distinct pump/probe combinations (or --single)")
    res = estimation.fit_global(
        traces,
        init,
        fixed=fit_cfg.get("fixed", ()),
        n_starts=fit_cfg.get("n_starts", estimation.DEFAULT_STARTS),
        n_bootstrap=fit_cfg.get("n_bootstrap", estimation.DEFAULT_BOOTSTRAP),
        seed=seed,
        bounds={k: tuple(v) for k, v in fit_cfg.get("bounds", {}).items()},
        xatol=fit_cfg.get("xatol", estimation.DEFAULT_XATOL),
        maxfev=fit_cfg.get("max_evaluations", estimation.DEFAULT_MAXFEV),
        fit_offsets=fit_cfg.get("fit_offsets", False),
        step=step,
    )
    emit(formats.dumps_json(fit_result_dict(res, seed)), args.out)
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def cmd_tempfit(args, cfg) -> int:
    table = formats.read_temperature_series(args.data)
    temps = table[:, 0]
    if args.correct_temperatures:
        temps = np.array([estimation.correct_temperature(t) for t in temps])
    errors = table[:, 2] if table.shape[1] > 2 else None
    series = estimation.TemperatureSeries(temps, table[:, 1], errors)
    law = estimation.fit_temperature_law(series, free_exponent=not args.fixed_exponent)
    doc = {
        "schema": formats.SCHEMA_VERSION,
        "coefficient_per_ps": law.coefficient,
        "coefficient_error": law.coefficient_error,
        "exponent": law.exponent,
        "exponent_error": law.exponent_error,
        "free_exponent": law.free_exponent,
        "temperatures_K": series.temperatures,
        "corrected": bool(args.correct_temperatures),
    }
    emit(formats.dumps_json(doc), args.out)
    return EXIT_OK


def cmd_initialise(args, cfg) -> int:
    init_cfg = cfg.get("initialise", {})
    step = cfg.get("step", DEFAULT_STEP)
    target = args.target if args.target is not None else init_cfg.get("target", 0.99)
    if not 0 < target < 1:
        raise UsageError("--target must lie in (0, 1)")
    duration = args.duration if args.duration is not None else init_cfg.get("duration")
    strained = args.strained or init_cfg.get("strained", False)
    params = model_from_config(cfg, step)
    if args.t_spin is not None:
        params = params.with_(xi=1.0 / (4 * args.t_spin))
    if strained:
        scheme = schemes.StrainedScheme(
            t_orbital=args.t_orbital or init_cfg.get("strained_t_orbital", 15.0),
            t_spin=args.t_spin or init_cfg.get("strained_t_spin", 4.9e9),
            drive_scale=init_cfg.get("drive_scale", 1.0) if args.drive_scale is None else args.drive_scale,
        )
        report = schemes.strained_prediction(scheme, params.omega0, target, step=step)
        mode = "strained"
    elif duration is not None:
        report = schemes.simulate_initialisation(params, duration, target=target, step=step)
        mode = "continuous_pulse"
    else:
        report = schemes.time_to_fidelity(params, target, step=step)
        mode = "time_to_fidelity"
    doc = {"schema": formats.SCHEMA_VERSION, "mode": mode, "omega0": params.omega0, **report.to_dict()}
    emit(formats.dumps_json(doc), args.out)
    traj_path = args.trajectory or (f"{args.out}.trajectory.csv" if args.out else None)
    if traj_path:
        formats.atomic_write(
            traj_path,
            formats.format_columns(formats.TRAJECTORY_COLUMNS, zip(report.times, report.dark_population)),
        )
    return EXIT_OK


def _seed(args, cfg) -> int:
    return args.seed if args.seed is not None else cfg.get("seed", 0)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS so a flag given before the subcommand is not reset by the
    # subparser's own default
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="seed for multi-start and bootstrap")
    common.add_argument("--out", help="output file (stdout if omitted)")
    common.add_argument("--format", choices=("csv", "json"), help="output format (default per command)")

    parser = argparse.ArgumentParser(
        prog="bpump", description="Optical pumping of boron acceptor spins in silicon.", parents=[common]
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tables", parents=[common], help="normalized |Q|^2 selection-rule tables")
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA, help="mJ = ±3/2 mixing parameter")
    p.add_argument("--alpha", type=float, default=1.0, help="Γ7/Γ6 dipole ratio")
    p.set_defaults(func=cmd_tables)

    p = sub.add_parser("dark", parents=[common], help="dark subspace for a polarization")
    p.add_argument("--pol", choices=[x.value for x in Polarization], default="plus", help="pump polarization")
    p.add_argument("--excited", default="g6,g7", help="comma list from g6,g7")
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA, help="mJ = ±3/2 mixing parameter")
    p.set_defaults(func=cmd_dark)

    p = sub.add_parser("simulate", parents=[common], help="model pump-probe traces")
    p.add_argument("--combo", help="comma list of SCP,OCP,PCP")
    p.add_argument("--probe", choices=("plus", "minus"), help="probe circular polarization")
    p.add_argument("--delays", help="start:stop:step or comma list, ps")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", parents=[common], help="global fit to a directory of trace CSVs")
    p.add_argument("data", help="directory of trace CSV files")
    p.add_argument("--single", action="store_true", help="allow a single combination (per-scan fit)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("tempfit", parents=[common], help="fit rate = a T^p to spin lifetimes")
    p.add_argument("data", help="CSV with temperature_K,t_spin_ps[,error_ps]")
    p.add_argument("--fixed-exponent", action="store_true", help="pin p = 2")
    p.add_argument("--correct-temperatures", action="store_true", help="apply T + 9.8/T first")
    p.set_defaults(func=cmd_tempfit)

    p = sub.add_parser("initialise", parents=[common], help="initialisation fidelity predictions")
    p.add_argument("--target", type=float, help="dark-state fidelity target (default 0.99)")
    p.add_argument("--duration", type=float, help="continuous drive length, ps")
    p.add_argument("--t-spin", type=float, help="spin lifetime, ps")
    p.add_argument("--strained", action="store_true", help="use the strained four-level scheme")
    p.add_argument("--t-orbital", type=float, help="strained orbital lifetime, ps")
    p.add_argument("--drive-scale", type=float, help="strained drive relative to the calibrated one")
    p.add_argument("--trajectory", help="trajectory CSV path")
    p.set_defaults(func=cmd_initialise)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    for name in _GLOBAL_FLAGS:
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, formats.FormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

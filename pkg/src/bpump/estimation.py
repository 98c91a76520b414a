"""Parameter estimation against pump-probe transients.

Global fits share one parameter set across SCP/OCP/PCP traces.  The free
parameters are drawn from (omega0, alpha, eta, xi); everything else in
:class:`ModelParameters` is held at the value given in ``init``.

The rate ratio between the Γ7 and Γ6 transitions is reported as
``alpha**2`` (ratio of squared dipole moments, i.e. of transition rates).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.optimize import least_squares, minimize

from .dynamics import DEFAULT_STEP, ModelParameters
from .signal import ComboKind, PumpProbeTrace, synthesize_trace

FIT_PARAMETERS = ("omega0", "alpha", "eta", "xi")

DEFAULT_BOUNDS = {
    "omega0": (1e-6, 10.0),
    "alpha": (1e-4, 100.0),
    "eta": (1e-6, 10.0),
    "xi": (1e-9, 1.0),
}

DEFAULT_STARTS = 8
DEFAULT_BOOTSTRAP = 200
DEFAULT_XATOL = 1e-6
DEFAULT_MAXFEV = 20_000
START_SPREAD = 0.5  # std of log-space perturbation for extra starts
POORLY_CONSTRAINED = 0.5


def max_workers() -> int:
    try:
        return max(1, int(os.environ.get("BPUMP_THREADS", "1")))
    except ValueError:
        return 1


def _ordered_map(fn: Callable, items: Sequence) -> list:
    workers = min(max_workers(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass
class FitResult:
    params: ModelParameters
    t_orbital: float
    t_spin: float
    alpha: float
    rate_ratio: float  # alpha**2
    uncertainties: dict[str, float]
    residual_norm: float
    n_points: int
    status: str = "converged"
    n_evaluations: int = 0
    free: tuple[str, ...] = FIT_PARAMETERS
    offsets: tuple[float, ...] = ()
    poorly_constrained: bool = False

    @property
    def converged(self) -> bool:
        return self.status == "converged"


@dataclass
class TemperatureSeries:
    temperatures: np.ndarray
    t_spin: np.ndarray
    errors: np.ndarray | None = None

    def __post_init__(self):
        self.temperatures = np.asarray(self.temperatures, dtype=float)
        self.t_spin = np.asarray(self.t_spin, dtype=float)
        if self.errors is not None:
            self.errors = np.asarray(self.errors, dtype=float)
        if self.temperatures.shape != self.t_spin.shape:
            raise ValueError("temperatures and lifetimes differ in length")
        if np.any(self.temperatures <= 0):
            raise ValueError("temperatures must be positive")
        if np.unique(self.temperatures).size != self.temperatures.size:
            raise ValueError("temperatures must be distinct")

    @classmethod
    def from_entries(cls, entries: Iterable[tuple[float, float, float]]) -> "TemperatureSeries":
        arr = np.asarray(list(entries), dtype=float).reshape(-1, 3)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2])


@dataclass
class TemperatureLaw:
    coefficient: float  # rate = coefficient * T**exponent, 1/ps
    exponent: float
    coefficient_error: float
    exponent_error: float
    free_exponent: bool = True

    def rate(self, temperature):
        return self.coefficient * np.asarray(temperature, dtype=float) ** self.exponent

    def lifetime(self, temperature):
        return 1.0 / self.rate(temperature)


@dataclass
class BiexponentialFit:
    amplitude1: float
    tau1: float
    amplitude2: float
    tau2: float
    tau2_unbounded: bool = False
    sse: float = 0.0

    def __iter__(self):
        return iter((self.amplitude1, self.tau1, self.amplitude2, self.tau2))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = self.amplitude1 * np.exp(-t / self.tau1) if self.amplitude1 else 0.0 * t
        if self.amplitude2 and math.isfinite(self.tau2):
            out = out + self.amplitude2 * np.exp(-t / self.tau2)
        return out


# ---------------------------------------------------------------------------
# residuals


def _weights(trace: PumpProbeTrace) -> np.ndarray:
    if trace.sigma is None:
        return np.ones_like(trace.values)
    return 1.0 / trace.sigma**2


def model_traces(
    params: ModelParameters,
    traces: Sequence[PumpProbeTrace],
    step: float = DEFAULT_STEP,
    check: bool = False,
) -> list[np.ndarray]:
    cache: dict = {}
    return [
        synthesize_trace(params, t.combo, t.delays, step=step, check=check, trajectory_cache=cache).values
        for t in traces
    ]


def _offsets(models, traces) -> list[float]:
    out = []
    for m, t in zip(models, traces):
        w = _weights(t)
        out.append(float(np.sum(w * (t.values - m)) / np.sum(w)))
    return out


def residual(
    params: ModelParameters,
    traces: Sequence[PumpProbeTrace],
    *,
    fit_offsets: bool = False,
    step: float = DEFAULT_STEP,
) -> float:
    """Weighted sum of squared (model - data) over all traces and delays."""
    if len(traces) == 0:
        raise ValueError("no traces to compare against")
    models = model_traces(params, traces, step=step)
    offs = _offsets(models, traces) if fit_offsets else [0.0] * len(traces)
    total = 0.0
    for m, t, c in zip(models, traces, offs):
        total += float(np.sum(_weights(t) * (m + c - t.values) ** 2))
    return total


# ---------------------------------------------------------------------------
# global fit


class _Objective:
    def __init__(self, init, traces, free, bounds, fit_offsets, step):
        self.init = init
        self.traces = traces
        self.free = free
        self.lo = np.log([bounds[n][0] for n in free])
        self.hi = np.log([bounds[n][1] for n in free])
        self.fit_offsets = fit_offsets
        self.step = step
        self.nfev = 0

    def params(self, x) -> ModelParameters:
        x = np.clip(x, self.lo, self.hi)
        return self.init.with_(**{n: float(math.exp(v)) for n, v in zip(self.free, x)})

    def __call__(self, x) -> float:
        self.nfev += 1
        return residual(self.params(x), self.traces, fit_offsets=self.fit_offsets, step=self.step)


def _nelder_mead(obj: _Objective, x0: np.ndarray, xatol: float, maxfev: int, scale: float = 0.1):
    simplex = np.vstack([x0] + [x0 + scale * e for e in np.eye(x0.size)])
    res = minimize(
        obj,
        x0,
        method="Nelder-Mead",
        options={
            "initial_simplex": simplex,
            "xatol": xatol,
            "fatol": np.inf,
            "maxfev": maxfev,
            "adaptive": False,
        },
    )
    status = "converged" if res.success else "max_evaluations"
    return np.clip(res.x, obj.lo, obj.hi), float(res.fun), status, int(res.nfev)


def _free_names(fixed: Iterable[str]) -> tuple[str, ...]:
    fixed = set(fixed)
    unknown = fixed - set(FIT_PARAMETERS)
    if unknown:
        raise ValueError(f"unknown fixed parameter(s): {sorted(unknown)}")
    return tuple(n for n in FIT_PARAMETERS if n not in fixed)


def _start_points(x0: np.ndarray, n_starts: int, rng: np.random.Generator, lo, hi) -> list[np.ndarray]:
    starts = [x0]
    for _ in range(n_starts - 1):
        starts.append(np.clip(x0 + rng.normal(0.0, START_SPREAD, x0.size), lo, hi))
    return starts


def fit_global(
    traces: Sequence[PumpProbeTrace],
    init: ModelParameters,
    fixed: Iterable[str] = (),
    *,
    n_starts: int = DEFAULT_STARTS,
    n_bootstrap: int = DEFAULT_BOOTSTRAP,
    seed: int = 0,
    bounds: dict[str, tuple[float, float]] | None = None,
    xatol: float = DEFAULT_XATOL,
    maxfev: int = DEFAULT_MAXFEV,
    fit_offsets: bool = False,
    step: float = DEFAULT_STEP,
) -> FitResult:
    """Fit one shared parameter set to all ``traces``.

    Nelder-Mead on the logarithms of the free parameters, restarted from
    ``n_starts`` points (the first is ``init``); the lowest residual wins.
    Standard errors come from a residual bootstrap refitted from the best
    point.
    """
    traces = list(traces)
    if not traces:
        raise ValueError("no traces to fit")
    free = _free_names(fixed)
    bnds = dict(DEFAULT_BOUNDS)
    bnds.update(bounds or {})
    for n in free:
        if not getattr(init, n) > 0:
            raise ValueError(f"initial {n} must be positive to be fitted")
    rng = np.random.default_rng(seed)
    obj = _Objective(init, traces, free, bnds, fit_offsets, step)
    x0 = np.clip(np.log([getattr(init, n) for n in free]), obj.lo, obj.hi)

    if free:
        starts = _start_points(x0, max(1, n_starts), rng, obj.lo, obj.hi)

        def run(start):
            sub = _Objective(init, traces, free, bnds, fit_offsets, step)
            return _nelder_mead(sub, start, xatol, maxfev)

        runs = _ordered_map(run, starts)
        best = min(range(len(runs)), key=lambda i: (runs[i][1], i))
        x_best, f_best, status, _ = runs[best]
        nfev = sum(r[3] for r in runs)
    else:
        x_best, f_best, status, nfev = x0, obj(x0), "converged", 1
    best_params = obj.params(x_best)

    models = model_traces(best_params, traces, step=step)
    offsets = _offsets(models, traces) if fit_offsets else [0.0] * len(traces)
    n_points = sum(len(t) for t in traces)

    if "omega0" in free and (
        x_best[free.index("omega0")] <= obj.lo[free.index("omega0")] + 1e-9
        or max(float(np.max(np.abs(m))) for m in models) < 1e-12
    ):
        status = "degenerate"

    samples = []
    if n_bootstrap > 0 and free:
        samples = _bootstrap(
            traces, models, offsets, obj, x_best, n_bootstrap, rng, xatol, maxfev, fit_offsets, step
        )
    unc = _uncertainties(samples, free)
    result = _make_result(best_params, unc, f_best, n_points, status, nfev, free, offsets)
    return result


def _bootstrap(traces, models, offsets, obj, x_best, n, rng, xatol, maxfev, fit_offsets, step):
    resampled = []
    for _ in range(n):
        fake = []
        for t, m, c in zip(traces, models, offsets):
            r = t.values - (m + c)
            idx = rng.integers(0, r.size, r.size)
            fake.append(PumpProbeTrace(t.combo, t.delays, m + c + r[idx], t.temperature, t.pump_energy, t.sigma))
        resampled.append(fake)

    def refit(fake):
        sub = _Objective(obj.init, fake, obj.free, _bounds_of(obj), fit_offsets, step)
        x, _, _, _ = _nelder_mead(sub, x_best, xatol, maxfev, scale=0.05)
        return sub.params(x)

    return _ordered_map(refit, resampled)


def _bounds_of(obj: _Objective) -> dict:
    return {n: (math.exp(lo), math.exp(hi)) for n, lo, hi in zip(obj.free, obj.lo, obj.hi)}


def _uncertainties(samples: list[ModelParameters], free) -> dict[str, float]:
    names = FIT_PARAMETERS + ("t_orbital", "t_spin", "rate_ratio")
    if len(samples) < 2:
        return {n: (math.nan if (n in free or n in names[4:]) and free else 0.0) for n in names}
    cols = {
        "omega0": [p.omega0 for p in samples],
        "alpha": [p.alpha for p in samples],
        "eta": [p.eta for p in samples],
        "xi": [p.xi for p in samples],
        "t_orbital": [p.t_orbital for p in samples],
        "t_spin": [p.t_spin for p in samples],
        "rate_ratio": [p.alpha**2 for p in samples],
    }
    out = {}
    for n in names:
        if n in FIT_PARAMETERS and n not in free:
            out[n] = 0.0
        else:
            out[n] = float(np.std(np.asarray(cols[n], dtype=float), ddof=1))
    return out


def _make_result(params, unc, f_best, n_points, status, nfev, free, offsets) -> FitResult:
    poorly = False
    for name, value in (("t_orbital", params.t_orbital), ("t_spin", params.t_spin)):
        err = unc.get(name, math.nan)
        if math.isfinite(err) and (not math.isfinite(value) or err > POORLY_CONSTRAINED * value):
            poorly = True
    return FitResult(
        params=params,
        t_orbital=params.t_orbital,
        t_spin=params.t_spin,
        alpha=params.alpha,
        rate_ratio=params.alpha**2,
        uncertainties=unc,
        residual_norm=f_best,
        n_points=n_points,
        status=status,
        n_evaluations=nfev,
        free=tuple(free),
        offsets=tuple(offsets),
        poorly_constrained=poorly,
    )


def fit_ocp_lifetimes(
    trace: PumpProbeTrace,
    init: ModelParameters,
    fixed: Iterable[str] = ("alpha",),
    **kwargs,
) -> FitResult:
    """Fit a single OCP scan, e.g. one temperature of a series.

    ``alpha`` is held at its global-fit value by default; one OCP trace
    cannot separate it from ``omega0``.
    """
    if trace.combo.kind is not ComboKind.OCP:
        raise ValueError("fit_ocp_lifetimes expects an OCP trace")
    return fit_global([trace], init, fixed, **kwargs)


# ---------------------------------------------------------------------------
# biexponential initial guesses


def _varpro(t, y, taus):
    basis = np.exp(-t[:, None] / np.asarray(taus)[None, :])
    amps, *_ = np.linalg.lstsq(basis, y, rcond=None)
    r = basis @ amps - y
    return amps, float(r @ r)


def biexponential_fit(trace: PumpProbeTrace, min_points: int = 8) -> BiexponentialFit:
    """Least-squares ``A1 exp(-t/tau1) + A2 exp(-t/tau2)`` on positive delays.

    Amplitudes are solved linearly for every trial pair of time constants.
    If a second exponential does not improve the fit, ``amplitude2 = 0``,
    ``tau2 = inf`` and ``tau2_unbounded`` is set.
    """
    mask = trace.delays > 0
    t, y = trace.delays[mask], trace.values[mask]
    if t.size < min_points:
        raise ValueError(f"need at least {min_points} positive delays, got {t.size}")
    if not np.any(y):
        return BiexponentialFit(0.0, math.inf, 0.0, math.inf, True, 0.0)
    dt = max(float(np.min(np.diff(t))), 1e-6)
    grid = np.geomspace(dt, 10.0 * t[-1], 40)

    sse_single, tau_single = min((_varpro(t, y, [tau])[1], tau) for tau in grid)
    fit1 = least_squares(lambda u: _single_res(t, y, u[0]), [math.log(tau_single)])
    tau_single = float(math.exp(fit1.x[0]))
    (amp_single,), sse_single = _varpro(t, y, [tau_single])

    best = None
    for i, a in enumerate(grid):
        for b in grid[i + 1 :]:
            _, sse = _varpro(t, y, [a, b])
            if best is None or sse < best[0]:
                best = (sse, a, b)
    fit2 = least_squares(
        lambda u: _double_res(t, y, u), np.log(best[1:]), bounds=(math.log(dt / 10), math.log(1e3 * t[-1]))
    )
    tau1, tau2 = sorted(np.exp(fit2.x))
    (a1, a2), sse2 = _varpro(t, y, [tau1, tau2])

    scale = float(np.max(np.abs(y)))
    degenerate = (
        sse2 >= sse_single * (1.0 - 1e-6) - 1e-30
        or abs(a2) < 1e-3 * scale
        or abs(a1) < 1e-3 * scale
        or tau2 / tau1 < 1.05
        or tau2 > 100.0 * t[-1]
    )
    if degenerate:
        return BiexponentialFit(float(amp_single), tau_single, 0.0, math.inf, True, sse_single)
    return BiexponentialFit(float(a1), float(tau1), float(a2), float(tau2), False, sse2)


def _single_res(t, y, logtau):
    basis = np.exp(-t / math.exp(logtau))[:, None]
    amps, *_ = np.linalg.lstsq(basis, y, rcond=None)
    return basis @ amps - y


def _double_res(t, y, logtaus):
    basis = np.exp(-t[:, None] / np.exp(logtaus)[None, :])
    amps, *_ = np.linalg.lstsq(basis, y, rcond=None)
    return basis @ amps - y


# ---------------------------------------------------------------------------
# temperature dependence


def correct_temperature(t_measured: float) -> float:
    """Sample temperature from the cold-finger reading: T + 9.8/T (kelvin).

    Apply once; the map is not idempotent.
    """
    if not t_measured > 0:
        raise ValueError("measured temperature must be positive")
    return t_measured + 9.8 / t_measured


def fit_temperature_law(series: TemperatureSeries, free_exponent: bool = True) -> TemperatureLaw:
    """Weighted log-log least squares of ``1/t_spin = a * T**p``.

    With ``free_exponent=False`` the exponent is pinned to 2 (two-phonon
    Raman).  Weights come from the lifetime standard errors when present.
    """
    if series.temperatures.size < 3:
        raise ValueError("need at least three temperatures")
    if np.any(series.t_spin <= 0):
        raise ValueError("lifetimes must be positive")
    x = np.log(series.temperatures)
    y = -np.log(series.t_spin)
    if series.errors is not None and np.all(series.errors > 0):
        sigma = series.errors / series.t_spin
    else:
        sigma = np.ones_like(y)
    w = 1.0 / sigma**2
    n = x.size

    if free_exponent:
        design = np.column_stack([np.ones_like(x), x])
        sw = np.sqrt(w)
        coef, *_ = np.linalg.lstsq(design * sw[:, None], y * sw, rcond=None)
        resid = y - design @ coef
        chi2 = float(np.sum(w * resid**2))
        cov = np.linalg.inv(design.T @ (design * w[:, None])) * max(chi2 / (n - 2), 1e-300)
        log_a, p = coef
        log_a_err, p_err = np.sqrt(np.diag(cov))
    else:
        p, p_err = 2.0, 0.0
        log_a = float(np.sum(w * (y - p * x)) / np.sum(w))
        resid = y - p * x - log_a
        chi2 = float(np.sum(w * resid**2))
        log_a_err = math.sqrt(max(chi2 / (n - 1), 1e-300) / np.sum(w))
    a = math.exp(log_a)
    return TemperatureLaw(a, float(p), a * float(log_a_err), float(p_err), free_exponent)

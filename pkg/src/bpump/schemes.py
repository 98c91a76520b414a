"""Drive calibration and initialisation-fidelity predictions.

Two level schemes are covered:

- the unstrained 8-level model of :mod:`bpump.dynamics`, where circular
  light leaves a single dark ground state (mJ = +1/2 for ε+, -1/2 for ε-);
- a strained 4-level model: one ground ±1/2 pair and one excited ±1/2
  pair, with a single bright/dark ground state under circular drive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .dynamics import (
    DEFAULT_STEP,
    ModelParameters,
    PulseShape,
    decay_transfers,
    generators,
    ground_mixture,
    propagate,
    rate_liouvillian,
)
from .selection_rules import Polarization

EQUILIBRIUM_DARK = 0.25
DEFAULT_TARGET_POPULATION = 0.279
READOUT_DELAY = 200.0  # ps after pulse start
SAMPLE_SPACING = 0.5  # ps, crossing-time resolution
ASYMPTOTE_FACTOR = 20.0
CHUNK = 2000.0  # ps of dense samples per propagation chunk

#: Reference operating point: lifetimes from the global fit, Γ7/Γ6 rate
#: ratio 0.104, both doublets resonant, 9 ps square pulses.
REFERENCE_T_ORBITAL = 36.1
REFERENCE_T_SPIN = 1136.0
REFERENCE_RATE_RATIO = 0.104
REFERENCE_PULSE = 9.0


def dark_index(pol: Polarization) -> int:
    """Ground index of the dark state in the canonical 8-level layout."""
    if pol is Polarization.PLUS:
        return 1
    if pol is Polarization.MINUS:
        return 2
    raise ValueError("a single dark state exists only for circular pumping")


def reference_parameters(omega0: float = 0.0, **overrides) -> ModelParameters:
    base = ModelParameters.from_lifetimes(
        REFERENCE_T_ORBITAL,
        REFERENCE_T_SPIN,
        omega0=omega0,
        alpha=math.sqrt(REFERENCE_RATE_RATIO),
        delta6=0.0,
        delta7=0.0,
        pulse=PulseShape(duration=REFERENCE_PULSE),
    )
    return base.with_(**overrides)


@lru_cache(maxsize=None)
def reference_omega0(step: float = DEFAULT_STEP) -> float:
    """Ω0 that reproduces the single-cycle dark population 0.279."""
    return calibrate_rabi(reference_parameters(), step=step)


# ---------------------------------------------------------------------------
# calibration


def single_cycle_population(
    params: ModelParameters,
    pol: Polarization = Polarization.PLUS,
    readout: float = READOUT_DELAY,
    back_extrapolate: bool = False,
    step: float = DEFAULT_STEP,
) -> float:
    """Dark population ``readout`` ps after the start of one pump pulse.

    With ``back_extrapolate`` the excess over 1/4 is corrected for spin
    relaxation between the pulse end and the readout, i.e. multiplied by
    ``exp(4 xi (readout - pulse end))``.
    """
    if readout < params.pulse.end:
        raise ValueError("readout must come after the pulse")
    traj = propagate(
        ground_mixture(), *generators(params, pol), params.pulse, [readout], step=step, check=False
    )
    p = float(traj.population(dark_index(pol))[0])
    if back_extrapolate:
        p = EQUILIBRIUM_DARK + (p - EQUILIBRIUM_DARK) * math.exp(4 * params.xi * (readout - params.pulse.end))
    return p


class CalibrationError(ValueError):
    def __init__(self, target: float, achieved: float):
        super().__init__(f"target {target:.4g} unreachable; maximum achieved {achieved:.4g}")
        self.target = target
        self.achieved = achieved


def calibrate_rabi(
    params: ModelParameters,
    target_population: float = DEFAULT_TARGET_POPULATION,
    *,
    pol: Polarization = Polarization.PLUS,
    readout: float = READOUT_DELAY,
    back_extrapolate: bool = False,
    omega_start: float = 0.005,
    omega_max: float = 10.0,
    growth: float = 1.25,
    tol: float = 1e-10,
    step: float = DEFAULT_STEP,
) -> float:
    """Bisect Ω0 so that one pump cycle leaves ``target_population`` dark.

    The bracket is found by scanning Ω0 upward geometrically.  The dark
    population must rise monotonically along the scan; if it turns over
    (Rabi oscillation) or ``omega_max`` is hit first, the target counts
    as unreachable and :class:`CalibrationError` reports the best value.
    """
    if not 0.0 < target_population < 1.0:
        raise ValueError("target population must lie in (0, 1)")
    if target_population <= EQUILIBRIUM_DARK:
        if target_population == EQUILIBRIUM_DARK:
            return 0.0
        raise ValueError("pumping cannot lower the dark population below 1/4")

    def f(omega):
        return single_cycle_population(params.with_(omega0=omega), pol, readout, back_extrapolate, step)

    lo, f_lo = 0.0, f(0.0)
    hi = omega_start
    best = f_lo
    while True:
        f_hi = f(hi)
        if f_hi < f_lo - 1e-12:
            raise CalibrationError(target_population, best)
        best = max(best, f_hi)
        if f_hi >= target_population:
            break
        lo, f_lo = hi, f_hi
        if hi >= omega_max:
            raise CalibrationError(target_population, best)
        hi = min(hi * growth, omega_max)

    while hi - lo > tol * max(hi, 1.0):
        mid = 0.5 * (lo + hi)
        f_mid = f(mid)
        if not f_lo - 1e-12 <= f_mid <= f_hi + 1e-12:
            raise RuntimeError(f"dark population not monotone in omega0 near {mid:.6g}")
        if f_mid < target_population:
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
    return 0.5 * (lo + hi)


def relative_gain(population: float) -> float:
    return (population - EQUILIBRIUM_DARK) / EQUILIBRIUM_DARK


# ---------------------------------------------------------------------------
# continuous drive


@dataclass
class InitialisationReport:
    target_fidelity: float
    time_to_target: float | None
    saturation_level: float
    saturation_time: float
    saturated: bool
    times: np.ndarray = field(repr=False)
    dark_population: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "target_fidelity": self.target_fidelity,
            "time_to_target_ps": self.time_to_target,
            "saturation_level": self.saturation_level,
            "saturation_time_ps": self.saturation_time,
            "saturated": self.saturated,
        }


def first_crossing(times: np.ndarray, values: np.ndarray, target: float) -> float | None:
    """First upward crossing of ``target``, linearly interpolated."""
    above = np.nonzero(values >= target)[0]
    if above.size == 0:
        return None
    k = int(above[0])
    if k == 0:
        return float(times[0])
    t0, t1 = times[k - 1], times[k]
    v0, v1 = values[k - 1], values[k]
    return float(t0 + (target - v0) * (t1 - t0) / (v1 - v0))


def _sample_grid(duration: float, spacing: float = SAMPLE_SPACING) -> np.ndarray:
    n = int(math.floor(duration / spacing + 1e-9))
    grid = spacing * np.arange(n + 1)
    if duration - grid[-1] > 1e-9:
        grid = np.append(grid, duration)
    return grid


def _continuous(rho0, gen_on, samples, step, check):
    return propagate(rho0, gen_on, gen_on, PulseShape.off(), samples, step=step, check=check)


def simulate_initialisation(
    params: ModelParameters,
    pulse_duration: float,
    sample_times: Sequence[float] | None = None,
    *,
    pol: Polarization = Polarization.PLUS,
    target: float = 0.99,
    step: float = DEFAULT_STEP,
    check: bool = True,
) -> InitialisationReport:
    """Drive continuously for ``pulse_duration`` ps from equilibrium.

    The saturation level is the dark population at the end of the drive.
    """
    if not pulse_duration > 0:
        raise ValueError("pulse duration must be positive")
    samples = _sample_grid(pulse_duration) if sample_times is None else np.asarray(sample_times, float)
    if samples[-1] != pulse_duration:
        samples = np.append(samples[samples < pulse_duration], pulse_duration)
    gen_on, _ = generators(params, pol)
    traj = _continuous(ground_mixture(), gen_on, samples, step, check)
    dark = traj.population(dark_index(pol))
    level = float(dark[-1])
    crossing = first_crossing(samples, dark, target) if level >= target else None
    return InitialisationReport(target, crossing, level, float(pulse_duration), level < target, samples, dark)


def stationary_state(gen: np.ndarray, rtol: float = 1e-10) -> np.ndarray | None:
    """Unique trace-one fixed point of ``gen``, or None if it is not unique.

    Independent check on the long-time limit reached by propagation.
    """
    d2 = gen.shape[0]
    d = math.isqrt(d2)
    s = np.linalg.svd(gen, compute_uv=False)
    if s[-2] <= rtol * s[0]:
        return None
    trace_row = np.eye(d).reshape(1, -1)
    a = np.vstack([gen, trace_row])
    b = np.zeros(d2 + 1, dtype=complex)
    b[-1] = 1.0
    vec, *_ = np.linalg.lstsq(a, b, rcond=None)
    rho = vec.reshape(d, d)
    return 0.5 * (rho + rho.conj().T)


def _asymptote(rho0, gen_on, horizon, idx, step):
    """Drive-on population of ``idx`` after ``horizon`` ps."""
    traj = propagate(rho0, gen_on, gen_on, PulseShape.off(), [horizon], step=step, check=False)
    return float(np.real(traj.states[-1, idx, idx]))


def _time_to_target(rho0, gen_on, idx, target, horizon, step, check):
    """Dense 0.5 ps sampling in chunks until the target is crossed."""
    times, values = [0.0], [float(np.real(rho0[idx, idx]))]
    rho, t = rho0, 0.0
    while t < horizon:
        length = min(CHUNK, horizon - t)
        local = _sample_grid(length)[1:]
        traj = _continuous(rho, gen_on, local, step, check)
        pops = np.real(traj.states[:, idx, idx])
        times.extend(t + local)
        values.extend(pops)
        if pops.max() >= target:
            break
        rho, t = traj.states[-1], t + length
    times, values = np.asarray(times), np.asarray(values)
    return first_crossing(times, values, target), times, values


def _horizon(*lifetimes: float) -> float:
    return ASYMPTOTE_FACTOR * max(lifetimes)


def time_to_fidelity(
    params: ModelParameters,
    target: float = 0.99,
    *,
    pol: Polarization = Polarization.PLUS,
    step: float = DEFAULT_STEP,
    check: bool = False,
    max_time: float | None = None,
) -> InitialisationReport:
    """First time the dark population exceeds ``target`` under continuous drive.

    The drive-on asymptote is taken at ``20 * max(T_orb, T_spin)``; if it
    is below ``target`` the report is flagged saturated and carries no
    crossing time.  With ``T_spin = inf`` the search runs up to
    ``max_time`` (default 1e6 ps).
    """
    if not 0.0 < target < 1.0:
        raise ValueError("target must lie in (0, 1)")
    gen_on, _ = generators(params, pol)
    return _fidelity_report(
        ground_mixture(), gen_on, dark_index(pol), target, (params.t_orbital, params.t_spin), step, check, max_time
    )


def _fidelity_report(rho0, gen_on, idx, target, lifetimes, step, check, max_time):
    horizon = _horizon(*lifetimes)
    if not math.isfinite(horizon):
        horizon = 1e6 if max_time is None else max_time
    asymptote = _asymptote(rho0, gen_on, horizon, idx, step)
    if asymptote < target:
        return InitialisationReport(target, None, asymptote, horizon, True, np.array([0.0]), np.array([rho0[idx, idx].real]))
    search = horizon if max_time is None else min(horizon, max_time)
    crossing, times, values = _time_to_target(rho0, gen_on, idx, target, search, step, check)
    return InitialisationReport(target, crossing, asymptote, horizon, crossing is None, times, values)


# ---------------------------------------------------------------------------
# strained 4-level scheme

#: Full circular block strength |Q|^2 = 8 put on the one bright transition.
STRAINED_COUPLING = math.sqrt(8.0)
STRAINED_GROUND = 2
STRAINED_BRIGHT, STRAINED_DARK = 0, 1
STRAINED_EXCITED = 2


@dataclass(frozen=True)
class StrainedScheme:
    """Ground ±1/2 pair (0 bright, 1 dark) and excited ±1/2 pair (2, 3).

    Orbital decay goes equally to both ground states at ``1/(2 t_orbital)``
    per channel; spin mixing within the ground pair is ``1/(2 t_spin)``
    each way, so the population-imbalance lifetimes equal the stated ones.
    """

    t_orbital: float = 15.0
    t_spin: float = 4.9e9  # ps (4.9 ms)
    drive_scale: float = 1.0
    detuning: float = 0.0

    def __post_init__(self):
        if not self.t_orbital > 0 or not self.t_spin > 0:
            raise ValueError("lifetimes must be positive")
        if self.drive_scale < 0:
            raise ValueError("drive_scale must be >= 0")

    @property
    def d(self) -> int:
        return 4

    @property
    def eta(self) -> float:
        return 1.0 / (STRAINED_GROUND * self.t_orbital)

    @property
    def xi(self) -> float:
        return 0.0 if math.isinf(self.t_spin) else 1.0 / (STRAINED_GROUND * self.t_spin)

    def hamiltonian(self, omega0: float) -> np.ndarray:
        h = np.zeros((4, 4), dtype=complex)
        h[STRAINED_EXCITED, STRAINED_EXCITED] = self.detuning
        h[STRAINED_EXCITED, STRAINED_BRIGHT] = 0.5 * self.drive_scale * omega0 * STRAINED_COUPLING
        h[STRAINED_BRIGHT, STRAINED_EXCITED] = np.conj(h[STRAINED_EXCITED, STRAINED_BRIGHT])
        return h

    def generator(self, omega0: float) -> np.ndarray:
        return rate_liouvillian(self.hamiltonian(omega0), decay_transfers(self.eta, self.xi, 4))

    def dark_states(self, omega0: float = 1.0) -> int:
        """Number of ground states with no optical coupling."""
        h = self.hamiltonian(omega0)
        coupled = np.abs(h[2:, :2]).sum(axis=0) > 0
        return int(np.sum(~coupled))


def strained_prediction(
    scheme: StrainedScheme,
    omega0: float,
    target: float = 0.99,
    *,
    step: float = DEFAULT_STEP,
    check: bool = False,
    max_time: float | None = None,
) -> InitialisationReport:
    """Time for the strained dark state to pass ``target`` under continuous drive.

    ``omega0`` is the unstrained calibrated Rabi frequency; the strained
    transition is driven at ``scheme.drive_scale * omega0 * sqrt(8)``.
    """
    if not 0.0 < target < 1.0:
        raise ValueError("target must lie in (0, 1)")
    return _fidelity_report(
        ground_mixture(4),
        scheme.generator(omega0),
        STRAINED_DARK,
        target,
        (scheme.t_orbital, scheme.t_spin),
        step,
        check,
        max_time,
    )


def drive_scale_sensitivity(
    scheme: StrainedScheme,
    omega0: float,
    scales: Sequence[float] = (0.5, 1.0, 2.0),
    target: float = 0.99,
    step: float = DEFAULT_STEP,
) -> dict[float, float | None]:
    """Time to ``target`` for several strained drive-scale factors."""
    out = {}
    for s in scales:
        rep = strained_prediction(
            StrainedScheme(scheme.t_orbital, scheme.t_spin, s, scheme.detuning), omega0, target, step=step
        )
        out[float(s)] = rep.time_to_target
    return out

"""Pump-probe observables: relative transmission change and dichroism."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import (
    DEFAULT_STEP,
    GAMMA6,
    GAMMA7,
    GROUND,
    ModelParameters,
    Trajectory,
    evolve,
    ground_mixture,
)
from .selection_rules import Doublet, MixingParameters, Polarization, dipole_block


class ComboKind(enum.Enum):
    SCP = "SCP"
    OCP = "OCP"
    PCP = "PCP"


@dataclass(frozen=True)
class ProbeCombo:
    kind: ComboKind
    probe_polarization: Polarization = Polarization.PLUS

    def __post_init__(self):
        if not self.probe_polarization.is_circular:
            raise ValueError("probe must be circularly polarized")

    @property
    def pump_polarization(self) -> Polarization:
        if self.kind is ComboKind.SCP:
            return self.probe_polarization
        if self.kind is ComboKind.OCP:
            return self.probe_polarization.opposite()
        return Polarization.LINEAR_X

    @classmethod
    def parse(cls, kind: str, probe: str = "plus") -> "ProbeCombo":
        return cls(ComboKind(kind.upper()), Polarization(probe.lower()))


@dataclass
class PumpProbeTrace:
    combo: ProbeCombo
    delays: np.ndarray
    values: np.ndarray
    temperature: float = math.nan
    pump_energy: float = math.nan
    sigma: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.delays = np.asarray(self.delays, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.delays.shape != self.values.shape or self.delays.ndim != 1:
            raise ValueError("delays and values must be 1-D and equal length")
        if np.any(np.diff(self.delays) <= 0):
            raise ValueError("delays must be strictly increasing")
        if self.sigma is not None:
            self.sigma = np.asarray(self.sigma, dtype=float)
            if self.sigma.shape != self.delays.shape or np.any(self.sigma <= 0):
                raise ValueError("sigma must be positive and match delays")

    def __len__(self) -> int:
        return self.delays.size


def absorption_weights(probe: Polarization, mix: MixingParameters) -> np.ndarray:
    """|Q_eg/D0|^2 for the probe, shape (4 excited, 4 ground), Γ7 rows scaled."""
    return np.vstack(
        [
            np.abs(dipole_block(Doublet.GAMMA6, probe, mix).matrix) ** 2,
            np.abs(dipole_block(Doublet.GAMMA7, probe, mix).matrix) ** 2,
        ]
    )


def normalized_absorbance(
    populations: np.ndarray, probe: Polarization, mix: MixingParameters
) -> float | np.ndarray:
    """Sum over (g, e) of (N_g - N_e)|Q_eg/D0|^2.

    ``populations`` may be a single length-8 vector or an array of them
    along the first axis.
    """
    pops = np.asarray(populations, dtype=float)
    if pops.shape[-1] != 8:
        raise ValueError("populations must have 8 entries (canonical layout)")
    if np.any(pops.sum(axis=-1) > 1.0 + 1e-9):
        raise ValueError("populations sum to more than one")
    w = absorption_weights(probe, mix)
    ng = pops[..., GROUND]
    ne = np.concatenate([pops[..., GAMMA6], pops[..., GAMMA7]], axis=-1)
    # sum_eg (N_g - N_e) w_eg = sum_g N_g colsum_g - sum_e N_e rowsum_e
    result = ng @ w.sum(axis=0) - ne @ w.sum(axis=1)
    return float(result) if np.ndim(result) == 0 else result


def reference_absorbance(probe: Polarization, mix: MixingParameters) -> float:
    """Absorbance of the unpumped sample (ground states equally populated)."""
    return normalized_absorbance(np.diag(ground_mixture()).real, probe, mix)


def relative_transmission(a, a_ref: float, lam: float):
    """Δτ/τ = exp(-(Ã - Ã_ref) λ) - 1 (Beer-Lambert; τ0 cancels)."""
    if lam < 0:
        raise ValueError("optical depth must be >= 0")
    return np.expm1(-(np.asarray(a) - a_ref) * lam)


def trace_from_trajectory(
    traj: Trajectory, probe: Polarization, params: ModelParameters
) -> np.ndarray:
    mix = params.mix
    a = normalized_absorbance(traj.populations, probe, mix)
    return relative_transmission(a, reference_absorbance(probe, mix), params.lam)


def simulate_pump(
    params: ModelParameters,
    pump: Polarization,
    times: np.ndarray,
    step: float = DEFAULT_STEP,
    check: bool = True,
) -> Trajectory:
    """One trajectory from equilibrium, sampled at non-negative ``times``."""
    times = np.asarray(times, dtype=float)
    return evolve(ground_mixture(), params, pump, float(times[-1]), times, step=step, check=check)


def _box_points(delays: np.ndarray, width: float, n: int = 9) -> np.ndarray:
    offsets = np.linspace(-0.5 * width, 0.5 * width, n)
    return delays[:, None] + offsets[None, :]


def synthesize_trace(
    params: ModelParameters,
    combo: ProbeCombo,
    delays: Sequence[float],
    *,
    probe_duration: float | None = None,
    step: float = DEFAULT_STEP,
    check: bool = True,
    trajectory_cache: dict | None = None,
) -> PumpProbeTrace:
    """Model Δτ/τ for ``combo`` at each delay (delay 0 = pump pulse start).

    Negative delays give exactly zero.  With ``probe_duration`` the
    instantaneous signal is averaged over a box of that width centred on
    each delay.  ``trajectory_cache`` lets SCP and OCP share one pump
    trajectory when they have the same pump polarization.
    """
    delays = np.asarray(delays, dtype=float)
    if probe_duration:
        points = _box_points(delays, probe_duration)
    else:
        points = delays[:, None]
    flat = np.unique(points[points >= 0])
    values = np.zeros(points.shape)
    if flat.size:
        pump = combo.pump_polarization
        key = (pump, flat.tobytes())
        traj = trajectory_cache.get(key) if trajectory_cache is not None else None
        if traj is None:
            traj = simulate_pump(params, pump, flat, step=step, check=check)
            if trajectory_cache is not None:
                trajectory_cache[key] = traj
        signal = trace_from_trajectory(traj, combo.probe_polarization, params)
        idx = np.searchsorted(flat, points)
        mask = points >= 0
        values[mask] = signal[idx[mask]]
    return PumpProbeTrace(combo, delays, values.mean(axis=1))


def dichroism(scp: PumpProbeTrace, ocp: PumpProbeTrace) -> np.ndarray:
    """Circular dichroism SCP - OCP on a shared delay grid."""
    if scp.delays.shape != ocp.delays.shape or not np.array_equal(scp.delays, ocp.delays):
        raise ValueError("traces are on different delay grids")
    return scp.values - ocp.values

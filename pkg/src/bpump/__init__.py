"""Optical pumping of boron acceptor spins in silicon.

Selection rules, Lindblad dynamics, pump-probe observables, global fitting
and initialisation predictions for the acceptor ground quartet.
"""

from .dynamics import InvariantError, ModelParameters, PulseKind, PulseShape, Trajectory, evolve
from .estimation import (
    FitResult,
    TemperatureSeries,
    biexponential_fit,
    correct_temperature,
    fit_global,
    fit_ocp_lifetimes,
    fit_temperature_law,
    residual,
)
from .schemes import (
    InitialisationReport,
    StrainedScheme,
    calibrate_rabi,
    simulate_initialisation,
    strained_prediction,
    time_to_fidelity,
)
from .selection_rules import (
    Doublet,
    ExcitedLevel,
    MixingParameters,
    Polarization,
    bright_dark_overlap,
    build_cartesian_dipoles,
    dark_subspace,
    normalized_intensities,
)
from .signal import ComboKind, ProbeCombo, PumpProbeTrace, dichroism, synthesize_trace

__version__ = "0.1.0"

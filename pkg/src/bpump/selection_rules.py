"""Electric-dipole selection rules for the boron acceptor in silicon.

Transitions from the 1Γ8+ ground quartet to the 1Γ6- and 1Γ7- excited
doublets, for light propagating along <111> (taken as the quantisation
axis).  Matrices are in units of the orbital dipole integral D0; the Γ7
blocks carry the extra factor ``alpha = D0'/D0``.

Basis ordering, shared by every module in the package:

- ground columns:  mJ = +3/2, +1/2, -1/2, -3/2
- excited rows:    mJ = +1/2, -1/2

The Γ7 circular matrices carry the correction of a sign misprint in the
original group-theory tables.  Where the misprint sits (Qx or Qy) decides
the sign of the Γ7 element <Γ7,-1/2|Q-|+1/2>.  We take the sign for which
the Γ6 and Γ7 blocks obey the same time-reversal relation (mJ -> -mJ maps
Q+ onto Q-), so that linearly polarized light cannot orient the spins.
Circular-light physics (tables, dark states, ε± dynamics) does not depend
on this sign.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

GROUND_MJ = (1.5, 0.5, -0.5, -1.5)
EXCITED_MJ = (0.5, -0.5)

#: Splitting between the 1Γ6- and 1Γ7- doublets, 20 GHz, in rad/ps.
DOUBLET_SPLITTING = 2.0 * math.pi * 0.020

#: Ground-state mixing parameter derived from published g-factors.
DEFAULT_GAMMA = -0.0069

NULL_SPACE_RTOL = 1e-9

_SQ2 = math.sqrt(2.0)
_SQ3 = math.sqrt(3.0)


class Polarization(enum.Enum):
    PLUS = "plus"
    MINUS = "minus"
    LINEAR_X = "x"
    LINEAR_Y = "y"

    @property
    def is_circular(self) -> bool:
        return self in (Polarization.PLUS, Polarization.MINUS)

    def opposite(self) -> "Polarization":
        """Conjugate circular polarization (linear ones map to themselves)."""
        swap = {Polarization.PLUS: Polarization.MINUS, Polarization.MINUS: Polarization.PLUS}
        return swap.get(self, self)


class Doublet(enum.Enum):
    GAMMA6 = "g6"
    GAMMA7 = "g7"


@dataclass(frozen=True)
class ExcitedLevel:
    label: Doublet
    detuning: float = 0.0  # rad/ps, laser relative to this transition


@dataclass(frozen=True)
class MixingParameters:
    """Ground-state mixing ``gamma`` and the Γ7/Γ6 dipole ratio ``alpha``."""

    gamma: float = DEFAULT_GAMMA
    alpha: float = 1.0

    def __post_init__(self):
        if not math.isfinite(self.gamma):
            raise ValueError("gamma must be finite")
        if not math.isfinite(self.alpha) or self.alpha < 0:
            raise ValueError("alpha must be finite and non-negative")

    @property
    def q(self) -> float:
        return 1.0 / math.sqrt(1.0 + self.gamma**2)

    @property
    def beta(self) -> float:
        """g-factor combination that produces ``gamma`` (documentation only)."""
        if self.gamma == 0.0:
            return math.inf
        return (self.gamma**2 - 1.0) / (2.0 * _SQ2 * self.gamma)


def gamma_from_g_factors(g1: float, g2: float) -> float:
    """Mixing parameter from the isotropic (g1) and anisotropic (g2) g-factors."""
    beta = 3.0 * g1 / (2.0 * g2) + 23.0 / 8.0
    return _SQ2 * (beta - math.sqrt(beta**2 + 0.5))


@dataclass(frozen=True)
class DipoleBlock:
    excited: ExcitedLevel
    polarization: Polarization
    matrix: np.ndarray = field(repr=False)
    scale: float = 1.0  # 1 for Γ6, alpha for Γ7

    @property
    def total_strength(self) -> float:
        return 8.0 * self.scale**2


def _as_level(excited: ExcitedLevel | Doublet) -> ExcitedLevel:
    return excited if isinstance(excited, ExcitedLevel) else ExcitedLevel(excited)


def _circular_gamma7(g: float, q: float) -> tuple[np.ndarray, np.ndarray]:
    r = math.sqrt(2.0 / 3.0)
    big = r * (2 * _SQ2 + g) * q
    small = r * (2 * _SQ2 * g - 1) * q
    plus = np.array([[0, 0, 1j * _SQ2, 0], [-1j * big, 0, 0, small]], dtype=complex)
    # (2, 2) sign: time-reversal consistent choice, see module docstring
    minus = np.array([[1j * small, 0, 0, big], [0, _SQ2, 0, 0]], dtype=complex)
    return plus, minus


def build_cartesian_dipoles(
    excited: ExcitedLevel | Doublet, mix: MixingParameters
) -> tuple[DipoleBlock, DipoleBlock]:
    """Return the (Qx, Qy) coupling blocks for one excited doublet.

    Γ6 uses the tabulated Cartesian matrices directly.  For Γ7 only the
    sign-corrected circular matrices are known, so Qx and Qy are recovered
    from ``Q± = (Qx ± iQy)/√2``.
    """
    level = _as_level(excited)
    g, q = mix.gamma, mix.q
    if level.label is Doublet.GAMMA6:
        scale = 1.0
        qx = np.array(
            [[_SQ3 * q, 0, 1, 1j * _SQ3 * g * q], [-_SQ3 * g * q, 1j, 0, 1j * _SQ3 * q]],
            dtype=complex,
        )
        qy = np.array(
            [[1j * _SQ3 * q, 0, -1j, -_SQ3 * g * q], [1j * _SQ3 * g * q, -1, 0, _SQ3 * q]],
            dtype=complex,
        )
    else:
        scale = mix.alpha
        plus, minus = _circular_gamma7(g, q)
        qx = scale * (plus + minus) / _SQ2
        qy = scale * (plus - minus) / (1j * _SQ2)
    return (
        DipoleBlock(level, Polarization.LINEAR_X, qx, scale),
        DipoleBlock(level, Polarization.LINEAR_Y, qy, scale),
    )


def circular_from_cartesian(qx: DipoleBlock, qy: DipoleBlock, sign: int | str) -> DipoleBlock:
    """Combine Cartesian blocks into ``Q± = (Qx ± iQy)/√2``."""
    if qx.excited.label is not qy.excited.label:
        raise ValueError("qx and qy belong to different excited levels")
    if sign in (+1, "+", "plus", Polarization.PLUS):
        s, pol = 1.0, Polarization.PLUS
    elif sign in (-1, "-", "minus", Polarization.MINUS):
        s, pol = -1.0, Polarization.MINUS
    else:
        raise ValueError(f"sign must be + or -, got {sign!r}")
    matrix = (qx.matrix + s * 1j * qy.matrix) / _SQ2
    return DipoleBlock(qx.excited, pol, matrix, qx.scale)


def dipole_block(
    excited: ExcitedLevel | Doublet, polarization: Polarization, mix: MixingParameters
) -> DipoleBlock:
    """Coupling block of ``excited`` for any supported polarization."""
    qx, qy = build_cartesian_dipoles(excited, mix)
    if polarization is Polarization.LINEAR_X:
        return qx
    if polarization is Polarization.LINEAR_Y:
        return qy
    return circular_from_cartesian(qx, qy, polarization)


def normalized_intensities(block: DipoleBlock) -> np.ndarray:
    """|Q|^2 of every element divided by the block total ``8*scale**2``."""
    if block.scale == 0:
        return np.zeros(block.matrix.shape)
    return np.abs(block.matrix) ** 2 / block.total_strength


def dark_subspace(blocks: Sequence[DipoleBlock]) -> tuple[int, np.ndarray]:
    """Common null space of the stacked coupling matrix.

    Returns ``(dimension, basis)`` with ``basis`` of shape ``(dimension, 4)``;
    rows are orthonormal ground-state vectors.  Each basis vector is phased
    so that its largest component is real and positive.
    """
    if len(blocks) == 0:
        raise ValueError("dark_subspace needs at least one block")
    pols = {b.polarization for b in blocks}
    if len(pols) > 1:
        raise ValueError("blocks must share one polarization")
    stacked = np.vstack([b.matrix for b in blocks])
    _, s, vh = np.linalg.svd(stacked)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > NULL_SPACE_RTOL * smax)) if smax > 0 else 0
    basis = vh[rank:].conj()
    for k, v in enumerate(basis):
        j = int(np.argmax(np.abs(v)))
        basis[k] = v * (abs(v[j]) / v[j])
    return basis.shape[0], basis


def bright_dark_overlap(mix: MixingParameters) -> float:
    """|<Γ6 bright | Γ7 dark>| inside the mJ = ±3/2 subspace under ε+ light.

    The value is √8/3 for every gamma, which is why the two doublets share
    no dark superposition of the ±3/2 states.
    """
    if abs(mix.gamma) >= 1.0:
        raise ValueError("|gamma| must be < 1")
    cols = [0, 3]
    unit = MixingParameters(gamma=mix.gamma, alpha=1.0)
    vecs = []
    for label in (Doublet.GAMMA6, Doublet.GAMMA7):
        sub = dipole_block(label, Polarization.PLUS, unit).matrix[:, cols]
        _, _, vh = np.linalg.svd(sub)
        # sub has rank one: first right-singular vector is bright, second dark
        vecs.append((vh[0].conj(), vh[1].conj()))
    bright6 = vecs[0][0]
    dark7 = vecs[1][1]
    return float(abs(np.vdot(bright6, dark7)))


def mj_flip(vector: np.ndarray) -> np.ndarray:
    """Reverse mJ order of a ground 4-vector (or last axis of an array)."""
    return np.asarray(vector)[..., ::-1]

"""Lindblad dynamics of the 8-level (and strained 4-level) acceptor model.

Units: time in ps, angular frequencies and rates in rad/ps or 1/ps, hbar = 1.

Canonical 8-level layout: indices 0-3 ground (mJ +3/2, +1/2, -1/2, -3/2),
4-5 Γ6 (+1/2, -1/2), 6-7 Γ7 (+1/2, -1/2).  The Hamiltonian is written in
the frame rotating with the laser.

Integration is classical fixed-step RK4.  Within an interval where the
generator L is constant, one RK4 step of size h maps vec(rho) to
``T4(hL) vec(rho)`` with ``T4(X) = I + X + X^2/2 + X^3/6 + X^4/24``; the
stepper below applies exactly that map, cached as a matrix power over
whole intervals and computed separately on each set of density-matrix
elements that L couples.  Interval boundaries are the pulse edges and the sample
times, so no step straddles a switch of the drive.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .selection_rules import (
    DEFAULT_GAMMA,
    DOUBLET_SPLITTING,
    Doublet,
    MixingParameters,
    Polarization,
    dipole_block,
)

DEFAULT_STEP = 0.005  # ps

HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-9
POSITIVITY_TOL = 1e-8

N_GROUND = 4
DIM = 8
GROUND = slice(0, 4)
GAMMA6 = slice(4, 6)
GAMMA7 = slice(6, 8)

#: index permutation mJ -> -mJ on the canonical layout
MJ_FLIP = np.array([3, 2, 1, 0, 5, 4, 7, 6])


class InvariantError(RuntimeError):
    """A density matrix left the physical set during integration."""

    def __init__(self, time: float, message: str):
        super().__init__(f"t = {time:.6g} ps: {message}")
        self.time = time


class PulseKind(enum.Enum):
    SQUARE = "square"
    OFF = "off"


@dataclass(frozen=True)
class PulseShape:
    kind: PulseKind = PulseKind.SQUARE
    start: float = 0.0
    duration: float = 9.0

    def __post_init__(self):
        if self.kind is PulseKind.SQUARE and not self.duration > 0:
            raise ValueError("square pulse needs a positive duration")

    @property
    def end(self) -> float:
        return self.start + self.duration

    def is_on(self, t: float) -> bool:
        return self.kind is PulseKind.SQUARE and self.start <= t < self.end

    @classmethod
    def off(cls) -> "PulseShape":
        return cls(PulseKind.OFF, 0.0, 0.0)


@dataclass(frozen=True)
class ModelParameters:
    """Parameters of the optical pumping model.

    ``eta`` and ``xi`` are per-channel rates.  The transient decay rates seen
    in pump-probe data are ``4*eta`` (orbital) and ``4*xi`` (spin), hence
    ``t_orbital = 1/(4 eta)`` and ``t_spin = 1/(4 xi)``.
    """

    omega0: float = 0.0
    alpha: float = 1.0
    eta: float = 1.0 / (4 * 36.1)
    xi: float = 1.0 / (4 * 1136.0)
    delta6: float = 0.0
    delta7: float = DOUBLET_SPLITTING
    gamma: float = DEFAULT_GAMMA
    zeeman_shifts: tuple[float, ...] | None = None
    lam: float = 1.0
    pulse: PulseShape = field(default_factory=PulseShape)

    def __post_init__(self):
        for name in ("omega0", "alpha", "eta", "xi", "lam"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")
        if self.zeeman_shifts is not None:
            object.__setattr__(self, "zeeman_shifts", tuple(float(z) for z in self.zeeman_shifts))

    @classmethod
    def from_lifetimes(cls, t_orbital: float, t_spin: float, **kwargs) -> "ModelParameters":
        eta = 0.0 if math.isinf(t_orbital) else 1.0 / (N_GROUND * t_orbital)
        xi = 0.0 if math.isinf(t_spin) else 1.0 / (N_GROUND * t_spin)
        return cls(eta=eta, xi=xi, **kwargs)

    @property
    def t_orbital(self) -> float:
        return math.inf if self.eta == 0 else 1.0 / (N_GROUND * self.eta)

    @property
    def t_spin(self) -> float:
        return math.inf if self.xi == 0 else 1.0 / (N_GROUND * self.xi)

    @property
    def mix(self) -> MixingParameters:
        return MixingParameters(gamma=self.gamma, alpha=self.alpha)

    def with_(self, **changes) -> "ModelParameters":
        return replace(self, **changes)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n, d, d)

    @property
    def populations(self) -> np.ndarray:
        return np.real(np.diagonal(self.states, axis1=1, axis2=2))

    def population(self, index: int) -> np.ndarray:
        return np.real(self.states[:, index, index])


# ---------------------------------------------------------------------------
# operators


def drive_hamiltonian(omega0: float, mix: MixingParameters, pol: Polarization) -> np.ndarray:
    """Optical coupling part H_o of the 8-level Hamiltonian (pulse on)."""
    h = np.zeros((DIM, DIM), dtype=complex)
    h[GAMMA6, GROUND] = 0.5 * omega0 * dipole_block(Doublet.GAMMA6, pol, mix).matrix
    h[GAMMA7, GROUND] = 0.5 * omega0 * dipole_block(Doublet.GAMMA7, pol, mix).matrix
    return h + h.conj().T


def static_hamiltonian(params: ModelParameters) -> np.ndarray:
    """Detuning and Zeeman terms (H_d + H_B)."""
    diag = np.zeros(DIM)
    diag[GAMMA6] = params.delta6
    diag[GAMMA7] = params.delta7
    if params.zeeman_shifts is not None:
        if len(params.zeeman_shifts) != DIM:
            raise ValueError(f"zeeman_shifts must have {DIM} entries")
        diag = diag + np.asarray(params.zeeman_shifts)
    return np.diag(diag).astype(complex)


def build_hamiltonian(params: ModelParameters, pol: Polarization, t: float) -> np.ndarray:
    h = static_hamiltonian(params)
    if params.pulse.is_on(t):
        h = h + drive_hamiltonian(params.omega0, params.mix, pol)
    return h


def _level_groups(d: int) -> tuple[range, range]:
    if d == 8:
        return range(0, 4), range(4, 8)
    if d == 4:
        return range(0, 2), range(2, 4)
    raise ValueError(f"unsupported dimension {d}; expected 4 or 8")


def build_jump_operators(params: ModelParameters, d: int = DIM) -> list[np.ndarray]:
    """Orbital decay ops sqrt(eta)|g><e| then spin mixing ops sqrt(xi)|g'><g|."""
    ground, excited = _level_groups(d)
    ops = []
    for e in excited:
        for g in ground:
            c = np.zeros((d, d), dtype=complex)
            c[g, e] = math.sqrt(params.eta)
            ops.append(c)
    for g in ground:
        for g2 in ground:
            if g != g2:
                c = np.zeros((d, d), dtype=complex)
                c[g2, g] = math.sqrt(params.xi)
                ops.append(c)
    return ops


def lindblad_rhs(rho: np.ndarray, h: np.ndarray, jumps: Sequence[np.ndarray]) -> np.ndarray:
    """-i[H, rho] + sum_k (c rho c^+ - {c^+ c, rho}/2)."""
    if rho.shape != h.shape:
        raise ValueError("rho and H shapes differ")
    out = -1j * (h @ rho - rho @ h)
    for c in jumps:
        cd = c.conj().T
        cdc = cd @ c
        out += c @ rho @ cd - 0.5 * (cdc @ rho + rho @ cdc)
    return out


def liouvillian(h: np.ndarray, jumps: Sequence[np.ndarray]) -> np.ndarray:
    """Superoperator acting on row-major vec(rho)."""
    d = h.shape[0]
    eye = np.eye(d)
    lv = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for c in jumps:
        cdc = c.conj().T @ c
        lv += np.kron(c, c.conj()) - 0.5 * (np.kron(cdc, eye) + np.kron(eye, cdc.T))
    return lv


def rate_liouvillian(
    h: np.ndarray, transfers: Sequence[tuple[int, int, float]]
) -> np.ndarray:
    """Liouvillian for single-element jumps ``sqrt(rate)|final><initial|``.

    Equivalent to :func:`liouvillian` for such operators but assembled
    directly, which matters inside fitting loops.
    """
    d = h.shape[0]
    eye = np.eye(d)
    lv = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    outflow = np.zeros(d)
    for initial, final, rate in transfers:
        if rate == 0.0:
            continue
        outflow[initial] += rate
        lv[final * d + final, initial * d + initial] += rate
    lv[np.diag_indices(d * d)] -= 0.5 * (outflow[:, None] + outflow[None, :]).ravel()
    return lv


def decay_transfers(eta: float, xi: float, d: int = DIM) -> list[tuple[int, int, float]]:
    ground, excited = _level_groups(d)
    transfers = [(e, g, eta) for e in excited for g in ground]
    transfers += [(g, g2, xi) for g in ground for g2 in ground if g != g2]
    return transfers


# ---------------------------------------------------------------------------
# integration


def rk4_step(f: Callable[[float, np.ndarray], np.ndarray], t: float, y: np.ndarray, h: float):
    """One classical RK4 step (explicit form; reference implementation)."""
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def rk4_step_increment(lv: np.ndarray, h: float) -> np.ndarray:
    """``T4(hL) - I`` for one RK4 step of ``y' = L y``.

    Kept separate from the identity so that repeated squaring does not
    round away the small off-identity part.
    """
    x = h * lv
    eye = np.eye(lv.shape[0], dtype=complex)
    return x @ (eye + x @ (eye + x @ (eye + x / 4.0) / 3.0) / 2.0)


def rk4_step_matrix(lv: np.ndarray, h: float) -> np.ndarray:
    """Matrix of one RK4 step for the autonomous linear system y' = L y."""
    return np.eye(lv.shape[0], dtype=complex) + rk4_step_increment(lv, h)


def increment_power(y: np.ndarray, n: int) -> np.ndarray:
    """``(I + y)^n - I`` by binary powering in increment form."""
    if n < 1:
        raise ValueError("n must be >= 1")
    result = None
    base = y
    while True:
        if n & 1:
            result = base if result is None else result + base + result @ base
        n >>= 1
        if not n:
            return result
        base = 2.0 * base + base @ base


def _components(gen: np.ndarray) -> list[np.ndarray]:
    """Index sets of the connected components of the generator's sparsity graph."""
    n, labels = connected_components(csr_matrix(gen != 0), directed=False)
    return [np.flatnonzero(labels == c) for c in range(n)]


CHUNK_STEPS = 64  # successive states produced per batched product


def _power_stack(y: np.ndarray, count: int) -> np.ndarray:
    """``(I + y)^j`` for ``j = 1 .. count``, stacked along axis 0.

    Plain products keep small, strongly decayed components accurate to
    relative precision.
    """
    out = np.empty((count,) + y.shape, dtype=complex)
    out[0] = np.eye(y.shape[0]) + y
    for j in range(1, count):
        out[j] = out[j - 1] @ out[0]
    return out


class Increment:
    """Block-diagonal ``M - I`` for one interval.

    Isolated elements are kept as a vector and coupled components as one
    matrix (a single block, or several assembled densely).  Runs of
    identical steps are advanced a chunk at a time from precomputed powers.
    """

    def __init__(self, d2: int, blocks: list[np.ndarray], subs: list[np.ndarray], single: np.ndarray, diag: np.ndarray):
        self.single = single
        self.diag = diag
        self.block = self.sub = None
        if len(blocks) == 1:
            self.block, self.sub = blocks[0], subs[0]
        elif blocks:
            self.block = np.concatenate(blocks)
            self.sub = np.zeros((self.block.size, self.block.size), dtype=complex)
            offset = 0
            for b, sub in zip(blocks, subs):
                self.sub[offset : offset + b.size, offset : offset + b.size] = sub
                offset += b.size
        self._stack = None
        self._diag_stack = None

    def _stacks(self, count: int):
        if self._diag_stack is None or self._diag_stack.shape[0] < count:
            self._diag_stack = np.cumprod(np.broadcast_to(1.0 + self.diag, (count, self.diag.size)), axis=0)
            self._stack = None if self.sub is None else _power_stack(self.sub, count)
        return self._stack, self._diag_stack

    def run(self, vec: np.ndarray, out: np.ndarray) -> np.ndarray:
        """Apply ``len(out)`` successive steps, storing every state in ``out``."""
        m = out.shape[0]
        if m < CHUNK_STEPS and self.sub is not None:
            # short run: stepping is cheaper than building powers
            _, diag_stack = self._stacks(1)
            for k in range(m):
                vec = vec.copy()
                vec[self.single] *= diag_stack[0]
                vec[self.block] += self.sub @ vec[self.block]
                out[k] = vec
            return vec
        stack, diag_stack = self._stacks(min(m, CHUNK_STEPS))
        vs = vec[self.single]
        vb = None if self.block is None else vec[self.block]
        for pos in range(0, m, CHUNK_STEPS):
            c = min(CHUNK_STEPS, m - pos)
            out[pos : pos + c, self.single] = diag_stack[:c] * vs
            vs = out[pos + c - 1, self.single]
            if vb is not None:
                chunk = stack[:c] @ vb
                out[pos : pos + c, self.block] = chunk
                vb = chunk[-1]
        return out[-1].copy()


def _diag_increment_power(y: np.ndarray, n: int) -> np.ndarray:
    """Elementwise ``(1 + y)^n - 1``."""
    return np.expm1(n * np.log1p(y))


class Propagator:
    """Piecewise-constant RK4 propagation between arbitrary breakpoints.

    ``interval`` returns the increment ``M - I`` of the propagator ``M``
    over a given length, computed block by block on the generator's
    decoupled components.
    """

    def __init__(self, generators: dict[str, np.ndarray], step: float):
        if not step > 0:
            raise ValueError("step must be positive")
        self.generators = generators
        self.step = step
        self._parts = {key: _components(g) for key, g in generators.items()}
        self._cache: dict[tuple[str, int, float], Increment] = {}

    def interval(self, key: str, length: float) -> Increment:
        n = max(1, math.ceil(length / self.step - 1e-9))
        ck = (key, n, round(length, 12))
        inc = self._cache.get(ck)
        if inc is None:
            inc = self._build(key, length / n, n)
            self._cache[ck] = inc
        return inc

    def _build(self, key: str, h: float, n: int) -> Increment:
        gen = self.generators[key]
        parts = self._parts[key]
        blocks = [p for p in parts if p.size > 1]
        single = np.array([p[0] for p in parts if p.size == 1], dtype=int)
        z = h * gen[single, single]
        diag = _diag_increment_power(z * (1 + z / 2 * (1 + z / 3 * (1 + z / 4))), n)
        subs = [increment_power(rk4_step_increment(gen[np.ix_(b, b)], h), n) for b in blocks]
        return Increment(gen.shape[0], blocks, subs, single, diag)


def check_state(rho: np.ndarray, t: float, positivity: bool = True) -> None:
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > HERMITICITY_TOL:
        raise InvariantError(t, f"rho not Hermitian (max deviation {herm:.3g})")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > TRACE_TOL:
        raise InvariantError(t, f"trace drifted to {tr:.12f}")
    if positivity:
        lam = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]
        if lam < -POSITIVITY_TOL:
            raise InvariantError(t, f"negative eigenvalue {lam:.3g}")


def propagate(
    rho0: np.ndarray,
    generator_on: np.ndarray,
    generator_off: np.ndarray,
    pulse: PulseShape,
    sample_times: Sequence[float],
    step: float = DEFAULT_STEP,
    check: bool = True,
) -> Trajectory:
    """Integrate from t = 0 and return states at ``sample_times``.

    Shared engine for the canonical and the strained level schemes.
    """
    samples = np.asarray(sample_times, dtype=float)
    if samples.ndim != 1 or samples.size == 0:
        raise ValueError("sample_times must be a non-empty 1-D sequence")
    if np.any(np.diff(samples) <= 0):
        raise ValueError("sample_times must be strictly increasing")
    if samples[0] < 0:
        raise ValueError("sample_times must be >= 0")
    if pulse.kind is PulseKind.SQUARE and step > pulse.duration:
        raise ValueError(f"step {step} ps exceeds pulse duration {pulse.duration} ps")
    d = rho0.shape[0]
    prop = Propagator({"on": generator_on, "off": generator_off}, step)

    edges = {0.0}
    if pulse.kind is PulseKind.SQUARE:
        edges.update(t for t in (pulse.start, pulse.end) if 0.0 < t < samples[-1])
    points = np.union1d(samples, np.fromiter(edges, float))

    # classify intervals once; lengths equal to 1e-9 ps share one increment
    lengths = np.diff(points, prepend=0.0)
    mids = points - 0.5 * lengths
    on = (pulse.kind is PulseKind.SQUARE) & (mids >= pulse.start) & (mids < pulse.end)
    keys, inverse = np.unique(np.round(lengths, 9) + 1j * on, return_inverse=True)
    incs = [None if k.real <= 0 else prop.interval("on" if k.imag else "off", k.real) for k in keys]
    stored = np.searchsorted(points, samples)

    vec = np.asarray(rho0, dtype=complex).reshape(-1).copy()
    states = np.empty((points.size, d * d), dtype=complex)
    codes = inverse.ravel()
    cuts = np.concatenate([[0], np.flatnonzero(np.diff(codes)) + 1, [codes.size]])
    for a, b in zip(cuts[:-1], cuts[1:]):
        inc = incs[codes[a]]
        if inc is None:
            states[a:b] = vec
        else:
            vec = inc.run(vec, states[a:b])
    vecs = states[stored]
    out = vecs.reshape(samples.size, d, d)
    if check:
        for t, rho in zip(samples, out):
            check_state(rho, t)
    return Trajectory(samples, out)


def ground_mixture(d: int = DIM) -> np.ndarray:
    """Thermal equilibrium at B = 0: ground states equally populated."""
    ground, _ = _level_groups(d)
    rho = np.zeros((d, d), dtype=complex)
    for g in ground:
        rho[g, g] = 1.0 / len(ground)
    return rho


def generators(params: ModelParameters, pol: Polarization) -> tuple[np.ndarray, np.ndarray]:
    """(drive on, drive off) Liouvillians of the canonical model."""
    h0 = static_hamiltonian(params)
    transfers = decay_transfers(params.eta, params.xi)
    off = rate_liouvillian(h0, transfers)
    if params.omega0 == 0.0:
        return off, off
    on = rate_liouvillian(h0 + drive_hamiltonian(params.omega0, params.mix, pol), transfers)
    return on, off


def evolve(
    rho0: np.ndarray,
    params: ModelParameters,
    pol: Polarization,
    t_end: float,
    sample_times: Sequence[float] | None = None,
    step: float = DEFAULT_STEP,
    check: bool = True,
) -> Trajectory:
    """Evolve the 8-level density matrix under ``params.pulse``.

    ``sample_times`` defaults to ``[t_end]``; all must lie in ``[0, t_end]``.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (DIM, DIM):
        raise ValueError(f"rho0 must be {DIM}x{DIM}")
    if check:
        check_state(rho0, 0.0)
    samples = np.array([t_end] if sample_times is None else sample_times, dtype=float)
    if samples.size and (samples[-1] > t_end + 1e-12):
        raise ValueError("sample_times must not exceed t_end")
    on, off = generators(params, pol)
    return propagate(rho0, on, off, params.pulse, samples, step=step, check=check)

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bpump.selection_rules import (
    DEFAULT_GAMMA,
    Doublet,
    ExcitedLevel,
    MixingParameters,
    Polarization,
    bright_dark_overlap,
    build_cartesian_dipoles,
    circular_from_cartesian,
    dark_subspace,
    dipole_block,
    gamma_from_g_factors,
    mj_flip,
    normalized_intensities,
)

gammas = st.floats(-0.5, 0.5, allow_nan=False)
alphas = st.floats(0.01, 3.0)

F = Fraction
# |Q+|^2 and |Q-|^2 tables at gamma = 0, rows (+1/2, -1/2), cols (+3/2 .. -3/2)
TABLES = {
    (Doublet.GAMMA6, Polarization.PLUS): [[0, 0, F(1, 4), 0], [0, 0, 0, F(3, 4)]],
    (Doublet.GAMMA7, Polarization.PLUS): [[0, 0, F(1, 4), 0], [F(2, 3), 0, 0, F(1, 12)]],
    (Doublet.GAMMA6, Polarization.MINUS): [[F(3, 4), 0, 0, 0], [0, F(1, 4), 0, 0]],
    (Doublet.GAMMA7, Polarization.MINUS): [[F(1, 12), 0, 0, F(2, 3)], [0, F(1, 4), 0, 0]],
}


def printed_gamma6(gamma):
    """Circular Γ6 matrices as tabulated (independent of the Cartesian route)."""
    q = 1 / math.sqrt(1 + gamma**2)
    s2, s6 = math.sqrt(2), math.sqrt(6)
    plus = np.array([[0, 0, s2, 0], [-s6 * gamma * q, 0, 0, 1j * s6 * q]])
    minus = np.array([[s6 * q, 0, 0, 1j * s6 * gamma * q], [0, 1j * s2, 0, 0]])
    return plus, minus


@pytest.mark.parametrize("key", list(TABLES))
def test_tables_at_zero_gamma(key):
    level, pol = key
    got = normalized_intensities(dipole_block(level, pol, MixingParameters(0.0, 1.0)))
    want = np.array(TABLES[key], dtype=float)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_gamma6_cartesian_route_matches_tabulated_circular():
    for g in (0.0, DEFAULT_GAMMA, 0.3):
        plus, minus = printed_gamma6(g)
        mix = MixingParameters(g, 1.0)
        np.testing.assert_allclose(dipole_block(Doublet.GAMMA6, Polarization.PLUS, mix).matrix, plus, atol=1e-14)
        np.testing.assert_allclose(dipole_block(Doublet.GAMMA6, Polarization.MINUS, mix).matrix, minus, atol=1e-14)


def test_small_entry_at_default_gamma():
    mix = MixingParameters(DEFAULT_GAMMA, 1.0)
    t = normalized_intensities(dipole_block(Doublet.GAMMA6, Polarization.PLUS, mix))
    q2 = 1 / (1 + DEFAULT_GAMMA**2)
    assert t[1, 0] == pytest.approx(6 * DEFAULT_GAMMA**2 * q2 / 8, rel=1e-12)
    assert t[1, 0] == pytest.approx(3.57e-5, rel=1e-2)


def test_gamma7_element_values():
    g = DEFAULT_GAMMA
    mix = MixingParameters(g, 1.0)
    q2 = 1 / (1 + g**2)
    plus = dipole_block(Doublet.GAMMA7, Polarization.PLUS, mix).matrix
    big = (2 / 3) * (2 * math.sqrt(2) + g) ** 2 * q2
    assert abs(plus[1, 0]) ** 2 == pytest.approx(big, rel=1e-12)
    assert big == pytest.approx(5.307, abs=1e-3)
    # Q+ and Q- have disjoint support, so |Qx|^2 = |Q+|^2 / 2 there
    qx, _ = build_cartesian_dipoles(Doublet.GAMMA7, mix)
    assert abs(qx.matrix[1, 0]) ** 2 == pytest.approx(big / 2, rel=1e-12)
    small = (2 / 3) * (2 * math.sqrt(2) * g - 1) ** 2 * q2
    assert abs(plus[1, 3]) ** 2 == pytest.approx(small, rel=1e-12)
    assert small == pytest.approx(0.69291, abs=1e-5)


@settings(max_examples=50, deadline=None)
@given(gammas, alphas)
def test_block_totals(gamma, alpha):
    mix = MixingParameters(gamma, alpha)
    for level in Doublet:
        for pol in Polarization:
            block = dipole_block(level, pol, mix)
            assert np.sum(np.abs(block.matrix) ** 2) == pytest.approx(block.total_strength, rel=1e-12)
            assert normalized_intensities(block).sum() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(gammas)
def test_circular_cartesian_inverse(gamma):
    mix = MixingParameters(gamma, 1.0)
    for level in Doublet:
        qx, qy = build_cartesian_dipoles(level, mix)
        p = circular_from_cartesian(qx, qy, "+").matrix
        m = circular_from_cartesian(qx, qy, "-").matrix
        np.testing.assert_allclose((p + m) / math.sqrt(2), qx.matrix, atol=1e-13)
        np.testing.assert_allclose((p - m) / (1j * math.sqrt(2)), qy.matrix, atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(gammas)
def test_time_reversal_relation_same_for_both_doublets(gamma):
    """|Q+| maps onto |Q-| under mJ -> -mJ for Γ6 and Γ7 alike."""
    mix = MixingParameters(gamma, 1.0)
    for level in Doublet:
        p = np.abs(dipole_block(level, Polarization.PLUS, mix).matrix)
        m = np.abs(dipole_block(level, Polarization.MINUS, mix).matrix)
        np.testing.assert_allclose(p[::-1, ::-1], m, atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.1, 0.1))
def test_dark_subspace_dimensions_and_identity(gamma):
    mix = MixingParameters(gamma, 0.7)
    for pol, idx in ((Polarization.PLUS, 1), (Polarization.MINUS, 2)):
        b6 = dipole_block(Doublet.GAMMA6, pol, mix)
        b7 = dipole_block(Doublet.GAMMA7, pol, mix)
        assert dark_subspace([b6])[0] == 2
        assert dark_subspace([b7])[0] == 2
        dim, basis = dark_subspace([b6, b7])
        assert dim == 1
        want = np.zeros(4)
        want[idx] = 1.0
        np.testing.assert_allclose(basis[0], want, atol=1e-12)
        for b in (b6, b7):
            assert np.max(np.abs(b.matrix @ basis[0])) < 1e-12


@pytest.mark.parametrize("gamma", [0.0, DEFAULT_GAMMA, 0.05, -0.08])
def test_dark_superpositions_match_closed_form(gamma):
    q = 1 / math.sqrt(1 + gamma**2)
    s8 = math.sqrt(8)
    expected = {
        Doublet.GAMMA6: q * np.array([1, -1j * gamma]),
        Doublet.GAMMA7: (q / 3) * np.array([1 - s8 * gamma, -1j * (s8 + gamma)]),
    }
    for level, pair in expected.items():
        want = np.zeros(4, dtype=complex)
        want[[0, 3]] = pair
        assert np.linalg.norm(want) == pytest.approx(1.0, abs=1e-12)
        _, basis = dark_subspace([dipole_block(level, Polarization.PLUS, MixingParameters(gamma, 1.0))])
        projector = basis.T @ basis.conj()
        np.testing.assert_allclose(projector @ want, want, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.1, 0.1))
def test_bright_dark_overlap_is_constant(gamma):
    assert bright_dark_overlap(MixingParameters(gamma, 1.0)) == pytest.approx(math.sqrt(8) / 3, abs=1e-10)


def test_dark_subspace_of_linear_union():
    mix = MixingParameters(DEFAULT_GAMMA, 1.0)
    blocks = [dipole_block(lv, Polarization.LINEAR_X, mix) for lv in Doublet]
    dim, _ = dark_subspace(blocks)
    assert dim == 0


def test_dark_subspace_errors():
    mix = MixingParameters()
    with pytest.raises(ValueError):
        dark_subspace([])
    with pytest.raises(ValueError):
        dark_subspace([dipole_block(Doublet.GAMMA6, Polarization.PLUS, mix), dipole_block(Doublet.GAMMA7, Polarization.MINUS, mix)])


def test_zero_alpha_gamma7_is_fully_dark():
    block = dipole_block(Doublet.GAMMA7, Polarization.PLUS, MixingParameters(0.0, 0.0))
    assert dark_subspace([block])[0] == 4
    assert np.all(normalized_intensities(block) == 0)


def test_circular_from_cartesian_rejects_mixed_levels():
    mix = MixingParameters()
    qx6, _ = build_cartesian_dipoles(Doublet.GAMMA6, mix)
    _, qy7 = build_cartesian_dipoles(ExcitedLevel(Doublet.GAMMA7), mix)
    with pytest.raises(ValueError):
        circular_from_cartesian(qx6, qy7, "+")
    with pytest.raises(ValueError):
        circular_from_cartesian(qx6, qx6, 0)


def test_gamma_from_g_factors_inverts_beta():
    for g in (-0.0069, -0.05, -0.3):  # the formula picks the negative root
        beta = MixingParameters(g, 1.0).beta
        # any (g1, g2) pair with 3 g1 / (2 g2) + 23/8 = beta
        g2 = 1.0
        g1 = (beta - 23 / 8) * 2 * g2 / 3
        assert gamma_from_g_factors(g1, g2) == pytest.approx(g, rel=1e-9, abs=1e-12)


def test_mj_flip():
    np.testing.assert_array_equal(mj_flip(np.arange(4)), [3, 2, 1, 0])


def test_invalid_mixing():
    with pytest.raises(ValueError):
        MixingParameters(alpha=-1.0)
    with pytest.raises(ValueError):
        MixingParameters(gamma=math.nan)

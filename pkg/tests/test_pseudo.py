import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from paultrap.core import (DomainError, SearchError, UnstableEquilibriumError, ValidationError,
                           species)
from paultrap.pseudo import (ModeSolution, PseudoModel, QuadraticStatic, QuadrupoleTrapModel,
                             RfDrive, UniformStatic, cooling_geometry_check, find_equilibrium,
                             find_rf_null, five_wire_depth, five_wire_frequency,
                             five_wire_saddle_height, four_wire_depth, four_wire_frequency,
                             four_wire_saddle_height, guess_null, intrinsic_axes, pseudopotential_at,
                             quadrupole_radial_frequency, secular_modes, trap_depth)
from paultrap.surface_fields import five_wire, four_wire, segmented_five_wire

MG = species("24Mg+")
D = 40e-6
U = 103.2
OMEGA = 2 * math.pi * 87e6


def model(geom, amp=U, omega=OMEGA, sp=MG, **kw):
    return PseudoModel(geom, RfDrive(amp, omega), sp, **kw)


@pytest.fixture(scope="module")
def fw():
    m = model(four_wire(D))
    return m, find_rf_null(m, [0.3 * D, 0.7 * D])


@pytest.fixture(scope="module")
def vw():
    m = model(five_wire(D))
    return m, find_rf_null(m, guess_null(m))


def test_four_wire_null(fw):
    _, null = fw
    assert null[0] == pytest.approx(0.0, abs=1e-6 * D)
    assert null[1] == pytest.approx(D, rel=1e-9)


def test_five_wire_null(vw):
    _, null = vw
    assert null[1] == pytest.approx(math.sqrt(3) * D / 2, rel=1e-9)
    assert abs(null[0]) < 1e-12 * D


@given(st.floats(-5e-4, 5e-4))
def test_null_translates_with_geometry(dx):
    m = model(four_wire(D))
    base = find_rf_null(m, [0.3 * D, 0.7 * D])
    moved = find_rf_null(m.translated(dx), [0.3 * D + dx, 0.7 * D])
    assert moved[0] - dx == pytest.approx(base[0], abs=1e-9 * D)
    assert moved[1] == pytest.approx(base[1], rel=1e-9)


def test_null_search_reports_best_iterate():
    m = model(four_wire(D))
    with pytest.raises(SearchError) as info:
        find_rf_null(m, [0.3 * D, 0.7 * D], max_iter=1)
    assert info.value.best is not None


def test_guess_null_finds_segmented_null():
    g = segmented_five_wire(100e-6)
    m = model(g, 100.0, 2 * math.pi * 100e6)
    null = find_rf_null(m, guess_null(m))
    assert null[1] == pytest.approx(math.sqrt(3) * 100e-6 / 2, rel=1e-6)


def test_pseudopotential_domain():
    m = model(four_wire(D))
    with pytest.raises(DomainError):
        pseudopotential_at(m, [0.0, 0.0])
    with pytest.raises(DomainError):
        pseudopotential_at(m, [0.0, -D])


@given(st.floats(-3, 3), st.floats(0.05, 4))
def test_pseudopotential_nonnegative(x, y):
    assert pseudopotential_at(model(five_wire(D)), [x * D, y * D]) >= 0.0


def test_pseudopotential_scaling_laws():
    p = [0.2 * D, 0.7 * D]
    base = pseudopotential_at(model(four_wire(D)), p)
    assert pseudopotential_at(model(four_wire(D), amp=2 * U), p) == pytest.approx(4 * base, rel=1e-13)
    assert pseudopotential_at(model(four_wire(D), omega=2 * OMEGA), p) == pytest.approx(base / 4, rel=1e-13)
    heavy = species(mass_u=48.0)
    assert pseudopotential_at(model(four_wire(D), sp=heavy), p) == pytest.approx(base / 2, rel=1e-13)


def test_four_wire_modes(fw):
    m, null = fw
    modes = secular_modes(m, null)
    assert modes.has_degeneracy
    assert np.allclose(modes.frequencies_hz, 16.9e6, rtol=0.01)
    assert modes.frequencies[0] == pytest.approx(four_wire_frequency(MG, U, OMEGA, D), rel=1e-6)


def test_axes_orthonormal_and_hessian_psd(vw):
    m, null = vw
    modes = secular_modes(m, null)
    a = modes.axes[:, :2]
    assert np.allclose(a @ a.T, np.eye(2), atol=1e-12)
    assert np.all(np.linalg.eigvalsh(modes.hessian[:2, :2]) >= -1e-12 * np.abs(modes.hessian).max())


@pytest.mark.parametrize("eps", [1e6, 1e5, 1e4])
def test_static_quadrupole_splits_pair(fw, eps):
    m, null = fw
    base = secular_modes(m, null)
    quad = QuadraticStatic(np.diag([eps, -eps]), center=null)
    split = secular_modes(m, null, static_potential=quad)
    # direct re-diagonalisation of the perturbed Hessian
    h = base.hessian[:2, :2] + MG.charge * np.diag([eps, -eps])
    expect = np.sqrt(np.linalg.eigvalsh(h) / MG.mass)
    assert split.frequencies == pytest.approx(expect, rel=1e-12)
    # symmetric to first order; second-order asymmetry a^2 / (4 w0^3) plus the residual base splitting
    w0 = base.frequencies.mean()
    a = eps * MG.charge / MG.mass
    lo, hi = split.frequencies
    assert (hi - w0) == pytest.approx(w0 - lo, abs=a * a / (2 * w0 ** 3) + base.splitting)


def test_splitting_vanishes_with_perturbation(fw):
    m, null = fw
    vals = [secular_modes(m, null, QuadraticStatic(np.diag([e, -e]), center=null)).splitting
            for e in (1e6, 1e4, 1e2)]
    assert vals[0] > vals[1] > vals[2]
    assert vals[2] < 1e-3 * vals[0]


def test_unstable_equilibrium_reported(fw):
    m, null = fw
    w2 = secular_modes(m, null).hessian[0, 0]
    strong = QuadraticStatic(np.diag([-2 * w2 / MG.charge, 2 * w2 / MG.charge]), center=null)
    with pytest.raises(UnstableEquilibriumError) as info:
        secular_modes(m, null, static_potential=strong)
    assert abs(info.value.direction[0]) == pytest.approx(1.0)


def test_quadrupole_formula():
    w = quadrupole_radial_frequency(QuadrupoleTrapModel(50e-6, 50.0, 2 * math.pi * 100e6, MG))
    assert w / (2 * math.pi) == pytest.approx(14e6, rel=0.03)
    # sqrt(2) q V0 / (2 m Omega R^2) written out
    direct = MG.charge * 50.0 / (math.sqrt(2) * MG.mass * 2 * math.pi * 100e6 * (50e-6) ** 2)
    assert w == pytest.approx(direct, rel=1e-12)


def test_four_wire_depth(fw):
    m, null = fw
    res = trap_depth(m, null)
    assert res.saddle[1] == pytest.approx(D * math.sqrt(2 + math.sqrt(5)), rel=1e-6)
    assert res.depth == pytest.approx(four_wire_depth(MG, U, OMEGA, D), rel=1e-4)
    assert res.depth_mev == pytest.approx(203, rel=0.01)


def test_five_wire_depth(vw):
    m, null = vw
    res = trap_depth(m, null)
    assert res.saddle[1] == pytest.approx(five_wire_saddle_height(D), rel=1e-6)
    assert five_wire_saddle_height(D) == pytest.approx(D * math.sqrt(0.75 + math.sqrt(3)), rel=1e-15)
    assert res.depth == pytest.approx(five_wire_depth(MG, U, OMEGA, D), rel=1e-4)


def test_depth_translation_invariant(fw):
    m, null = fw
    ref = trap_depth(m, null).depth
    shifted = m.translated(3 * D)
    n2 = find_rf_null(shifted, null + [3 * D, 0, 0])
    assert trap_depth(shifted, n2).depth == pytest.approx(ref, rel=1e-8)


@given(st.floats(10e-6, 200e-6), st.floats(20, 300), st.floats(2 * math.pi * 20e6, 2 * math.pi * 200e6),
       st.sampled_from(["9Be+", "24Mg+", "40Ca+", "171Yb+"]))
def test_generic_matches_closed_forms(d, u, om, label):
    sp = species(label)
    for geom, freq in ((four_wire(d), four_wire_frequency), (five_wire(d), five_wire_frequency)):
        m = model(geom, u, om, sp)
        null = find_rf_null(m, guess_null(m))
        w = secular_modes(m, null).frequencies
        assert np.allclose(w, freq(sp, u, om, d), rtol=1e-4)


@given(st.floats(0.1, 10.0))
def test_geometry_scaling(lam):
    m1 = model(four_wire(D))
    m2 = model(four_wire(lam * D))
    n1 = find_rf_null(m1, guess_null(m1))
    n2 = find_rf_null(m2, guess_null(m2))
    assert n2[1] == pytest.approx(lam * n1[1], rel=1e-10)
    assert four_wire_frequency(MG, U, OMEGA, lam * D) == pytest.approx(
        four_wire_frequency(MG, U, OMEGA, D) / lam ** 2, rel=1e-10)


def test_intrinsic_axes_zero_offset(vw):
    m, null = vw
    a = intrinsic_axes(m, 0.0, null)
    b = secular_modes(m, null)
    assert np.array_equal(a.frequencies, b.frequencies)
    assert np.array_equal(a.axes, b.axes)


def test_intrinsic_axes_lift_degeneracy(vw):
    m, null = vw
    modes = intrinsic_axes(m, 2.0, null)
    assert not modes.has_degeneracy
    # five-wire: axes aligned with the surface normal
    assert sorted(np.degrees(modes.axis_angles)) == pytest.approx([0.0, 90.0], abs=1e-6)


def test_intrinsic_axes_four_wire_tilt(fw):
    m, null = fw
    modes = intrinsic_axes(m, 2.0, null)
    assert not modes.has_degeneracy
    assert np.degrees(modes.axis_angles) == pytest.approx([45.0, 45.0], abs=1e-3)


def test_intrinsic_axes_large_offset_unstable(vw):
    m, null = vw
    with pytest.raises(UnstableEquilibriumError):
        intrinsic_axes(m, 1e4, null)


def test_equilibrium_with_uniform_field(fw):
    m, null = fw
    e = 50.0
    eq = find_equilibrium(m.with_statics(UniformStatic([e, 0.0, 0.0])), null)
    w = secular_modes(m, null).frequencies[0]
    # small-displacement estimate: q E / (m w^2) along -gradient
    assert abs(eq[0] - null[0]) == pytest.approx(MG.charge * e / (MG.mass * w ** 2), rel=0.02)


def _axis_modes(freqs=(1.0, 2.0, 3.0), deg=(False, False, False)):
    return ModeSolution(np.zeros(3), np.array(freqs), np.eye(3), np.zeros(3), np.array(deg))


def test_cooling_beam_on_all_axes():
    rep = cooling_geometry_check(_axis_modes(), np.ones(3) / math.sqrt(3))
    assert rep.overlaps == pytest.approx([1 / math.sqrt(3)] * 3)
    assert rep.ok


def test_cooling_perpendicular_mode_flagged():
    rep = cooling_geometry_check(_axis_modes(), np.array([1.0, 1.0, 0.0]) / math.sqrt(2))
    assert rep.flagged == [2]
    assert not rep.ok
    assert "mode 3" in rep.messages[0]


def test_cooling_degenerate_flag_regardless_of_beam():
    rep = cooling_geometry_check(_axis_modes((1, 1, 2), (True, True, False)), np.ones(3) / math.sqrt(3))
    assert rep.degenerate and not rep.ok


def test_cooling_requires_unit_beam():
    with pytest.raises(ValidationError):
        cooling_geometry_check(_axis_modes(), [1.0, 1.0, 1.0])

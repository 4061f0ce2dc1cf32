import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import brent_min
from paultrap.core import ValidationError, species
from paultrap.surface_fields import _unit, rect_patch_potential, segmented_five_wire
from paultrap.waveform import (DegenerateBasisError, InfeasibleWellError, SequenceError, WellSpec,
                               axial_basis, curvature_coefficient, measure_well, separation_ramp,
                               solve_well, transport_sequence)

MG = species("24Mg+")
D = 100e-6
Y0 = math.sqrt(3) * D / 2
W1 = 2 * math.pi * 1e6
WH = 2 * math.pi * 0.5e6


def make_basis(n_segments=5, step=2.5e-6):
    g = segmented_five_wire(D, n_segments=n_segments)
    half = n_segments * D / 2
    return axial_basis(g, np.arange(-half, half + step / 2, step), Y0)


@pytest.fixture(scope="module")
def b5():
    return make_basis(5)


@pytest.fixture(scope="module")
def b9():
    return make_basis(9)


def oracle_well(basis, u, z_guess):
    """Minimum and curvature straight from the electrode geometry."""
    g = basis.geometry
    bias = np.zeros(len(g))
    bias[list(basis.indices)] = u

    def f(z):
        return float(g.potential(np.array([0.0, Y0, z]), bias))

    p = basis.pitch
    zmin = brent_min(f, z_guess - 0.5 * p, z_guess + 0.5 * p)
    h = 5e-3 * p
    d2 = (-f(zmin + 2 * h) + 16 * f(zmin + h) - 30 * f(zmin) + 16 * f(zmin - h) - f(zmin - 2 * h)) / (12 * h * h)
    w = math.sqrt(MG.charge * d2 / MG.mass) if d2 > 0 else float("nan")
    return zmin, w, f


def test_basis_on_null(b5):
    assert b5.null_verified
    assert b5.n == 5
    assert b5.pitch == pytest.approx(D)


def test_off_null_warns():
    g = segmented_five_wire(D)
    with pytest.warns(UserWarning, match="rf null"):
        b = axial_basis(g, np.linspace(-2e-4, 2e-4, 41), 1.2 * Y0)
    assert not b.null_verified


def test_basis_needs_three_segments():
    g = segmented_five_wire(D, n_segments=2)
    with pytest.raises(ValidationError):
        axial_basis(g, np.linspace(-1e-4, 1e-4, 41), Y0)


def test_mirror_symmetric_composition(b5):
    u = np.array([1.3, -0.4, 0.7, -0.4, 1.3])
    phi = b5.compose(u)
    assert phi == pytest.approx(phi[::-1], rel=1e-12, abs=1e-15)


def test_single_basis_matches_patch(b5):
    e = b5.geometry.electrodes[b5.indices[2]]
    pts = np.stack([np.zeros_like(b5.z), np.full_like(b5.z, Y0), b5.z], axis=-1)
    assert b5.samples[2] == pytest.approx(rect_patch_potential(_unit(e), pts), rel=1e-12, abs=1e-15)


def test_superposition_matches_geometry(b5):
    pts = np.stack([np.zeros_like(b5.z), np.full_like(b5.z, Y0), b5.z], axis=-1)
    direct = b5.geometry.potential(pts, b5.full_biases(np.ones(b5.n)))
    assert b5.compose(np.ones(b5.n)) == pytest.approx(direct, rel=1e-12)


@given(st.lists(st.floats(-10, 10), min_size=5, max_size=5), st.lists(st.floats(-10, 10), min_size=5, max_size=5))
def test_linearity(u, v):
    b = make_basis(5, 10e-6)
    assert b.compose(np.add(u, v)) == pytest.approx(b.compose(u) + b.compose(v), rel=1e-12, abs=1e-12)


def test_taylor_matches_finite_differences(b5):
    z0 = 13e-6
    c = b5.taylor(z0, 2)
    e = b5.geometry.electrodes[b5.indices[1]]
    f = lambda z: float(rect_patch_potential(_unit(e), [0.0, Y0, z]))
    h = 0.5e-6
    d1 = (-f(z0 + 2 * h) + 8 * f(z0 + h) - 8 * f(z0 - h) + f(z0 - 2 * h)) / (12 * h)
    d2 = (-f(z0 + 2 * h) + 16 * f(z0 + h) - 30 * f(z0) + 16 * f(z0 - h) - f(z0 - 2 * h)) / (12 * h * h)
    assert c[1, 1] == pytest.approx(d1, rel=1e-6)
    assert 2 * c[1, 2] == pytest.approx(d2, rel=1e-5)


def test_centre_well_symmetric_voltages(b5):
    u, resid = solve_well(b5, WellSpec(0.0, W1, MG))
    assert resid < 1e-9
    assert np.max(np.abs(u - u[::-1])) < 1e-8


@pytest.mark.parametrize("z0", [-120e-6, -37e-6, 0.0, 55e-6, 150e-6])
def test_well_round_trip(b5, z0):
    u, _ = solve_well(b5, WellSpec(z0, WH, MG))
    zmin, w, _ = oracle_well(b5, u, z0)
    assert abs(zmin - z0) < 1e-3 * b5.pitch
    assert w == pytest.approx(WH, rel=0.01)
    d = measure_well(b5, u, MG, z0)
    assert d.z0 == pytest.approx(zmin, abs=1e-6 * b5.pitch)


def test_quartic_point_well(b9):
    k4 = 1e13
    u, _ = solve_well(b9, WellSpec(0.0, 0.0, MG, kappa4=k4))
    d = measure_well(b9, u, MG, 0.0)
    c20 = curvature_coefficient(MG, WH)
    assert abs(d.c2) < 1e-3 * c20
    assert d.kappa4 == pytest.approx(k4, rel=0.02)


def test_zero_curvature_needs_quartic():
    with pytest.raises(ValidationError):
        WellSpec(0.0, 0.0, MG)


def test_solver_optimal_among_perturbations(b5):
    spec = WellSpec(21e-6, WH, MG)
    u, _ = solve_well(b5, spec)
    c = b5.taylor(spec.z0, 2)
    a = np.array([c[:, 1], c[:, 2]])
    b = np.array([0.0, spec.c2])
    scale = np.linalg.norm(a, axis=1)

    def resid(v):
        return np.linalg.norm((a @ v - b) / scale) / np.linalg.norm(b / scale)

    r0 = resid(u)
    rng = np.random.default_rng(11)
    for _ in range(100):
        v = np.clip(u + rng.normal(0, 0.05, u.size), -10, 10)
        assert r0 <= resid(v)


def test_infeasible_under_rails(b5):
    with pytest.raises(InfeasibleWellError) as info:
        solve_well(b5, WellSpec(0.0, W1, MG), rails=0.01)
    assert info.value.residual > 1e-6
    assert np.max(np.abs(info.value.voltages)) <= 0.01 + 1e-12


def test_degenerate_basis_names_electrodes(b5):
    # three copies of one electrode cannot set slope and curvature independently
    row = b5.samples[2]
    clone = dataclasses.replace(b5, labels=("a", "b", "c"), indices=b5.indices[1:4],
                                samples=np.vstack([row, row, row]), _deriv=None)
    with pytest.raises(DegenerateBasisError) as info:
        solve_well(clone, WellSpec(0.0, W1, MG))
    assert set(info.value.redundant) >= {"b", "c"}


def test_centre_outside_span(b5):
    with pytest.raises(ValidationError):
        solve_well(b5, WellSpec(400e-6, W1, MG))


def test_transport_constant_endpoints(b5):
    seq = transport_sequence(b5, 10e-6, 10e-6, 4, WH, MG)
    assert np.all(seq.voltages == seq.voltages[0])


def test_transport_reversal(b9):
    fwd = transport_sequence(b9, -150e-6, 150e-6, 7, W1, MG)
    rev = transport_sequence(b9, 150e-6, -150e-6, 7, W1, MG)
    assert rev.voltages == pytest.approx(fwd.voltages[::-1], abs=1e-9)


def test_transport_holds_frequency(b9):
    seq = transport_sequence(b9, -300e-6, 300e-6, 13, W1, MG)
    assert seq.max_omega_deviation < 0.01
    for k, (z, u) in enumerate(zip(seq.targets, seq.voltages)):
        zmin, w, _ = oracle_well(b9, u, z)
        assert abs(zmin - z) < 1e-3 * b9.pitch, k
        assert w == pytest.approx(W1, rel=0.01), k


def test_long_transport_adiabaticity():
    b = make_basis(15, 5e-6)
    seq = transport_sequence(b, -600e-6, 600e-6, 51, W1, MG, duration=50e-6)
    assert seq.n_steps >= 50
    assert seq.adiabaticity == pytest.approx(50e-6 * W1, rel=1e-12)
    assert seq.adiabaticity == pytest.approx(314.16, abs=0.01)
    assert seq.step_adiabaticity > 1
    assert seq.max_omega_deviation < 0.01


def test_transport_step_error(b5):
    with pytest.raises(SequenceError) as info:
        transport_sequence(b5, 0.0, 400e-6, 5, W1, MG)
    # centres beyond the outermost electrode centre (200 um) are refused; 300 um is step 3
    assert info.value.step == 3


def test_transport_validation(b5):
    with pytest.raises(ValidationError):
        transport_sequence(b5, 0.0, 1e-5, 1, W1, MG)
    with pytest.raises(ValidationError):
        transport_sequence(b5, 0.0, 1e-5, 3, 0.0, MG)


@pytest.fixture(scope="module")
def ramp(b5):
    return separation_ramp(b5, 0.0, 5, WH, MG)


def test_separation_first_stage_single_well(b5, ramp):
    zmin, w, _ = oracle_well(b5, ramp.voltages[0], 0.0)
    assert abs(zmin) < 1e-3 * b5.pitch
    assert w == pytest.approx(WH, rel=0.01)
    assert len(ramp.diagnostics[0].minima) == 1


def test_separation_middle_stage_quartic(b5, ramp):
    d = ramp.diagnostics[2]
    c20 = curvature_coefficient(MG, WH)
    assert abs(d.c2) < 1e-3 * c20
    assert d.kappa4 > 0


def test_separation_final_double_well(b5, ramp):
    u = ramp.voltages[-1]
    g = b5.geometry
    bias = b5.full_biases(u)
    f = lambda z: float(g.potential(np.array([0.0, Y0, z]), bias))
    left = brent_min(f, -2 * D, 0.0)
    right = brent_min(f, 0.0, 2 * D)
    assert abs(left + right) < 1e-3 * b5.pitch
    assert f(0.0) - max(f(left), f(right)) > 0
    d = ramp.diagnostics[-1]
    assert d.minima == pytest.approx((left, right), abs=1e-6 * D)
    assert d.barrier_ev > 0


def test_separation_needs_odd_stages(b5):
    with pytest.raises(ValidationError):
        separation_ramp(b5, 0.0, 4, WH, MG)


def test_separation_infeasible_at_tight_rails(b5):
    with pytest.raises(InfeasibleWellError):
        separation_ramp(b5, 0.0, 5, W1, MG)


def test_sequence_export(b5):
    seq = transport_sequence(b5, -50e-6, 50e-6, 3, WH, MG, duration=3e-6)
    header = seq.header()
    rows = list(seq.to_rows())
    assert header[:2] == ["step", "time"] and header[-2:] == ["z0_achieved", "omega_z_achieved"]
    assert header[2:-2] == [f"V_dc{k}" for k in range(1, 6)]
    assert len(rows) == 3 and all(len(r) == len(header) for r in rows)
    assert rows[-1][1] == pytest.approx(3e-6)

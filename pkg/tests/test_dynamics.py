import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import jv

from paultrap import kernels
from paultrap.core import DomainError, ValidationError, species
from paultrap.dynamics import (DriveConfig, FieldModel, ResolutionError, excess_micromotion,
                               fluorescence_loss, integrate, modulation_index,
                               phase_imbalance_micromotion, sideband_spectrum, spectral_decompose)
from paultrap.pseudo import QuadrupoleTrapModel, quadrupole_radial_frequency
from paultrap.surface_fields import five_wire

MG = species("24Mg+")
OMEGA = 2 * math.pi * 100e6
PERIOD = 2 * math.pi / OMEGA

needs_cython = pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernels not built")


def quad_case(v0=30.0, r=50e-6, stray=(0.0, 0.0, 0.0)):
    fm = FieldModel.quadrupole(v0, r, OMEGA, stray_field=stray)
    w_r = quadrupole_radial_frequency(QuadrupoleTrapModel(r, v0, OMEGA, MG))
    return fm, w_r


def test_uniform_field_micromotion_amplitude():
    e0 = 100.0
    fm = FieldModel.uniform([e0, 0.0, 0.0], OMEGA)
    traj = integrate(fm, None, MG, np.zeros(6), 200 * PERIOD)
    x = traj.positions[:, 0]
    expected = MG.charge * e0 / (MG.mass * OMEGA ** 2)
    assert 0.5 * (x.max() - x.min()) == pytest.approx(expected, rel=0.01)
    spec = spectral_decompose(traj, min_cycles=10)
    assert spec.micromotion_amplitude == pytest.approx(expected, rel=0.01)
    assert len(spec.secular_frequencies) == 0


def test_zero_field_stays_at_rest():
    fm = FieldModel.uniform([0.0, 0.0, 0.0], OMEGA)
    traj = integrate(fm, None, MG, [1e-6, 2e-6, 0.0], 20 * PERIOD)
    assert np.all(traj.positions == np.array([1e-6, 2e-6, 0.0]))


def test_quadrupole_secular_peak():
    fm, w_r = quad_case()
    q_m = 2 * math.sqrt(2) * w_r / OMEGA
    assert q_m < 0.4
    traj = integrate(fm, None, MG, [1e-6, 0.5e-6, 0, 0, 0, 0], 1500 * PERIOD)
    spec = spectral_decompose(traj)
    assert spec.secular_frequencies[0] == pytest.approx(w_r, rel=0.05)
    # sidebands of the micromotion sit at Omega +- w_r
    f = spec.frequencies
    band = (f > 0.6 * OMEGA / (2 * math.pi)) & (f < 1.4 * OMEGA / (2 * math.pi))
    tot = np.sqrt(np.sum(spec.amplitudes ** 2, axis=1))
    top = f[band][np.argmax(tot[band])]
    assert min(abs(top - (OMEGA - w_r) / (2 * math.pi)), abs(top - (OMEGA + w_r) / (2 * math.pi))) < 0.05 * w_r


def test_scale_separation():
    fm, w_r = quad_case()
    traj = integrate(fm, None, MG, [1e-6, 0.5e-6, 0, 0, 0, 0], 1500 * PERIOD)
    spec = spectral_decompose(traj)
    f = 2 * math.pi * spec.frequencies
    p = np.sum(spec.amplitudes ** 2, axis=1)
    mid = (f > 1.5 * w_r) & (f < 0.5 * OMEGA)
    assert p[mid].sum() < 0.01 * p.sum()


def test_stray_field_micromotion():
    e = 200.0
    fm, w_r = quad_case(stray=(e, 0.0, 0.0))
    xd = MG.charge * e / (MG.mass * w_r ** 2)
    traj = integrate(fm, None, MG, [xd, 0, 0, 0, 0, 0], 1500 * PERIOD)
    spec = spectral_decompose(traj)
    expect = math.sqrt(2) * w_r / OMEGA * xd
    assert spec.micromotion_amplitude == pytest.approx(expect, rel=0.10)


def test_resolution_error_names_duration():
    fm, _ = quad_case()
    traj = integrate(fm, None, MG, [1e-6, 0, 0, 0, 0, 0], 50 * PERIOD)
    with pytest.raises(ResolutionError) as info:
        spectral_decompose(traj)
    assert info.value.required_duration > traj.duration


def test_step_halving_convergence():
    fm, _ = quad_case()
    s0 = [1e-6, 0.5e-6, 0, 0, 0, 0]
    a = integrate(fm, None, MG, s0, 100 * PERIOD, steps_per_cycle=200)
    b = integrate(fm, None, MG, s0, 100 * PERIOD, steps_per_cycle=400)
    scale = np.max(np.abs(a.positions))
    assert np.max(np.abs(a.positions[-1] - b.positions[-1])) < 1e-6 * scale


def test_time_reversal():
    fm, _ = quad_case()
    s0 = np.array([1e-6, 0.5e-6, 0, 0, 0, 0])
    fwd = integrate(fm, None, MG, s0, 100 * PERIOD)
    end = np.concatenate([fwd.positions[-1], fwd.velocities[-1]])
    back = integrate(fm, None, MG, end, -100 * PERIOD, t0=fwd.times[-1])
    assert np.allclose(back.positions[-1], s0[:3], rtol=0, atol=1e-6 * np.abs(s0).max())


def test_escape_reported():
    g = five_wire(40e-6)
    drive = DriveConfig.from_geometry(g, 103.2, 2 * math.pi * 87e6)
    # far above the saddle the ion is not trapped
    traj = integrate(g, drive, MG, [0, 120e-6, 0, 0, 2000.0, 0], 200 * 2 * math.pi / (2 * math.pi * 87e6),
                     box=((-200e-6, 200e-6), (1e-6, 150e-6), (-1, 1)))
    assert traj.escaped
    assert 0 < traj.escape_time < traj.times[-1] + 1e-9


def test_integrate_validates_input():
    fm, _ = quad_case()
    with pytest.raises(ValidationError):
        integrate(fm, None, MG, [0, 0, 0], 2 * PERIOD)
    with pytest.raises(ValidationError):
        integrate(fm, None, MG, [0, 0, 0], 100 * PERIOD, steps_per_cycle=10)
    g = five_wire(40e-6)
    with pytest.raises(DomainError):
        integrate(g, DriveConfig.from_geometry(g, 100, OMEGA), MG, [0, -1e-6, 0], 100 * PERIOD)


@needs_cython
@pytest.mark.parametrize("case", ["quadrupole", "planar"])
def test_backends_agree(case):
    if case == "quadrupole":
        fm, _ = quad_case()
        s0 = [1e-6, 0.5e-6, 0, 0, 0, 0]
    else:
        g = five_wire(40e-6)
        fm = FieldModel.planar(g, DriveConfig.from_geometry(g, 103.2, 2 * math.pi * 87e6))
        s0 = [1e-6, 35.64e-6, 0, 0, 0, 0]
    dur = 30 * 2 * math.pi / fm.omega_rf
    a = integrate(fm, None, MG, s0, dur, backend="python")
    b = integrate(fm, None, MG, s0, dur, backend="cython")
    assert np.allclose(a.positions, b.positions, rtol=1e-12, atol=1e-18)


@needs_cython
def test_field_evaluation_backends_agree():
    g = five_wire(40e-6)
    fm = FieldModel.planar(g, DriveConfig.from_geometry(g, 103.2, 2 * math.pi * 87e6, static_biases=[1.0, -2.0]))
    pts = np.random.default_rng(3).uniform([-1e-4, 5e-6, -1e-4], [1e-4, 1e-4, 1e-4], (20, 3))
    for p in pts:
        assert np.allclose(fm.field(1e-9, p, backend="python"), fm.field(1e-9, p, backend="cython"), rtol=1e-12)


def test_excess_micromotion_worked_numbers():
    r = excess_micromotion(500.0, 2 * math.pi * 10e6, OMEGA, MG)
    assert r.displacement == pytest.approx(500e-9, rel=0.02)
    assert r.amplitude == pytest.approx(70e-9, rel=0.05)


def test_excess_micromotion_zero_field():
    r = excess_micromotion(0.0, 2 * math.pi * 10e6, OMEGA, MG)
    assert r.displacement == 0.0 and r.amplitude == 0.0


def test_excess_micromotion_requires_positive_wr():
    with pytest.raises(ValidationError):
        excess_micromotion(500.0, 0.0, OMEGA, MG)


def test_modulation_index_values():
    assert modulation_index(70e-9, 280e-9) == pytest.approx(math.pi / 2, rel=1e-12)
    assert modulation_index(70e-9, 280e-9, theta=math.pi / 2) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValidationError):
        modulation_index(70e-9, 0.0)


def test_fluorescence_rule_of_thumb():
    assert fluorescence_loss(0.25) == pytest.approx(0.03125)
    assert fluorescence_loss(0.25) < 0.05
    with pytest.raises(DomainError):
        fluorescence_loss(1.2)


def test_sidebands_equal_at_1_43():
    n, inten = sideband_spectrum(1.43)
    # field amplitudes |J0| and |J1| agree to 0.6 %; the exact crossing is at 1.4347
    c = math.sqrt(inten[n == 0][0])
    s1 = math.sqrt(inten[n == 1][0])
    assert s1 == pytest.approx(c, rel=0.01)


def test_sidebands_at_zero_beta():
    n, inten = sideband_spectrum(0.0)
    assert inten[n == 0][0] == 1.0
    assert np.all(inten[n != 0] == 0.0)


@given(st.floats(0.0, 20.0))
def test_sidebands_sum_to_one(beta):
    _, inten = sideband_spectrum(beta)
    assert inten.sum() == pytest.approx(1.0, abs=1e-9)


@given(st.floats(0.01, 0.5))
def test_carrier_deficit_small_beta(beta):
    n, inten = sideband_spectrum(beta)
    assert 1 - inten[n == 0][0] == pytest.approx(beta ** 2 / 2, rel=0.05)
    assert 1 - jv(0, beta) ** 2 == pytest.approx(1 - inten[n == 0][0], rel=1e-12)


@pytest.fixture(scope="module")
def imbalance_sweep():
    g = five_wire(40e-6)
    out = {}
    for deg in (0.0, 0.05, 0.5, 1.0, 2.0):
        drive = DriveConfig.from_geometry(g, 103.2, OMEGA, phases=[0.0, math.radians(deg)])
        out[deg] = phase_imbalance_micromotion(g, drive, MG, 280e-9, cycles=200).beta
    return out


def test_phase_imbalance_zero(imbalance_sweep):
    assert imbalance_sweep[0.0] < 1e-3


def test_phase_imbalance_monotone(imbalance_sweep):
    vals = [imbalance_sweep[k] for k in sorted(imbalance_sweep)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    assert imbalance_sweep[0.5] < 1.0
    assert imbalance_sweep[0.5] > imbalance_sweep[0.05]


def test_phase_imbalance_needs_two_rf():
    g = five_wire(40e-6)
    drive = DriveConfig.from_geometry(g, 103.2, OMEGA)
    drive = DriveConfig(drive.omega_rf, (103.2, 0.0), (0.0, 0.0), (0.0, 0.0))
    with pytest.raises(ValidationError):
        phase_imbalance_micromotion(g, drive, MG, 280e-9)

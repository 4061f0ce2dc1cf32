"""Time-domain ion motion in rf fields, micromotion and sideband analysis.

The integrator solves ``m r'' = q E(r, t)`` with fixed-step RK4, by default
200 steps per rf period (never fewer than 100). Field sources are packed into a
:class:`FieldModel` that both the compiled and the pure-Python kernels accept.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import windows
from scipy.special import jv

from . import kernels
from .core import DomainError, IonSpecies, PaultrapError, ValidationError
from .pseudo import PseudoModel, RfDrive, find_rf_null, guess_null
from .surface_fields import RF, PlanarGeometry

logger = logging.getLogger(__name__)

__all__ = [
    "DriveConfig",
    "FieldModel",
    "Trajectory",
    "Spectrum",
    "MicromotionReport",
    "PhaseImbalanceResult",
    "IonEscaped",
    "ResolutionError",
    "integrate",
    "spectral_decompose",
    "excess_micromotion",
    "modulation_index",
    "fluorescence_loss",
    "sideband_spectrum",
    "phase_imbalance_micromotion",
]

MIN_STEPS_PER_CYCLE = 100
DEFAULT_STEPS_PER_CYCLE = 200
MIN_SAMPLES_PER_CYCLE = 20


class IonEscaped(PaultrapError, RuntimeError):
    def __init__(self, message, time=None, trajectory=None):
        super().__init__(message)
        self.time = time
        self.trajectory = trajectory


class ResolutionError(PaultrapError, ValueError):
    def __init__(self, message, required_duration=None):
        super().__init__(message)
        self.required_duration = required_duration


@dataclass(frozen=True)
class DriveConfig:
    """Per-electrode drive of a planar geometry.

    ``rf_amplitudes`` and ``rf_phases`` have one entry per electrode (zero
    amplitude for control electrodes); ``static_biases`` likewise. The
    optional ``stray_field`` is a uniform static field in V/m.
    """

    omega_rf: float
    rf_amplitudes: tuple
    rf_phases: tuple
    static_biases: tuple
    stray_field: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.omega_rf > 0:
            raise ValidationError("omega_rf must be positive")
        n = len(self.rf_amplitudes)
        if len(self.rf_phases) != n or len(self.static_biases) != n:
            raise ValidationError("amplitude, phase and bias vectors must have equal length")
        driven = [p for a, p in zip(self.rf_amplitudes, self.rf_phases) if a != 0]
        for p in driven[1:]:
            diff = math.remainder(p - driven[0], 2 * math.pi)
            if not -math.pi < diff <= math.pi:
                raise ValidationError("rf phase differences must lie in (-pi, pi]")

    @classmethod
    def from_geometry(cls, geometry: PlanarGeometry, amplitude: float, omega_rf: float,
                      phases=None, static_biases=None, stray_field=(0.0, 0.0, 0.0)):
        """Drive every rf electrode at ``amplitude * bias`` with its own ``rf_phase``.

        ``phases`` (one per electrode) overrides the geometry's phases.
        """
        n = len(geometry)
        amps = np.zeros(n)
        ph = np.zeros(n)
        for i in geometry.role_indices(RF):
            e = geometry.electrodes[i]
            amps[i] = amplitude * e.bias
            ph[i] = e.rf_phase
        if phases is not None:
            ph = np.asarray(phases, dtype=float)
        if static_biases is None:
            static_biases = np.zeros(n)
        return cls(float(omega_rf), tuple(amps), tuple(ph), tuple(np.asarray(static_biases, float)),
                   tuple(np.asarray(stray_field, float)))


@dataclass
class FieldModel:
    """Everything the integrator kernels need to evaluate ``E(r, t)``.

    Electrode coefficients are ``dc + rf cos(Omega t + phase)`` per unit
    potential; the uniform and quadrupole terms describe idealized fields
    with potentials ``-E . r`` and ``0.5 sum_i k_i r_i^2``.
    """

    omega_rf: float
    strips: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    patches: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    e_dc: np.ndarray = field(default_factory=lambda: np.zeros(0))
    e_rf: np.ndarray = field(default_factory=lambda: np.zeros(0))
    e_phase: np.ndarray = field(default_factory=lambda: np.zeros(0))
    uniform_rf: np.ndarray = field(default_factory=lambda: np.zeros(3))
    uniform_phase: float = 0.0
    uniform_dc: np.ndarray = field(default_factory=lambda: np.zeros(3))
    quad_rf: np.ndarray = field(default_factory=lambda: np.zeros(3))
    quad_phase: float = 0.0
    quad_dc: np.ndarray = field(default_factory=lambda: np.zeros(3))
    half_space: bool = False
    geometry: PlanarGeometry | None = None

    @classmethod
    def planar(cls, geometry: PlanarGeometry, drive: DriveConfig) -> "FieldModel":
        if len(drive.rf_amplitudes) != len(geometry):
            raise ValidationError("drive vectors do not match the geometry's electrode count")
        strips = np.array([[s.a, s.b] for s in geometry.strips], dtype=float).reshape(-1, 2)
        patches = np.array([[p.x1, p.x2, p.z1, p.z2] for p in geometry.patches],
                           dtype=float).reshape(-1, 4)
        return cls(
            omega_rf=drive.omega_rf,
            strips=strips,
            patches=patches,
            e_dc=np.array(drive.static_biases, dtype=float),
            e_rf=np.array(drive.rf_amplitudes, dtype=float),
            e_phase=np.array(drive.rf_phases, dtype=float),
            uniform_dc=np.array(drive.stray_field, dtype=float),
            half_space=True,
            geometry=geometry,
        )

    @classmethod
    def uniform(cls, E0, omega_rf, phase=0.0) -> "FieldModel":
        """Spatially uniform field ``E0 cos(Omega t + phase)``."""
        return cls(omega_rf=omega_rf, uniform_rf=np.asarray(E0, float).reshape(3),
                   uniform_phase=phase)

    @classmethod
    def quadrupole(cls, V0, R, omega_rf, stray_field=(0.0, 0.0, 0.0), axial_curvature=0.0):
        """Linear four-rod trap potential ``V0/2 cos(Omega t)(1 + (x^2 - y^2)/R^2)``.

        ``axial_curvature`` (V/m^2) adds a static ``0.5 k z^2`` term.
        """
        k = V0 / R ** 2
        return cls(omega_rf=omega_rf, quad_rf=np.array([k, -k, 0.0]),
                   quad_dc=np.array([0.0, 0.0, axial_curvature]),
                   uniform_dc=np.asarray(stray_field, float).reshape(3))

    def kernel_spec(self):
        return (
            np.ascontiguousarray(self.strips, dtype=float),
            np.ascontiguousarray(self.patches, dtype=float),
            np.ascontiguousarray(self.e_dc, dtype=float),
            np.ascontiguousarray(self.e_rf, dtype=float),
            np.ascontiguousarray(self.e_phase, dtype=float),
            np.asarray(self.uniform_rf, dtype=float),
            float(self.uniform_phase),
            np.asarray(self.uniform_dc, dtype=float),
            np.asarray(self.quad_rf, dtype=float),
            float(self.quad_phase),
            np.asarray(self.quad_dc, dtype=float),
            float(self.omega_rf),
        )

    def field(self, t, pos, backend=None):
        return kernels.get_backend(backend).field_at(self.kernel_spec(), float(t), np.asarray(pos, float))

    # cycle-averaged quantities, evaluated with numpy (independent of the kernels)
    def rf_phasor(self, p):
        """Complex rf field amplitude at points ``p`` (V/m)."""
        p = np.atleast_2d(np.asarray(p, dtype=float))
        out = np.zeros(p.shape, dtype=complex)
        if self.geometry is not None and np.any(self.e_rf):
            w = self.e_rf * np.exp(1j * self.e_phase)
            out += -self.geometry.gradient(p, w.real) - 1j * self.geometry.gradient(p, w.imag)
        out += self.uniform_rf * np.exp(1j * self.uniform_phase)
        out += -(self.quad_rf * p) * np.exp(1j * self.quad_phase)
        return out

    def static_potential(self, p):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        v = -(p @ self.uniform_dc) + 0.5 * np.sum(self.quad_dc * p * p, axis=-1)
        if self.geometry is not None and np.any(self.e_dc):
            v = v + self.geometry.potential(p, self.e_dc)
        return v

    def pseudopotential(self, p, species: IonSpecies):
        e = self.rf_phasor(p)
        return species.charge * np.sum(np.abs(e) ** 2, axis=-1) / (4 * species.mass * self.omega_rf ** 2)


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    samples_per_cycle: int
    omega_rf: float
    escape_time: float | None = None
    field_model: FieldModel | None = field(default=None, repr=False)
    species: IonSpecies | None = field(default=None, repr=False)

    @property
    def escaped(self) -> bool:
        return self.escape_time is not None

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def cycle_averages(self):
        """Positions and velocities averaged over each complete rf cycle."""
        n = self.samples_per_cycle
        m = (len(self.times) - 1) // n
        pos = self.positions[: m * n].reshape(m, n, 3).mean(axis=1)
        vel = self.velocities[: m * n].reshape(m, n, 3).mean(axis=1)
        return pos, vel

    def secular_energy(self):
        """Per-cycle secular energy (J): kinetic energy of the averaged motion plus
        the pseudopotential and static potential energy at the averaged position."""
        if self.field_model is None or self.species is None:
            raise ValidationError("trajectory carries no field model")
        pos, vel = self.cycle_averages()
        sp = self.species
        pot = self.field_model.pseudopotential(pos, sp) + self.field_model.static_potential(pos)
        return 0.5 * sp.mass * np.sum(vel * vel, axis=-1) + sp.charge * pot

    def energy_drift(self, window_cycles=None) -> float:
        """Relative change of the secular energy between the first and last windows.

        Windows default to a tenth of the run; averaging over windows removes
        the energy exchange between secular and micromotion within a secular period.
        """
        e = self.secular_energy()
        w = window_cycles or max(1, len(e) // 10)
        first, last = e[:w].mean(), e[-w:].mean()
        return float(abs(last - first) / abs(first))

    def to_rows(self):
        return np.column_stack([self.times, self.positions, self.velocities])


def integrate(source, drive, species: IonSpecies, initial_state, duration, *,
              steps_per_cycle=DEFAULT_STEPS_PER_CYCLE, samples_per_cycle=25, box=None,
              t0=0.0, backend=None) -> Trajectory:
    """Integrate ``m r'' = q E(r, t)``.

    ``source`` is a :class:`PlanarGeometry` (with a :class:`DriveConfig`) or a
    ready :class:`FieldModel` (``drive`` ignored). ``initial_state`` is
    ``(x, y, z, vx, vy, vz)`` or just a position. A negative ``duration``
    integrates backward in time from ``t0``.
    """
    if isinstance(source, FieldModel):
        fm = source
    else:
        if drive is None:
            raise ValidationError("planar sources need a DriveConfig")
        fm = FieldModel.planar(source, drive)
    s0 = np.zeros(6)
    init = np.asarray(initial_state, dtype=float).ravel()
    if init.size not in (2, 3, 6):
        raise ValidationError("initial state must be a position or a (pos, vel) 6-vector")
    s0[: init.size] = init
    if fm.half_space and not s0[1] > 0:
        raise DomainError("initial position must lie above the electrode plane")
    period = 2 * math.pi / fm.omega_rf
    cycles = abs(duration) / period
    if cycles < 10 - 1e-9:
        raise ValidationError(f"duration must cover at least 10 rf cycles, got {cycles:.3g}")
    if steps_per_cycle < MIN_STEPS_PER_CYCLE:
        raise ValidationError(f"need at least {MIN_STEPS_PER_CYCLE} steps per rf cycle")
    if samples_per_cycle < MIN_SAMPLES_PER_CYCLE:
        raise ValidationError(f"need at least {MIN_SAMPLES_PER_CYCLE} samples per rf cycle")
    if steps_per_cycle % samples_per_cycle:
        steps_per_cycle = int(math.ceil(steps_per_cycle / samples_per_cycle) * samples_per_cycle)
    ncycles = int(round(cycles))
    if abs(ncycles - cycles) > 1e-6:
        ncycles = int(math.ceil(cycles))
    nsteps = ncycles * steps_per_cycle
    dt = math.copysign(period / steps_per_cycle, duration)
    if box is None:
        box = np.array([-np.inf, np.inf] * 3)
    box = np.asarray(box, dtype=float).reshape(6)
    k = kernels.get_backend(backend)
    times, states, escape = k.rk4_integrate(
        fm.kernel_spec(), species.q_over_m, s0, float(t0), dt, int(nsteps),
        int(steps_per_cycle // samples_per_cycle), bool(fm.half_space), box)
    escape_time = None if escape < 0 else float(times[-1])
    return Trajectory(np.asarray(times), np.asarray(states[:, :3]), np.asarray(states[:, 3:]),
                      samples_per_cycle, fm.omega_rf, escape_time, fm, species)


# --- spectra -------------------------------------------------------------------


@dataclass
class Spectrum:
    frequencies: np.ndarray  # Hz
    amplitudes: np.ndarray  # m, per coordinate, shape (n_freq, 3)
    secular_frequencies: np.ndarray  # rad/s, strongest first
    micromotion_vector: np.ndarray  # complex amplitude at Omega_rf per coordinate (m)
    window: str = "hann"

    @property
    def micromotion_amplitude(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.micromotion_vector) ** 2)))

    @property
    def total_amplitude(self):
        return np.sqrt(np.sum(self.amplitudes ** 2, axis=-1))

    def band_power_fraction(self, f_lo, f_hi) -> float:
        """Fraction of spectral power between ``f_lo`` and ``f_hi`` (Hz)."""
        p = self.total_amplitude ** 2
        sel = (self.frequencies >= f_lo) & (self.frequencies <= f_hi)
        return float(p[sel].sum() / p.sum())

    def to_rows(self):
        return np.column_stack([self.frequencies, self.total_amplitude])


def _project(x, w, t, omega):
    return 2.0 * np.sum((w[:, None] * x) * np.exp(-1j * omega * t)[:, None], axis=0) / w.sum()


def spectral_decompose(trajectory: Trajectory, *, min_cycles=50, rel_threshold=0.01,
                       max_peaks=3, pad=8) -> Spectrum:
    """Hann-windowed periodogram of the positions.

    Secular lines are local maxima below ``Omega_rf / 2`` exceeding
    ``rel_threshold`` of the strongest line, refined by parabolic
    interpolation of the log amplitude on an ``pad``-fold zero-padded grid.
    The micromotion amplitude is a windowed projection at exactly ``Omega_rf``.
    """
    t = trajectory.times
    x = trajectory.positions - trajectory.positions.mean(axis=0)
    n = len(t)
    if n < 16:
        raise ResolutionError("trajectory too short for a spectrum")
    dt = float(t[1] - t[0])
    w = windows.hann(n, sym=False)
    nfft = pad * n
    X = np.fft.rfft(w[:, None] * x, n=nfft, axis=0)
    amp = 2.0 * np.abs(X) / w.sum()
    freqs = np.fft.rfftfreq(nfft, dt)
    total = np.sqrt(np.sum(amp ** 2, axis=-1))
    f_rf = trajectory.omega_rf / (2 * math.pi)
    duration = n * dt
    # exclude the first two resolution bins (residual drift)
    lo = int(np.searchsorted(freqs, 2.0 / duration))
    hi = int(np.searchsorted(freqs, 0.5 * f_rf))
    peaks = []
    floor = rel_threshold * total.max()
    for i in range(max(lo, 1), min(hi, len(total) - 1)):
        if total[i] > total[i - 1] and total[i] >= total[i + 1] and total[i] > floor:
            a, b, c = np.log(total[i - 1:i + 2])
            denom = a - 2 * b + c
            off = 0.5 * (a - c) / denom if denom != 0 else 0.0
            peaks.append((total[i], freqs[i] + off * (freqs[1] - freqs[0])))
    peaks.sort(reverse=True)
    # drop window sidelobes: keep a peak only if no stronger one lies within the main lobe
    lobe = 3.0 / duration
    kept = []
    for a, f in peaks:
        if all(abs(f - g) > lobe for _, g in kept):
            kept.append((a, f))
    peaks = kept
    sec = np.array([2 * math.pi * f for _, f in peaks[:max_peaks]])
    for f in sec / (2 * math.pi):
        if f * duration < min_cycles:
            need = min_cycles / f
            raise ResolutionError(
                f"secular line at {f:.4g} Hz spans only {f * duration:.1f} cycles; "
                f"integrate for at least {need:.3g} s", required_duration=need)
    mm = _project(x, w, t, trajectory.omega_rf)
    return Spectrum(freqs, amp, sec, mm)


# --- closed-form micromotion -----------------------------------------------------


@dataclass
class MicromotionReport:
    displacement: float  # x_d, m
    amplitude: float  # x_mu_m, m
    secular_position: np.ndarray | None = None
    beta: float | None = None


def excess_micromotion(E_dc, omega_r, omega_rf, species: IonSpecies, wavelength=None,
                       theta=0.0) -> MicromotionReport:
    """Displacement ``q E / (m w_r^2)`` and micromotion ``sqrt(2) (w_r/Omega) x_d``."""
    if not omega_r > 0:
        raise ValidationError("omega_r must be positive")
    E = float(np.linalg.norm(np.atleast_1d(E_dc)))
    xd = abs(species.charge) * E / (species.mass * omega_r ** 2)
    xmm = math.sqrt(2.0) * omega_r / omega_rf * xd
    beta = modulation_index(xmm, wavelength, theta) if wavelength else None
    return MicromotionReport(xd, xmm, None, beta)


def modulation_index(x_mm, wavelength, theta=0.0) -> float:
    """``beta = 2 pi x_mm cos(theta) / lambda``; ``theta`` is beam-to-micromotion angle."""
    if not wavelength > 0:
        raise ValidationError("wavelength must be positive")
    return abs(2.0 * math.pi * x_mm * math.cos(theta) / wavelength)


def fluorescence_loss(beta) -> float:
    """Small-beta fractional loss of on-resonance fluorescence, ``beta^2 / 2``."""
    if not 0 <= beta < 1:
        raise DomainError("beta^2/2 is only a valid approximation for 0 <= beta < 1")
    return 0.5 * beta * beta


def sideband_spectrum(beta, n_max=None):
    """Relative laser intensity at the carrier and rf sidebands, ``J_n(beta)^2``.

    Returns ``(orders, intensities)`` for ``n = -n_max .. n_max``.
    """
    if beta < 0:
        raise ValidationError("beta must be non-negative")
    if n_max is None:
        n_max = int(math.ceil(beta + 6 * max(beta, 1.0) ** (1 / 3) + 10))
    n = np.arange(-n_max, n_max + 1)
    return n, jv(n, beta) ** 2


# --- rf phase imbalance ------------------------------------------------------------


@dataclass
class PhaseImbalanceResult:
    beta: float
    amplitude: float  # m
    null: np.ndarray
    trajectory: Trajectory = field(repr=False)


def phase_imbalance_micromotion(geometry: PlanarGeometry, drive: DriveConfig, species: IonSpecies,
                                wavelength, theta=0.0, *, null=None, cycles=400,
                                steps_per_cycle=DEFAULT_STEPS_PER_CYCLE, backend=None):
    """Residual micromotion at the pseudopotential null caused by rf phase offsets.

    The null is located for an in-phase drive; the ion is then released there
    under the actual (phase-shifted) drive and the amplitude of its motion at
    ``Omega_rf`` is converted to a modulation index.
    """
    rf = [i for i, a in enumerate(drive.rf_amplitudes) if a != 0]
    if len(rf) < 2:
        raise ValidationError("phase imbalance needs at least two rf electrodes")
    if null is None:
        amp = max(abs(drive.rf_amplitudes[i]) for i in rf)
        els = list(geometry.electrodes)
        for i in rf:
            els[i] = replace(els[i], role=RF, bias=drive.rf_amplitudes[i] / amp, rf_phase=0.0)
        model = PseudoModel(geometry.with_electrodes(els), RfDrive(amp, drive.omega_rf), species)
        null = find_rf_null(model, guess_null(model))
    null = np.asarray(null, dtype=float)
    period = 2 * math.pi / drive.omega_rf
    traj = integrate(geometry, drive, species, null, cycles * period,
                     steps_per_cycle=steps_per_cycle, backend=backend)
    if traj.escaped:
        raise IonEscaped(f"ion left the trap at t = {traj.escape_time:.3e} s",
                         traj.escape_time, traj)
    x = traj.positions - traj.positions.mean(axis=0)
    w = windows.hann(len(x), sym=False)
    mm = _project(x, w, traj.times, drive.omega_rf)
    amp_mm = float(np.sqrt(np.sum(np.abs(mm) ** 2)))
    return PhaseImbalanceResult(modulation_index(amp_mm, wavelength, theta), amp_mm, null, traj)

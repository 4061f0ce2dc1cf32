"""Doppler recooling thermometry in the 1D semiclassical, weak-binding limit.

An ion oscillating with velocity amplitude ``v0`` sees the two-level rate
``R(v) = (G/2) s0 / (1 + s0 + (2 (delta - k v cos) / G)^2)``. Averaged over the
oscillation phase (``v = v0 sin phi``) both ``<R>`` and ``<v R>`` have closed
forms: with ``c = 2 delta / G - i sqrt(1 + s0)`` and ``b = 2 k cos v0 / G``,
``<1 / (c - b sin)> = 1 / sqrt(c^2 - b^2)``. The oscillation energy then obeys
``dE/dt = hbar k cos <v R> + hbar^2 k^2 <R> / m``.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.laguerre import laggauss
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, minimize_scalar

from .core import CONSTANTS, DomainError, IonSpecies, PaultrapError, ValidationError

__all__ = [
    "LaserParams",
    "RecoolCurve",
    "FitResult",
    "DegenerateFitError",
    "scattering_rate",
    "phase_averaged_rates",
    "energy_rate",
    "doppler_energy",
    "doppler_temperature",
    "simulate_recooling",
    "ensemble_curve",
    "RecoolTable",
    "thermal_nodes",
    "fit_temperature",
    "read_curve",
]

MIN_BINS = 10
TAIL_FRACTION = 0.2
FLAT_THRESHOLD = 0.02


class DegenerateFitError(PaultrapError):
    pass


@dataclass(frozen=True)
class LaserParams:
    gamma: float  # rad/s
    k: float  # 1/m
    delta: float  # rad/s
    s0: float
    cos_theta: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValidationError("linewidth must be positive")
        if not self.k > 0:
            raise ValidationError("wavevector must be positive")
        if not self.s0 > 0:
            raise ValidationError("saturation parameter must be positive")
        if not 0 < abs(self.cos_theta) <= 1:
            raise ValidationError("|cos theta| must lie in (0, 1]")

    @classmethod
    def from_wavelength(cls, gamma, wavelength, delta, s0, cos_theta=1.0):
        return cls(gamma, 2 * math.pi / wavelength, delta, s0, cos_theta)


def scattering_rate(v, laser: LaserParams):
    """Photon scattering rate (1/s) at velocity ``v`` (m/s)."""
    g = laser.gamma
    x = 2.0 * (laser.delta - laser.k * np.asarray(v, dtype=float) * laser.cos_theta) / g
    return 0.5 * g * laser.s0 / (1.0 + laser.s0 + x * x)


def phase_averaged_rates(v0, laser: LaserParams):
    """``(<R>, <v R>)`` over one harmonic period at velocity amplitude ``v0``."""
    v0 = np.asarray(v0, dtype=float)
    g = laser.gamma
    big_b = 1.0 + laser.s0
    c = 2.0 * laser.delta / g - 1j * math.sqrt(big_b)
    b = 2.0 * laser.k * laser.cos_theta * v0 / g
    w = np.sqrt(c * c - b * b + 0j)
    w = np.where(w.imag * c.imag < 0, -w, w)
    pre = 0.5 * g * laser.s0 / math.sqrt(big_b)
    mean_r = pre * np.imag(1.0 / w)
    small = np.abs(b) < 1e-4 * abs(c)
    bs = np.where(small, 1.0, b)
    # <sin/(c - b sin)> = (c/w - 1)/b, series b/(2c^2) for small b
    s_avg = np.where(small, b / (2 * c * c) * (1 + 0.75 * (b / c) ** 2), (c / w - 1.0) / bs)
    mean_vr = pre * v0 * np.imag(s_avg)
    return mean_r, mean_vr


def energy_rate(E, laser: LaserParams, species: IonSpecies):
    """``dE/dt`` (W) at oscillation energy ``E`` (J)."""
    E = np.maximum(np.asarray(E, dtype=float), 0.0)
    v0 = np.sqrt(2.0 * E / species.mass)
    r, vr = phase_averaged_rates(v0, laser)
    hk = CONSTANTS.hbar * laser.k
    return hk * laser.cos_theta * vr + hk * hk * r / species.mass


def _check_laser(laser):
    if laser.delta >= 0:
        raise DomainError("detuning must be negative (delta >= 0 heats the ion)")


def doppler_energy(laser: LaserParams, species: IonSpecies) -> float:
    """Equilibrium oscillation energy (J) where cooling balances recoil heating."""
    _check_laser(laser)
    e_scale = CONSTANTS.hbar * laser.gamma
    lo, hi = 1e-8 * e_scale, e_scale
    while energy_rate(hi, laser, species) > 0:
        hi *= 4.0
    return brentq(lambda e: float(energy_rate(e, laser, species)), lo, hi, xtol=1e-14 * e_scale,
                  rtol=1e-13)


def doppler_temperature(laser: LaserParams, species: IonSpecies) -> float:
    return doppler_energy(laser, species) / CONSTANTS.boltzmann


@dataclass
class RecoolCurve:
    """Fluorescence versus time, one entry per uniform bin.

    ``rate`` is in photons/s for simulated curves and counts/s for measured
    ones; fits normalise both by the mean of the final bins. ``counts`` (if
    known) give shot-noise weights.
    """

    times: np.ndarray  # bin centres, s
    rate: np.ndarray
    bin_width: float
    counts: np.ndarray | None = None
    energy: np.ndarray | None = field(default=None, repr=False)
    reached_steady: bool = True

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.rate = np.asarray(self.rate, dtype=float)
        if self.times.shape != self.rate.shape or self.times.ndim != 1:
            raise ValidationError("times and rates must be 1D arrays of equal length")
        if np.any(self.rate < 0):
            raise ValidationError("fluorescence rates must be non-negative")
        if len(self.times) > 2:
            dt = np.diff(self.times)
            if np.any(np.abs(dt - self.bin_width) > 1e-6 * self.bin_width):
                raise ValidationError("bins must be uniform")

    def __len__(self):
        return len(self.times)

    @property
    def tail_mean(self) -> float:
        n = max(1, int(round(TAIL_FRACTION * len(self))))
        return float(np.mean(self.rate[-n:]))

    @property
    def normalized(self) -> np.ndarray:
        t = self.tail_mean
        if not t > 0:
            raise DegenerateFitError("no fluorescence in the final bins")
        return self.rate / t

    @property
    def weights(self) -> np.ndarray:
        """Inverse variances of the normalised rate."""
        if self.counts is not None:
            c = np.maximum(np.asarray(self.counts, dtype=float), 1.0)
            n = self.normalized
            return c / np.maximum(n * n, 1e-12)
        return np.ones(len(self))

    def to_rows(self):
        for t, r in zip(self.times, self.rate):
            yield [float(t), float(r), self.bin_width]


def _bin_edges(duration, n_bins):
    if not duration > 0:
        raise ValidationError("duration must be positive")
    if int(n_bins) != n_bins or n_bins < 1:
        raise ValidationError("need at least one bin")
    return np.linspace(0.0, duration, int(n_bins) + 1)


def _weak_binding(omega_z, laser, other_modes):
    if not omega_z > 0:
        raise ValidationError("omega_z must be positive")
    if omega_z >= laser.gamma / 10:
        warnings.warn("omega_z is not << Gamma; the weak-binding model is unreliable", stacklevel=3)
    if other_modes is not None and min(other_modes) < 3 * omega_z:
        warnings.warn("heated mode is not well separated from the others; the 1D model is "
                      "questionable", stacklevel=3)


def _evolve(energies, edges, laser, species):
    """Energies and accumulated photon numbers at the bin edges, shape ``(n_E, n_edges)``."""
    e_d = doppler_energy(laser, species)
    e0 = np.asarray(energies, dtype=float) / e_d
    n = len(e0)
    # photon counts scale with the cold rate
    r_scale = float(phase_averaged_rates(0.0, laser)[0])

    def rhs(_t, y):
        e = y[:n] * e_d
        v0 = np.sqrt(2.0 * np.maximum(e, 0.0) / species.mass)
        r, _ = phase_averaged_rates(v0, laser)
        return np.concatenate([energy_rate(e, laser, species) / e_d, r / r_scale])

    y0 = np.concatenate([e0, np.zeros(n)])
    sol = solve_ivp(rhs, (edges[0], edges[-1]), y0, t_eval=edges, rtol=1e-9,
                    atol=np.concatenate([1e-12 * np.maximum(e0, 1.0),
                                         np.full(n, 1e-12 * r_scale * edges[-1])]),
                    method="DOP853")
    if not sol.success:
        raise PaultrapError(f"recooling integration failed: {sol.message}")
    return sol.y[:n] * e_d, sol.y[n:] * r_scale, e_d


def simulate_recooling(E0, omega_z, species: IonSpecies, laser: LaserParams, duration,
                       n_bins=100, other_modes=None) -> RecoolCurve:
    """Phase-averaged fluorescence of an ion starting at oscillation energy ``E0`` (J)."""
    _check_laser(laser)
    if not E0 >= 0:
        raise ValidationError("initial energy must be non-negative")
    _weak_binding(omega_z, laser, other_modes)
    edges = _bin_edges(duration, n_bins)
    e, nph, e_d = _evolve([E0], edges, laser, species)
    width = edges[1] - edges[0]
    rate = np.diff(nph[0]) / width
    steady = bool(e[0, -1] < 2.0 * e_d)
    return RecoolCurve(0.5 * (edges[1:] + edges[:-1]), rate, width, energy=e[0],
                       reached_steady=steady)


class RecoolTable:
    """Master relaxation curve shared by every starting energy.

    The energy equation is autonomous, so trajectories from different
    initial energies are time shifts of one another. Tabulating the elapsed
    time and accumulated photon number against ``s = ln|E / E_D - 1|`` once
    (separately above and below ``E_D``) turns each forward simulation into
    interpolation.
    """

    N_GRID = 60001
    S_END = math.log(1e-10)

    def __init__(self, laser: LaserParams, species: IonSpecies, e_max: float):
        _check_laser(laser)
        self.laser, self.species = laser, species
        self.e_d = doppler_energy(laser, species)
        self.r_d = float(phase_averaged_rates(math.sqrt(2 * self.e_d / species.mass), laser)[0])
        self.hot = self._branch(+1, math.log(max(e_max / self.e_d - 1.0, 1.0)))
        self.cold = self._branch(-1, 0.0)

    def _branch(self, sign, s_start):
        s = np.linspace(s_start, self.S_END, self.N_GRID)
        x = np.exp(s)
        e = self.e_d * (1.0 + sign * x)
        f = energy_rate(e, self.laser, self.species)
        v0 = np.sqrt(2.0 * np.maximum(e, 0.0) / self.species.mass)
        r, _ = phase_averaged_rates(v0, self.laser)
        dt_ds = self.e_d * x / np.abs(f)  # time per unit decrease of s
        ds = s[0] - s[1]
        tau = np.concatenate([[0.0], np.cumsum(0.5 * (dt_ds[1:] + dt_ds[:-1]) * ds)])
        nph = np.concatenate([[0.0], np.cumsum(0.5 * (r[1:] * dt_ds[1:] + r[:-1] * dt_ds[:-1]) * ds)])
        return s, e, tau, nph, dt_ds[-1]

    def evolve(self, energies, times):
        """Energy (J) and accumulated photons at ``times`` for each start energy.

        Returns arrays of shape ``(len(energies), len(times))``.
        """
        e0 = np.atleast_1d(np.asarray(energies, dtype=float))
        t = np.asarray(times, dtype=float)
        e_out = np.full((len(e0), len(t)), self.e_d)
        n_out = np.broadcast_to(self.r_d * t, e_out.shape).copy()
        rel = e0 / self.e_d - 1.0
        eps = math.exp(self.S_END)
        for mask, branch in ((rel > eps, self.hot), (rel < -eps, self.cold)):
            if not mask.any():
                continue
            s, e, tau, nph, tail = branch
            si = np.log(np.abs(rel[mask]))
            if np.any(si > s[0] + 1e-9):
                raise ValidationError("start energy above the tabulated range")
            # s is descending; interpolate on the reversed arrays
            tau0 = np.interp(si, s[::-1], tau[::-1])
            n0 = np.interp(si, s[::-1], nph[::-1])
            tt = tau0[:, None] + t[None, :]
            inside = tt <= tau[-1]
            over = np.maximum(tt - tau[-1], 0.0)
            e_out[mask] = np.where(inside, np.interp(tt, tau, e),
                                   self.e_d + (e[-1] - self.e_d) * np.exp(-over / tail))
            n_out[mask] = np.where(inside, np.interp(tt, tau, nph),
                                   nph[-1] + self.r_d * over) - n0[:, None]
        return e_out, n_out


def thermal_nodes(n_nodes=5000, quadrature="legendre"):
    """Nodes ``u = E / k_B T`` and weights for averages over ``exp(-u) du``.

    ``"legendre"`` is composite 5-point Gauss-Legendre on geometrically
    growing panels over ``[0, 46]``; it converges for the near step-like
    dependence of late-time fluorescence on energy at any temperature. ``"laguerre"`` is the classical Gauss-Laguerre rule (at most 180
    nodes), accurate only for smooth integrands.
    """
    if quadrature == "laguerre":
        if not 2 <= n_nodes <= 180:
            raise ValidationError("Gauss-Laguerre n_nodes must lie in [2, 180]")
        x, w = laggauss(n_nodes)
        keep = np.isfinite(w) & (w > 1e-300)
        return x[keep], w[keep]
    if quadrature != "legendre":
        raise ValidationError(f"unknown quadrature {quadrature!r}")
    panels = max(1, int(n_nodes) // 5)
    g, gw = np.polynomial.legendre.leggauss(5)
    edges = np.concatenate([[0.0], np.geomspace(1e-9, 46.0, panels)])
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * g[None, :]).ravel()
    w = (half[:, None] * gw[None, :]).ravel() * np.exp(-x)
    return x, w / w.sum()


def ensemble_curve(T0, omega_z, species: IonSpecies, laser: LaserParams, duration, n_bins=100,
                   n_nodes=5000, other_modes=None, quadrature="legendre") -> RecoolCurve:
    """Recooling curve averaged over a thermal (exponential) 1D energy distribution at ``T0``."""
    _check_laser(laser)
    if not T0 > 0:
        raise ValidationError("temperature must be positive")
    _weak_binding(omega_z, laser, other_modes)
    x, w = thermal_nodes(n_nodes, quadrature)
    energies = CONSTANTS.boltzmann * T0 * x
    table = RecoolTable(laser, species, 1.001 * energies.max())
    edges = _bin_edges(duration, n_bins)
    e, nph = table.evolve(energies, edges)
    width = edges[1] - edges[0]
    rate = (w @ np.diff(nph, axis=1)) / width
    mean_e = w @ e
    return RecoolCurve(0.5 * (edges[1:] + edges[:-1]), rate, width, energy=mean_e,
                       reached_steady=bool(mean_e[-1] < 2.0 * table.e_d))


@dataclass
class FitResult:
    T0: float
    ci: tuple
    chi2: float
    doppler_temperature: float
    low_sensitivity: bool
    model: RecoolCurve = field(repr=False, default=None)


def fit_temperature(curve: RecoolCurve, omega_z, species: IonSpecies, laser: LaserParams,
                    T_bounds=None, n_nodes=5000, quadrature="legendre") -> FitResult:
    """Single-parameter weighted least-squares fit of the initial temperature.

    Data and model are both normalised by their final-bin mean. The
    confidence interval is 1 sigma from the chi-square curvature in ``ln T``;
    without count data it is scaled by the reduced chi-square.
    """
    if len(curve) < MIN_BINS:
        raise DegenerateFitError(f"need at least {MIN_BINS} bins, got {len(curve)}")
    data = curve.normalized
    if np.ptp(data) == 0:
        raise DegenerateFitError("fluorescence curve is exactly flat; it carries no temperature information")
    wts = curve.weights
    t_d = doppler_temperature(laser, species)
    lo, hi = (0.5 * t_d, 1e5 * t_d) if T_bounds is None else T_bounds
    duration = curve.bin_width * len(curve)
    if abs(curve.times[0] - 0.5 * curve.bin_width) > 1e-6 * curve.bin_width:
        raise ValidationError("curve must start at t = 0 (first bin centre at half a bin width)")

    def model(log_t):
        return ensemble_curve(math.exp(log_t), omega_z, species, laser, duration, len(curve),
                              n_nodes, quadrature=quadrature)

    def chi2(log_t):
        m = model(log_t).normalized
        return float(np.sum(wts * (data - m) ** 2))

    grid = np.linspace(math.log(lo), math.log(hi), 25)
    vals = [chi2(g) for g in grid]
    i = int(np.argmin(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = minimize_scalar(chi2, bounds=(a, b), method="bounded", options={"xatol": 1e-6})
    lt, c0 = float(res.x), float(res.fun)
    h = 1e-2
    curv = (chi2(lt + h) - 2 * c0 + chi2(lt - h)) / h ** 2
    dof = max(len(curve) - 1, 1)
    scale = 1.0 if curve.counts is not None else max(c0 / dof, 1e-30)
    sigma = math.sqrt(2.0 * scale / curv) if curv > 0 else math.inf
    low = bool(np.max(np.abs(data - 1.0)) < FLAT_THRESHOLD)
    return FitResult(math.exp(lt), (math.exp(lt - sigma), math.exp(lt + sigma)), c0, t_d, low,
                     model(lt))


def read_curve(path) -> RecoolCurve:
    """Read ``t_seconds,counts,bin_width`` CSV (header required) into a curve."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        header = next(reader, None)
        if header is None:
            raise ValidationError(f"{path}: empty curve file")
        names = [h.strip().lower() for h in header]
        try:
            it, ic, iw = (names.index(n) for n in ("t_seconds", "counts", "bin_width"))
        except ValueError:
            raise ValidationError(f"{path}: header must name t_seconds, counts, bin_width") from None
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                rows.append((float(row[it]), float(row[ic]), float(row[iw])))
            except (ValueError, IndexError):
                raise ValidationError(f"{path}:{lineno}: malformed row {row!r}") from None
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    arr = np.array(rows)
    widths = arr[:, 2]
    if np.ptp(widths) > 1e-9 * widths.mean():
        raise ValidationError(f"{path}: bins must be uniform")
    w = float(widths.mean())
    # bins start at the first timestamp; shift so the first bin centre is w/2
    t = arr[:, 0] - arr[0, 0] + 0.5 * w
    return RecoolCurve(t, arr[:, 1] / w, w, counts=arr[:, 1])

"""Axial potential engineering with segmented control electrodes.

Wells are specified by local Taylor coefficients of the composed axial
potential ``Phi(z) = sum_k V_k phi_k(z)`` about a centre ``z0``:
``Phi ~ c0 + c1 dz + c2 dz^2 + c3 dz^3 + c4 dz^4``. A harmonic well of
frequency ``w_z`` needs ``c1 = 0`` and ``c2 = m w_z^2 / (2 q)``; ``c4`` is the
quartic coefficient ``kappa4`` (V/m^4).

Achieved wells are always re-measured on the full geometry (bounded 1D
minimization plus finite differences), never read back from the fitted
Taylor model.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear, minimize_scalar

from .core import IonSpecies, PaultrapError, ValidationError
from .surface_fields import CONTROL, RF, PlanarGeometry, _unit

__all__ = [
    "AxialBasis",
    "WellSpec",
    "WellDiagnostics",
    "VoltageSequence",
    "InfeasibleWellError",
    "DegenerateBasisError",
    "SequenceError",
    "axial_basis",
    "solve_well",
    "measure_well",
    "transport_sequence",
    "separation_ramp",
    "DEFAULT_RAIL",
]

DEFAULT_RAIL = 10.0
FIT_POINTS = 7


class InfeasibleWellError(PaultrapError):
    def __init__(self, msg, voltages=None, residual=None):
        super().__init__(msg)
        self.voltages = voltages
        self.residual = residual


class DegenerateBasisError(PaultrapError):
    def __init__(self, msg, redundant=()):
        super().__init__(msg)
        self.redundant = tuple(redundant)


class SequenceError(PaultrapError):
    def __init__(self, msg, step):
        super().__init__(msg)
        self.step = step


@dataclass
class AxialBasis:
    """Unit-voltage potentials of the control electrodes along ``(x0, y0, z)``."""

    geometry: PlanarGeometry
    z: np.ndarray
    x0: float
    y0: float
    labels: tuple
    indices: tuple
    samples: np.ndarray  # (n_electrodes, n_z), volts per applied volt
    pitch: float
    null_verified: bool = True
    _deriv: np.ndarray = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def centers(self) -> np.ndarray:
        return np.array([0.5 * sum(self.geometry.electrodes[i].z_extent) for i in self.indices])

    @property
    def span(self):
        c = self.centers
        return float(c.min()), float(c.max())

    def compose(self, voltages) -> np.ndarray:
        """Composed axial potential on the grid."""
        return np.asarray(voltages, dtype=float) @ self.samples

    def taylor(self, z0, order=4) -> np.ndarray:
        """Per-electrode Taylor coefficients ``c_0..c_order`` about ``z0``, shape ``(n, order+1)``.

        Obtained by a degree-6 polynomial through the 7 grid samples nearest ``z0``.
        """
        if not self.z[0] <= z0 <= self.z[-1]:
            raise ValidationError("z0 outside the basis grid")
        i0 = int(np.searchsorted(self.z, z0))
        lo = min(max(i0 - FIT_POINTS // 2, 0), len(self.z) - FIT_POINTS)
        sl = slice(lo, lo + FIT_POINTS)
        dz = self.z[sl] - z0
        h = float(np.max(np.abs(dz))) or 1.0
        vander = np.vander(dz / h, FIT_POINTS, increasing=True)
        coef = np.linalg.solve(vander, self.samples[:, sl].T).T
        coef = coef / h ** np.arange(FIT_POINTS)
        return coef[:, : order + 1]

    @property
    def derivatives(self) -> np.ndarray:
        """Derivative samples ``d^k phi / dz^k`` for ``k = 0..4``, shape ``(n, 5, n_z)``."""
        if self._deriv is None:
            fact = np.array([math.factorial(k) for k in range(5)], dtype=float)
            out = np.empty((self.n, 5, len(self.z)))
            for j, zj in enumerate(self.z):
                out[:, :, j] = self.taylor(zj, 4) * fact
            self._deriv = out
        return self._deriv

    def full_biases(self, voltages) -> np.ndarray:
        """Static bias vector over all geometry electrodes (rf electrodes at 0 V dc)."""
        b = np.zeros(len(self.geometry))
        b[list(self.indices)] = np.asarray(voltages, dtype=float)
        return b

    def line_potential(self, voltages, z) -> np.ndarray:
        """Composed potential evaluated directly on the geometry (no grid)."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        pts = np.stack([np.full_like(z, self.x0), np.full_like(z, self.y0), z], axis=-1)
        return self.geometry.potential(pts, self.full_biases(voltages))


def axial_basis(geometry: PlanarGeometry, z_grid, y0: float, x0: float = 0.0,
                null_rtol: float = 1e-6) -> AxialBasis:
    """Sample each control electrode's unit-voltage potential along the axis.

    ``y0`` should be the rf-null height; if the rf field on the line is not
    negligible (relative to ``1 / length_scale``) the basis is flagged and a
    warning is issued, because transport along it carries micromotion.
    """
    z = np.asarray(z_grid, dtype=float)
    if z.ndim != 1 or len(z) < FIT_POINTS or np.any(np.diff(z) <= 0):
        raise ValidationError(f"z grid must be strictly increasing with >= {FIT_POINTS} points")
    if not y0 > 0:
        raise ValidationError("y0 must be above the surface")
    idx = tuple(i for i, e in enumerate(geometry.electrodes)
                if e.role == CONTROL and math.isfinite(e.z_extent[0]))
    if len(idx) < 3:
        raise ValidationError("need at least 3 segmented control electrodes along z")
    pts = np.stack([np.full_like(z, x0), np.full_like(z, y0), z], axis=-1)
    samples = np.stack([_unit(geometry.electrodes[i]).potential(pts) for i in idx])
    labels = tuple(geometry.labels[i] for i in idx)
    zc = np.sort([0.5 * sum(geometry.electrodes[i].z_extent) for i in idx])
    pitch = float(np.median(np.diff(zc)))

    rf = np.zeros(len(geometry))
    rf[geometry.role_indices(RF)] = 1.0
    e_rf = np.linalg.norm(geometry.gradient(pts[[0, len(z) // 2, -1]], rf), axis=-1)
    ok = bool(np.all(e_rf * geometry.length_scale() < null_rtol))
    if not ok:
        warnings.warn("axial line is not on the rf null; transport will carry micromotion",
                      stacklevel=2)
    return AxialBasis(geometry, z, float(x0), float(y0), labels, idx, samples, pitch, ok)


@dataclass(frozen=True)
class WellSpec:
    z0: float
    omega_z: float
    species: IonSpecies
    kappa4: float | None = None

    def __post_init__(self):
        if not self.omega_z >= 0:
            raise ValidationError("omega_z must be non-negative")
        if self.omega_z == 0 and not (self.kappa4 is not None and self.kappa4 > 0):
            raise ValidationError("a zero-curvature well needs kappa4 > 0")

    @property
    def c2(self) -> float:
        return curvature_coefficient(self.species, self.omega_z)


def curvature_coefficient(species: IonSpecies, omega_z) -> float:
    """Quadratic coefficient (V/m^2) of an axial well with frequency ``omega_z``."""
    return species.mass * omega_z ** 2 / (2.0 * species.charge)


@dataclass
class WellDiagnostics:
    z0: float
    omega_z: float  # nan if the curvature is not positive
    c2: float
    kappa4: float
    minima: tuple = ()
    barrier_ev: float = 0.0


def _redundant(basis, cols):
    out = []
    norms = np.linalg.norm(cols, axis=0)
    for i in range(cols.shape[1]):
        if norms[i] < 1e-12 * norms.max():
            out.append(basis.labels[i])
            continue
        for j in range(i + 1, cols.shape[1]):
            if norms[j] > 0:
                c = abs(cols[:, i] @ cols[:, j]) / (norms[i] * norms[j])
                if c > 1 - 1e-10:
                    out.append(basis.labels[j])
    return sorted(set(out))


def _solve(basis: AxialBasis, z0, targets: dict, rails, reg, window=None):
    """Minimum-norm voltages meeting Taylor targets ``{order: value}``."""
    lo, hi = basis.span
    if not lo - 1e-12 <= z0 <= hi + 1e-12:
        raise ValidationError(f"well centre {z0:.4g} m outside the electrode span [{lo:.4g}, {hi:.4g}]")
    if window is None:
        coef = basis.taylor(z0, max(targets))
        a = np.array([coef[:, k] for k in sorted(targets)])
        b = np.array([targets[k] for k in sorted(targets)])
    else:
        sel = np.abs(basis.z - z0) <= window / 2
        if sel.sum() < len(targets) + 2:
            raise ValidationError("matching window holds too few grid points")
        dz = basis.z[sel] - z0
        # free offset: project out the mean from both sides
        a = basis.samples[:, sel].T
        b = sum(targets.get(k, 0.0) * dz ** k for k in range(2, 7))
        a = a - a.mean(axis=0)
        b = b - b.mean()
    scale = np.linalg.norm(a, axis=1)
    scale[scale == 0] = 1.0
    a = a / scale[:, None]
    b = b / scale
    sv = np.linalg.svd(a, compute_uv=False)
    if sv.min() < 1e-10 * sv.max():
        raise DegenerateBasisError("basis cannot realise independent well constraints",
                                   redundant=_redundant(basis, a))
    u = np.linalg.lstsq(a, b, rcond=None)[0]
    if np.max(np.abs(u)) > rails:
        lam = reg * sv.max()
        aa = np.vstack([a, lam * np.eye(basis.n)])
        bb = np.concatenate([b, np.zeros(basis.n)])
        res = lsq_linear(aa, bb, bounds=(-rails, rails), method="bvls", tol=1e-14)
        u = res.x
    resid = float(np.linalg.norm(a @ u - b) / max(np.linalg.norm(b), 1e-300))
    return u, resid


def solve_well(basis: AxialBasis, spec: WellSpec, rails: float = DEFAULT_RAIL,
               tol: float = 1e-6, reg: float = 1e-8, window: float | None = None):
    """Control voltages for a well at ``spec.z0`` within ``+/- rails`` volts.

    Returns ``(voltages, residual)``; the residual is the relative mismatch of
    the (row-normalised) constraint system. ``window`` switches from point
    matching to least squares over a window of that width.
    """
    targets = {1: 0.0, 2: spec.c2}
    if spec.kappa4 is not None:
        targets[3] = 0.0
        targets[4] = spec.kappa4
    return _checked(basis, spec.z0, targets, rails, tol, reg, window)


def _checked(basis, z0, targets, rails, tol, reg, window=None):
    if not rails > 0:
        raise ValidationError("rails must be positive")
    u, resid = _solve(basis, z0, targets, rails, reg, window)
    if resid > tol:
        raise InfeasibleWellError(
            f"well at z0 = {z0:.4g} m not reachable within +/-{rails:g} V "
            f"(relative residual {resid:.2e})", voltages=u, residual=resid)
    return u, resid


def measure_well(basis: AxialBasis, voltages, species: IonSpecies, z_guess: float,
                 search: float | None = None) -> WellDiagnostics:
    """Independent well measurement on the geometry.

    Finds the local minimum near ``z_guess`` with a bounded scalar search
    and takes curvature and quartic terms from central finite differences.
    If ``z_guess`` is a local maximum, the two flanking minima are located
    and the barrier height is returned in eV.
    """
    p = basis.pitch
    search = 2 * p if search is None else search

    def f(z):
        return float(basis.line_potential(voltages, z)[0])

    h2, h4 = 2e-3 * p, 4e-2 * p

    def d2(z):
        return (f(z + h2) - 2 * f(z) + f(z - h2)) / h2 ** 2

    def d4(z):
        return (f(z + 2 * h4) - 4 * f(z + h4) + 6 * f(z) - 4 * f(z - h4) + f(z - 2 * h4)) / h4 ** 4

    curv0 = d2(z_guess)
    q_e = species.charge_number
    if curv0 < 0 and abs(curv0) * p ** 2 > 1e-9 * max(abs(f(z_guess)), 1e-30):
        opts = {"xatol": 1e-9 * p}
        left = minimize_scalar(f, bounds=(z_guess - search, z_guess), method="bounded", options=opts)
        right = minimize_scalar(f, bounds=(z_guess, z_guess + search), method="bounded", options=opts)
        peak = minimize_scalar(lambda z: -f(z), bounds=(left.x, right.x), method="bounded",
                               options=opts)
        barrier = q_e * (f(peak.x) - max(left.fun, right.fun))
        zm = 0.5 * (left.x + right.x)
        return WellDiagnostics(zm, float("nan"), 0.5 * d2(peak.x), d4(peak.x) / 24.0,
                               (float(left.x), float(right.x)), float(barrier))
    res = minimize_scalar(f, bounds=(z_guess - search / 4, z_guess + search / 4), method="bounded",
                          options={"xatol": 1e-9 * p})
    z0 = float(res.x)
    c2 = 0.5 * d2(z0)
    k4 = d4(z0) / 24.0
    w = math.sqrt(2 * species.charge * c2 / species.mass) if c2 > 0 else float("nan")
    return WellDiagnostics(z0, w, c2, k4, (z0,), 0.0)


@dataclass
class VoltageSequence:
    labels: tuple
    voltages: np.ndarray  # (n_steps, n_electrodes)
    times: np.ndarray
    targets: np.ndarray  # requested centres
    diagnostics: list
    omega_target: float | None = None
    duration: float | None = None

    @property
    def n_steps(self) -> int:
        return len(self.voltages)

    @property
    def max_omega_deviation(self) -> float:
        if not self.omega_target:
            return float("nan")
        w = np.array([d.omega_z for d in self.diagnostics])
        return float(np.max(np.abs(w / self.omega_target - 1.0)))

    @property
    def adiabaticity(self) -> float | None:
        """Secular radians accumulated over the sequence, ``duration * w_z``."""
        if self.duration is None or not self.omega_target:
            return None
        return self.duration * self.omega_target

    @property
    def step_adiabaticity(self) -> float | None:
        """Per-step duration in units of ``1 / w_z``."""
        a = self.adiabaticity
        return None if a is None else a / max(self.n_steps - 1, 1)

    def header(self):
        return ["step", "time"] + [f"V_{l}" for l in self.labels] + ["z0_achieved", "omega_z_achieved"]

    def to_rows(self):
        for k, (t, v, d) in enumerate(zip(self.times, self.voltages, self.diagnostics)):
            yield [k, float(t)] + [float(x) for x in v] + [d.z0, d.omega_z]


def _times(steps, duration):
    if duration is None:
        return np.arange(steps, dtype=float)
    if not duration > 0:
        raise ValidationError("duration must be positive")
    return np.linspace(0.0, duration, steps)


def transport_sequence(basis: AxialBasis, z_start, z_end, steps: int, omega_z: float,
                       species: IonSpecies, duration: float | None = None,
                       rails: float = DEFAULT_RAIL, tol: float = 1e-6) -> VoltageSequence:
    """Move a well of constant ``omega_z`` from ``z_start`` to ``z_end``.

    Centres are interpolated linearly. ``duration`` (s) is optional; without
    it the timestamps are plain step indices and no adiabaticity is reported.
    """
    if int(steps) != steps or steps < 2:
        raise ValidationError("need at least 2 steps")
    if not omega_z > 0:
        raise ValidationError("transport needs omega_z > 0")
    centres = np.linspace(z_start, z_end, int(steps))
    volts, diags = [], []
    for k, zc in enumerate(centres):
        try:
            u, _ = solve_well(basis, WellSpec(float(zc), omega_z, species), rails, tol)
        except (InfeasibleWellError, DegenerateBasisError, ValidationError) as exc:
            raise SequenceError(f"step {k} (z0 = {zc:.4g} m): {exc}", k) from exc
        volts.append(u)
        diags.append(measure_well(basis, u, species, float(zc)))
    return VoltageSequence(basis.labels, np.array(volts), _times(int(steps), duration), centres,
                           diags, omega_z, duration)


def separation_ramp(basis: AxialBasis, z0: float, stages: int, omega_z: float,
                    species: IonSpecies, kappa4: float | None = None,
                    rails: float = DEFAULT_RAIL, tol: float = 1e-6,
                    duration: float | None = None) -> VoltageSequence:
    """Single well -> quartic point -> symmetric double well at fixed ``kappa4``.

    ``c2`` runs linearly from ``+c2(omega_z)`` to ``-c2(omega_z)`` over an odd
    number of stages so the middle stage has exactly zero curvature. The
    default ``kappa4`` puts the final minima about one pitch either side of ``z0``.
    """
    if int(stages) != stages or stages < 3 or stages % 2 == 0:
        raise ValidationError("stages must be an odd integer >= 3")
    c20 = curvature_coefficient(species, omega_z)
    if not c20 > 0:
        raise ValidationError("omega_z must be positive")
    if kappa4 is None:
        kappa4 = c20 / (2.0 * basis.pitch ** 2)
    if not kappa4 > 0:
        raise ValidationError("kappa4 must be positive")
    c2s = np.linspace(c20, -c20, int(stages))
    c2s[int(stages) // 2] = 0.0
    volts, diags = [], []
    for k, c2 in enumerate(c2s):
        try:
            u, _ = _checked(basis, z0, {1: 0.0, 2: float(c2), 3: 0.0, 4: kappa4}, rails, tol, 1e-8)
        except (InfeasibleWellError, DegenerateBasisError) as exc:
            raise InfeasibleWellError(f"separation stage {k}: {exc}",
                                      getattr(exc, "voltages", None),
                                      getattr(exc, "residual", None)) from exc
        volts.append(u)
        diags.append(measure_well(basis, u, species, z0))
    return VoltageSequence(basis.labels, np.array(volts), _times(int(stages), duration),
                           np.full(int(stages), z0), diags, None, duration)

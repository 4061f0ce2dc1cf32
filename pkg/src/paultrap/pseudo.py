"""Pseudopotential construction, rf nulls, secular modes and trap depth.

The pseudopotential of an rf field ``E(r) cos(Omega t)`` is
``q |E|^2 / (4 m Omega^2)`` (volts). Electrodes driven with different rf phases
are handled with a phasor field ``E_c = E_r + i E_i``; the time average of
``|E|^2`` then becomes ``|E_r|^2 + |E_i|^2``.

Energies returned by public functions are in eV (potential energy divided by
the elementary charge); positions are SI metres.
"""
from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import minimum_filter

from .core import (
    CONSTANTS,
    DomainError,
    IonSpecies,
    SearchError,
    UnstableEquilibriumError,
    ValidationError,
)
from .surface_fields import RF, PlanarGeometry

logger = logging.getLogger(__name__)

__all__ = [
    "RfDrive",
    "PseudoModel",
    "ModeSolution",
    "TrapDepthResult",
    "QuadrupoleTrapModel",
    "CoolingReport",
    "UniformStatic",
    "QuadraticStatic",
    "pseudopotential_at",
    "find_rf_null",
    "guess_null",
    "find_equilibrium",
    "secular_modes",
    "quadrupole_radial_frequency",
    "trap_depth",
    "intrinsic_axes",
    "cooling_geometry_check",
    "four_wire_frequency",
    "five_wire_frequency",
    "four_wire_saddle_height",
    "five_wire_saddle_height",
    "four_wire_depth",
    "five_wire_depth",
    "DEGENERACY_RTOL",
]

DEGENERACY_RTOL = 1e-6


@dataclass(frozen=True)
class RfDrive:
    amplitude: float
    omega_rf: float

    def __post_init__(self):
        if not self.amplitude > 0:
            raise ValidationError(f"rf amplitude must be positive, got {self.amplitude}")
        if not self.omega_rf > 0:
            raise ValidationError(f"rf frequency must be positive, got {self.omega_rf}")


class UniformStatic:
    """Static potential ``-E . r`` of a uniform field ``E`` (V/m)."""

    def __init__(self, field):
        self.field = np.asarray(field, dtype=float).reshape(3)

    def potential(self, p):
        return -np.asarray(p, dtype=float) @ self.field

    def gradient(self, p):
        p = np.asarray(p, dtype=float)
        return np.broadcast_to(-self.field, p.shape).copy()

    def hessian(self, p):
        p = np.asarray(p, dtype=float)
        return np.zeros(p.shape[:-1] + (3, 3))


class QuadraticStatic:
    """Static potential ``0.5 (r - c)^T M (r - c)`` with symmetric ``M`` (V/m^2)."""

    def __init__(self, matrix, center=(0.0, 0.0, 0.0)):
        m = np.asarray(matrix, dtype=float)
        if m.shape == (2, 2):
            m3 = np.zeros((3, 3))
            m3[:2, :2] = m
            m = m3
        self.matrix = 0.5 * (m + m.T)
        self.center = np.asarray(center, dtype=float).reshape(3)

    def potential(self, p):
        r = np.asarray(p, dtype=float) - self.center
        return 0.5 * np.einsum("...i,ij,...j->...", r, self.matrix, r)

    def gradient(self, p):
        r = np.asarray(p, dtype=float) - self.center
        return r @ self.matrix

    def hessian(self, p):
        p = np.asarray(p, dtype=float)
        return np.broadcast_to(self.matrix, p.shape[:-1] + (3, 3)).copy()


class _ControlOffset:
    """All non-rf surface (ground plane and control electrodes) raised by ``offset``.

    The resulting static potential is ``offset * (1 - sum_rf phi_i)``; with equal
    rf electrode weights it has the same spatial shape as the rf potential.
    """

    def __init__(self, geometry, offset):
        self.geometry = geometry
        self.offset = float(offset)
        w = np.zeros(len(geometry))
        w[geometry.role_indices(RF)] = -self.offset
        self.weights = w

    def potential(self, p):
        return self.offset + self.geometry.potential(p, self.weights)

    def gradient(self, p):
        return self.geometry.gradient(p, self.weights)

    def hessian(self, p):
        return self.geometry.hessian(p, self.weights)


class PseudoModel:
    """Effective potential of an ion above a planar electrode geometry.

    ``rf`` electrodes are driven at ``drive.amplitude`` times their ``bias``
    (a relative weight, normally 1) with their ``rf_phase``. ``static_biases``
    gives dc voltages for every electrode (default: zero). Extra static
    sources are objects with ``potential``/``gradient``/``hessian`` methods.
    """

    def __init__(self, geometry: PlanarGeometry, drive: RfDrive, species: IonSpecies,
                 static_biases=None, statics=()):
        self.geometry = geometry
        self.drive = drive
        self.species = species
        n = len(geometry)
        rf_idx = geometry.role_indices(RF)
        if not rf_idx:
            raise ValidationError("geometry has no rf electrodes")
        w_re = np.zeros(n)
        w_im = np.zeros(n)
        for i in rf_idx:
            e = geometry.electrodes[i]
            w_re[i] = drive.amplitude * e.bias * math.cos(e.rf_phase)
            w_im[i] = drive.amplitude * e.bias * math.sin(e.rf_phase)
        self._rf_weights = [w_re]
        if np.any(np.abs(w_im) > 1e-15 * np.abs(w_re).max()):
            self._rf_weights.append(w_im)
        if static_biases is None:
            self.static_biases = np.zeros(n)
        else:
            self.static_biases = np.asarray(static_biases, dtype=float)
            if self.static_biases.shape != (n,):
                raise ValidationError(f"expected {n} static biases, got {self.static_biases.shape}")
        self.statics = tuple(statics)
        self.dim = 2 if geometry.is_2d else 3
        self.length_scale = geometry.length_scale()

    # convenience constructors -------------------------------------------
    def with_statics(self, *extra) -> "PseudoModel":
        return PseudoModel(self.geometry, self.drive, self.species, self.static_biases,
                           self.statics + tuple(extra))

    def with_static_biases(self, biases) -> "PseudoModel":
        return PseudoModel(self.geometry, self.drive, self.species, biases, self.statics)

    def translated(self, dx) -> "PseudoModel":
        return PseudoModel(self.geometry.translated(dx), self.drive, self.species,
                           self.static_biases, self.statics)

    @property
    def _pp_prefactor(self):
        # Phi_pp = prefactor * <|E|^2>*2, with <cos^2> folded in: q/(4 m Omega^2)
        return self.species.charge / (4.0 * self.species.mass * self.drive.omega_rf ** 2)

    # rf field -------------------------------------------------------------
    def rf_field_amplitude(self, p):
        """Phasor components of the rf field amplitude (V/m), list of ``(..., 3)``."""
        return [-self.geometry.gradient(p, w) for w in self._rf_weights]

    def rf_field_sq(self, p):
        return sum(np.sum(g * g, axis=-1) for g in self.rf_field_amplitude(p))

    def pseudopotential(self, p):
        """Pseudopotential in volts."""
        p = _point3(p)
        return self._pp_prefactor * self.rf_field_sq(p)

    def static_potential(self, p):
        p = _point3(p)
        v = self.geometry.potential(p, self.static_biases) if np.any(self.static_biases) else 0.0
        for s in self.statics:
            v = v + s.potential(p)
        return v

    def energy(self, p):
        """Total potential energy ``q (Phi_pp + Phi_static)`` in eV."""
        return self.species.charge_number * (self.pseudopotential(p) + self.static_potential(p))

    def energy_gradient(self, p):
        """Gradient of the potential energy, J/m."""
        p = _point3(p)
        g = np.zeros(3)
        for w in self._rf_weights:
            gr = self.geometry.gradient(p, w)
            h = self.geometry.hessian(p, w)
            g = g + 2.0 * self._pp_prefactor * (h @ gr)
        if np.any(self.static_biases):
            g = g + self.geometry.gradient(p, self.static_biases)
        for s in self.statics:
            g = g + s.gradient(p)
        return self.species.charge * g

    def energy_hessian(self, p):
        """Hessian of the potential energy, J/m^2."""
        p = _point3(p)
        hess = np.zeros((3, 3))
        for w in self._rf_weights:
            gr = self.geometry.gradient(p, w)
            h = self.geometry.hessian(p, w)
            term = h @ h
            if np.any(gr != 0.0):
                t = self.geometry.third(p, w)
                term = term + np.einsum("k,kij->ij", gr, t)
            hess = hess + 2.0 * self._pp_prefactor * term
        if np.any(self.static_biases):
            hess = hess + self.geometry.hessian(p, self.static_biases)
        for s in self.statics:
            hess = hess + s.hessian(p)
        return self.species.charge * 0.5 * (hess + hess.T)


def _point3(p):
    p = np.asarray(p, dtype=float)
    if p.shape[-1] == 2:
        p = np.concatenate([p, np.zeros(p.shape[:-1] + (1,))], axis=-1)
    return p


def _check_domain(p):
    if not p[1] > 0:
        raise DomainError(f"point {p} is not in the half-space y > 0")


def pseudopotential_at(model: PseudoModel, point) -> float:
    """Pseudopotential energy in eV at ``point``."""
    p = _point3(point)
    if np.any(~(p[..., 1] > 0)):
        raise DomainError("pseudopotential requires y > 0")
    return model.species.charge_number * model.pseudopotential(p)


# --- nulls and stationary points --------------------------------------------


def guess_null(model: PseudoModel, n=61):
    """Coarse grid minimum of the pseudopotential, a starting point for :func:`find_rf_null`."""
    lo, hi = model.geometry.x_span()
    width = hi - lo
    xs = np.linspace(lo - 0.25 * width, hi + 0.25 * width, n)
    ys = np.linspace(0.02 * width, 2.0 * width, n)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([X, Y, np.zeros_like(X)], axis=-1)
    if model.dim == 3:
        zlo = [e.z_extent[0] for e in model.geometry.patches]
        zhi = [e.z_extent[1] for e in model.geometry.patches]
        pts[..., 2] = 0.5 * (min(zlo) + max(zhi))
    v = model.pseudopotential(pts)
    # the field decays far from the electrodes, so the grid border can undercut the
    # true null; prefer interior local minima
    local = (v == minimum_filter(v, size=3, mode="nearest"))
    local[[0, -1], :] = False
    local[:, [0, -1]] = False
    masked = np.where(local, v, np.inf) if local.any() else v
    i, j = np.unravel_index(int(np.argmin(masked)), v.shape)
    return pts[i, j]


def find_rf_null(model: PseudoModel, guess, tol=1e-9, max_iter=100):
    """Locate a zero of the rf field by damped Newton iteration.

    Converged when ``|E| < tol * amplitude / length_scale``.
    """
    d = model.dim
    p = _point3(guess).copy()
    _check_domain(p)
    weights = model._rf_weights
    scale = model.drive.amplitude / model.length_scale
    threshold = tol * scale

    def resid(q):
        return np.concatenate([model.geometry.gradient(q, w)[:d] for w in weights])

    def norm(q):
        return float(np.linalg.norm(resid(q)))

    best = p.copy()
    r = norm(p)
    for _ in range(max_iter):
        if r < threshold:
            return p
        jac = np.vstack([model.geometry.hessian(p, w)[:d, :d] for w in weights])
        step = np.linalg.lstsq(jac, -resid(p), rcond=None)[0]
        alpha = 1.0
        for _ in range(40):
            trial = p.copy()
            trial[:d] += alpha * step
            if trial[1] > 0:
                rt = norm(trial)
                if rt < r:
                    break
            alpha *= 0.5
        else:
            break
        p, r = trial, rt
        best = p.copy()
    if r < threshold:
        return p
    raise SearchError(f"rf null search did not converge (|E| = {r:.3e} V/m)", best=best)


def _newton_stationary(grad, hess, x0, d, tol, max_iter=100, mode="any"):
    """Newton iteration on ``grad = 0`` in the first ``d`` coordinates."""
    x = x0.copy()
    g = grad(x)[:d]
    gn = float(np.linalg.norm(g))
    for _ in range(max_iter):
        if gn < tol:
            return x, gn
        h = hess(x)[:d, :d]
        try:
            step = -np.linalg.solve(h, g)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(h, g, rcond=None)[0]
        if mode == "min":
            w, v = np.linalg.eigh(h)
            if w.min() <= 0:
                step = -(v @ ((v.T @ g) / np.maximum(np.abs(w), 1e-12 * np.abs(w).max())))
        alpha = 1.0
        for _ in range(40):
            xt = x.copy()
            xt[:d] += alpha * step
            if xt[1] > 0:
                gt = grad(xt)[:d]
                gtn = float(np.linalg.norm(gt))
                if gtn < gn:
                    break
            alpha *= 0.5
        else:
            return x, gn
        x, g, gn = xt, gt, gtn
    return x, gn


def _force_scale(model):
    # natural force scale: q * amplitude / L times a pseudopotential-sized factor
    q = model.species.charge
    a = model.drive.amplitude
    L = model.length_scale
    return q * model._pp_prefactor * a * a / L ** 3


def find_equilibrium(model: PseudoModel, guess, tol=1e-10, max_iter=100):
    """Minimum of the total effective potential near ``guess``."""
    x0 = _point3(guess).copy()
    _check_domain(x0)
    threshold = tol * _force_scale(model)
    x, gn = _newton_stationary(model.energy_gradient, model.energy_hessian, x0, model.dim,
                               threshold, max_iter, mode="min")
    if gn > threshold:
        raise SearchError(f"equilibrium search did not converge (|F| = {gn:.3e} N)", best=x)
    return x


# --- modes -------------------------------------------------------------------


@dataclass
class ModeSolution:
    position: np.ndarray
    frequencies: np.ndarray  # rad/s, ascending
    axes: np.ndarray  # rows are unit mode directions (3-vectors)
    axis_angles: np.ndarray  # angle to the surface normal, [0, pi/2]
    degenerate: np.ndarray  # per-mode flag; axes within a degenerate group are arbitrary
    hessian: np.ndarray = field(repr=False, default=None)

    @property
    def has_degeneracy(self) -> bool:
        return bool(np.any(self.degenerate))

    @property
    def frequencies_hz(self):
        return self.frequencies / (2 * math.pi)

    @property
    def splitting(self) -> float:
        """Spread of the lowest two frequencies (rad/s)."""
        if len(self.frequencies) < 2:
            return 0.0
        return float(self.frequencies[1] - self.frequencies[0])


def _modes_from_hessian(position, hess, mass, dim, rtol=DEGENERACY_RTOL):
    h = hess[:dim, :dim]
    w, v = np.linalg.eigh(h)
    scale = np.abs(w).max() if np.abs(w).max() > 0 else 1.0
    neg = w < -1e-9 * scale
    if np.any(neg):
        k = int(np.argmin(w))
        direction = np.zeros(3)
        direction[:dim] = v[:, k]
        raise UnstableEquilibriumError(
            f"effective potential has negative curvature {w[k]:.3e} J/m^2 along {direction}",
            direction=direction, eigenvalue=float(w[k]))
    freqs = np.sqrt(np.clip(w, 0.0, None) / mass)
    axes = np.zeros((dim, 3))
    axes[:, :dim] = v.T
    angles = np.arccos(np.clip(np.abs(axes[:, 1]), 0.0, 1.0))
    deg = np.zeros(dim, dtype=bool)
    for i in range(dim - 1):
        hi = max(freqs[i], freqs[i + 1])
        if hi > 0 and (freqs[i + 1] - freqs[i]) <= rtol * hi:
            deg[i] = deg[i + 1] = True
    return ModeSolution(np.array(position, dtype=float), freqs, axes, angles, deg, hess)


def secular_modes(model: PseudoModel, null, static_potential=None) -> ModeSolution:
    """Normal modes of the effective potential at an equilibrium point."""
    if static_potential is not None:
        model = model.with_statics(static_potential)
    p = _point3(null)
    _check_domain(p)
    hess = model.energy_hessian(p)
    return _modes_from_hessian(p, hess, model.species.mass, model.dim)


@dataclass(frozen=True)
class QuadrupoleTrapModel:
    """Ideal linear four-rod trap, potential ``V0/2 cos(Omega t) (1 + (x^2 - y^2)/R^2)``."""

    R: float
    V0: float
    omega_rf: float
    species: IonSpecies

    def __post_init__(self):
        if not self.R > 0:
            raise ValidationError("R must be positive")
        if not self.omega_rf > 0:
            raise ValidationError("rf frequency must be positive")


def quadrupole_radial_frequency(model: QuadrupoleTrapModel) -> float:
    """Radial secular frequency ``q V0 / (sqrt(2) m Omega R^2)`` in rad/s."""
    sp = model.species
    return sp.charge * model.V0 / (math.sqrt(2.0) * sp.mass * model.omega_rf * model.R ** 2)


# --- closed forms for the canonical surface traps ------------------------------


def four_wire_frequency(species, U, omega_rf, d):
    return species.charge * U / (math.sqrt(2.0) * species.mass * math.pi * omega_rf * d * d)


def five_wire_frequency(species, U, omega_rf, d):
    return math.sqrt(2.0 / 3.0) * species.charge * U / (species.mass * math.pi * omega_rf * d * d)


def four_wire_saddle_height(d):
    return d * math.sqrt(2.0 + math.sqrt(5.0))


def five_wire_saddle_height(d):
    return d * math.sqrt(0.75 + math.sqrt(3.0))


def _depth_prefactor(species, U, omega_rf):
    return species.charge * U * U / (4.0 * species.mass * omega_rf ** 2)


def four_wire_depth(species, U, omega_rf, d):
    """Well depth in eV."""
    v = _depth_prefactor(species, U, omega_rf) * 2.0 / (math.pi ** 2 * d * d * (11 + 5 * math.sqrt(5)))
    return species.charge_number * v


def five_wire_depth(species, U, omega_rf, d):
    v = _depth_prefactor(species, U, omega_rf) / (math.pi ** 2 * d * d * (7 + 4 * math.sqrt(3)))
    return species.charge_number * v


# --- trap depth ------------------------------------------------------------------


@dataclass
class TrapDepthResult:
    null: np.ndarray
    saddle: np.ndarray
    depth: float  # eV
    escape_direction: np.ndarray
    search_box: tuple
    method: str

    @property
    def depth_mev(self):
        return 1e3 * self.depth


def _is_saddle(model, p):
    h = model.energy_hessian(p)[: model.dim, : model.dim]
    w, v = np.linalg.eigh(h)
    scale = np.abs(w).max()
    neg = np.sum(w < -1e-9 * scale)
    return neg == 1, w, v


def _ray_scan(model, null, n=4000, extent=6.0):
    y0 = null[1]
    ys = np.linspace(y0, y0 * (1.0 + extent), n)
    pts = np.tile(null, (n, 1))
    pts[:, 1] = ys
    e = model.energy(pts)
    for i in range(1, n - 1):
        if e[i] > e[i - 1] and e[i] >= e[i + 1] and i > 1:
            return pts[i]
    return None


def _minimax_escape(model, null, box_factor=5.0, n=161):
    """Lowest barrier on a grid: priority flood from the null to the box edge."""
    y0 = null[1]
    half = box_factor * y0
    xs = np.linspace(null[0] - half, null[0] + half, n)
    ys = np.linspace(0.02 * y0, y0 + half, n)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([X, Y, np.full_like(X, null[2])], axis=-1)
    E = model.energy(pts)
    i0 = int(np.argmin(np.abs(xs - null[0])))
    j0 = int(np.argmin(np.abs(ys - null[1])))
    level = np.full(E.shape, np.inf)
    level[i0, j0] = E[i0, j0]
    heap = [(E[i0, j0], i0, j0)]
    done = np.zeros(E.shape, dtype=bool)
    while heap:
        lev, i, j = heapq.heappop(heap)
        if done[i, j]:
            continue
        done[i, j] = True
        if i in (0, n - 1) or j in (0, n - 1):
            # walk back is not needed: the bottleneck is the highest cell on the path
            bottleneck = lev
            break
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            a, b = i + di, j + dj
            if not done[a, b]:
                nl = max(lev, E[a, b])
                if nl < level[a, b]:
                    level[a, b] = nl
                    heapq.heappush(heap, (nl, a, b))
    else:
        return None, (xs[0], xs[-1], ys[0], ys[-1])
    # the saddle cell is the one attaining the bottleneck level inside the basin
    cand = np.argwhere(np.isclose(E, bottleneck, rtol=0, atol=0) & done)
    if len(cand) == 0:
        cand = np.argwhere(np.isclose(E, bottleneck))
    i, j = cand[0]
    return pts[i, j], (xs[0], xs[-1], ys[0], ys[-1])


def trap_depth(model: PseudoModel, null) -> TrapDepthResult:
    """Depth of the effective potential well around ``null`` (eV).

    First scans upward along the vertical line through the null, then refines
    the barrier maximum to a saddle point. If that fails, a minimax flood over
    a box five null-heights wide locates the lowest escape barrier.
    """
    null = _point3(null)
    _check_domain(null)
    e_null = float(model.energy(null))
    tol = 1e-12 * _force_scale(model)
    y0 = null[1]
    box = (null[0] - 6 * y0, null[0] + 6 * y0, 0.0, 7 * y0)

    def refine(start):
        s, gn = _newton_stationary(model.energy_gradient, model.energy_hessian, start,
                                   model.dim, tol, max_iter=100)
        ok, w, v = _is_saddle(model, s)
        if not ok or np.linalg.norm(s[: model.dim] - null[: model.dim]) < 1e-6 * y0:
            return None
        # accept only near-converged points
        if gn > 1e-6 * _force_scale(model):
            return None
        return s, w, v

    method = "ray"
    found = None
    start = _ray_scan(model, null)
    if start is not None:
        found = refine(start)
    if found is None:
        method = "grid"
        start, box = _minimax_escape(model, null)
        if start is None:
            raise SearchError("no escape saddle found within the search box", best=None)
        found = refine(start)
        if found is None:
            raise SearchError("saddle refinement failed", best=start)
    s, w, v = found
    k = int(np.argmin(w))
    direction = np.zeros(3)
    direction[: model.dim] = v[:, k]
    if direction @ (s - null) < 0:
        direction = -direction
    depth = float(model.energy(s)) - e_null
    return TrapDepthResult(null, s, depth, direction, box, method)


# --- principal axes -------------------------------------------------------------


def intrinsic_axes(model: PseudoModel, control_offset: float, null=None) -> ModeSolution:
    """Modes after raising every non-rf part of the surface by ``control_offset`` volts.

    That static potential has the spatial shape of the rf potential, so it
    leaves the rf null in place and rotates the radial modes onto the
    eigen-directions of the rf potential curvature.
    """
    if null is None:
        raise ValidationError("intrinsic_axes needs the rf null of the unperturbed model")
    null = _point3(null)
    if control_offset == 0.0:
        return secular_modes(model, null)
    perturbed = model.with_statics(_ControlOffset(model.geometry, control_offset))
    eq = find_equilibrium(perturbed, null)
    return secular_modes(perturbed, eq)


@dataclass
class CoolingReport:
    overlaps: np.ndarray
    flagged: list
    degenerate: bool
    threshold: float
    messages: list

    @property
    def ok(self) -> bool:
        return not self.flagged and not self.degenerate


def cooling_geometry_check(modes: ModeSolution, beam_direction, threshold=0.05) -> CoolingReport:
    """Projection of a cooling beam on each principal axis."""
    k = np.asarray(beam_direction, dtype=float).reshape(-1)
    if k.size == 2:
        k = np.append(k, 0.0)
    if k.size != 3 or abs(np.linalg.norm(k) - 1.0) > 1e-9:
        raise ValidationError("beam direction must be a unit 3-vector")
    overlaps = modes.axes @ k
    flagged = [i for i, o in enumerate(overlaps) if abs(o) < threshold]
    messages = []
    for i in flagged:
        messages.append(
            f"mode {i + 1} ({modes.frequencies_hz[i] / 1e6:.4g} MHz) has beam overlap "
            f"{overlaps[i]:+.3g} < {threshold}: not cooled")
    if modes.has_degeneracy:
        messages.append(
            "degenerate modes: principal axes are undetermined, motion perpendicular "
            "to the beam within the degenerate plane may not be cooled")
    return CoolingReport(overlaps, flagged, modes.has_degeneracy, threshold, messages)

"""Analytic electrostatics of electrodes embedded in a grounded plane.

The plane is ``y = 0`` and ions live in ``y > 0``. Two electrode shapes are
supported:

* infinite strips along ``z`` spanning ``a < x < b`` (one edge may be infinite),
* axis-aligned rectangles ``x1 < x < x2``, ``z1 < z < z2``.

A unit-biased rectangle produces ``omega / (2 pi)`` where ``omega`` is the solid
angle it subtends at the observation point. For a rectangle this is a sum of
four corner terms ``atan(X Z / (y R))`` with ``X, Z`` the corner offsets and
``R`` the distance to the corner. Letting the z-extent run to infinity gives
the strip formula.

All functions accept arrays of points with the coordinate on the last axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import DomainError, ValidationError

__all__ = [
    "Strip",
    "RectPatch",
    "PlanarGeometry",
    "strip_potential",
    "strip_field",
    "strip_gradient",
    "strip_hessian",
    "strip_third",
    "rect_patch_potential",
    "rect_patch_gradient",
    "rect_patch_hessian",
    "geometry_potential",
    "four_wire",
    "five_wire",
    "segmented_five_wire",
    "RF",
    "CONTROL",
]

RF = "rf"
CONTROL = "control"
_ROLES = (RF, CONTROL)


@dataclass(frozen=True)
class Strip:
    a: float
    b: float
    bias: float = 1.0
    role: str = RF
    rf_phase: float = 0.0
    label: str = ""

    def __post_init__(self):
        a, b = float(self.a), float(self.b)
        if math.isnan(a) or math.isnan(b):
            raise ValidationError("strip edges must not be NaN")
        if not a < b:
            raise ValidationError(f"strip needs a < b, got ({a}, {b})")
        if math.isinf(a) and math.isinf(b):
            raise ValidationError("at most one strip edge may be infinite")
        if a == math.inf or b == -math.inf:
            raise ValidationError("infinite edges must be a=-inf or b=+inf")
        if self.role not in _ROLES:
            raise ValidationError(f"role must be one of {_ROLES}, got {self.role!r}")
        if not 0.0 <= self.rf_phase < 2 * math.pi:
            raise ValidationError("rf_phase must lie in [0, 2 pi)")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def x_extent(self):
        return (self.a, self.b)

    @property
    def z_extent(self):
        return (-math.inf, math.inf)

    def translated(self, dx):
        return replace(self, a=self.a + dx, b=self.b + dx)

    def scaled(self, factor):
        return replace(self, a=self.a * factor, b=self.b * factor)

    def potential(self, points):
        return strip_potential(self, _xy(points))

    def gradient(self, points):
        return _pad3(strip_gradient(self, _xy(points)))

    def hessian(self, points):
        return _pad3x3(strip_hessian(self, _xy(points)))

    def third(self, points):
        return _pad3x3x3(strip_third(self, _xy(points)))


@dataclass(frozen=True)
class RectPatch:
    x1: float
    x2: float
    z1: float
    z2: float
    bias: float = 1.0
    role: str = CONTROL
    rf_phase: float = 0.0
    label: str = ""

    def __post_init__(self):
        vals = [float(v) for v in (self.x1, self.x2, self.z1, self.z2)]
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError("rectangle corners must be finite")
        if not (vals[0] < vals[1] and vals[2] < vals[3]):
            raise ValidationError(f"rectangle must have positive area, got {vals}")
        if self.role not in _ROLES:
            raise ValidationError(f"role must be one of {_ROLES}, got {self.role!r}")
        if not 0.0 <= self.rf_phase < 2 * math.pi:
            raise ValidationError("rf_phase must lie in [0, 2 pi)")
        for name, v in zip(("x1", "x2", "z1", "z2"), vals):
            object.__setattr__(self, name, v)

    @property
    def x_extent(self):
        return (self.x1, self.x2)

    @property
    def z_extent(self):
        return (self.z1, self.z2)

    def translated(self, dx, dz=0.0):
        return replace(self, x1=self.x1 + dx, x2=self.x2 + dx, z1=self.z1 + dz, z2=self.z2 + dz)

    def scaled(self, factor):
        return replace(self, x1=self.x1 * factor, x2=self.x2 * factor,
                       z1=self.z1 * factor, z2=self.z2 * factor)

    def potential(self, points):
        return rect_patch_potential(self, points)

    def gradient(self, points):
        return rect_patch_gradient(self, points)

    def hessian(self, points):
        return rect_patch_hessian(self, points)

    def third(self, points, step=None):
        # third derivatives by central differences of the analytic Hessian
        p = np.asarray(points, dtype=float)
        if step is None:
            step = 1e-4 * np.maximum(p[..., 1], 1e-12)
        step = np.asarray(step, dtype=float)
        out = np.empty(p.shape[:-1] + (3, 3, 3))
        for k in range(3):
            dp = np.zeros(p.shape)
            dp[..., k] = step
            out[..., k, :, :] = (self.hessian(p + dp) - self.hessian(p - dp)) / (2 * step[..., None, None])
        return out


def _check_half_space(y):
    if np.any(~(np.asarray(y) > 0)):
        raise DomainError("evaluation requires y > 0 (the trapping half-space)")


def _xy(points):
    p = np.asarray(points, dtype=float)
    return p[..., :2]


def _pad3(v2):
    out = np.zeros(v2.shape[:-1] + (3,))
    out[..., :2] = v2
    return out


def _pad3x3(h2):
    out = np.zeros(h2.shape[:-2] + (3, 3))
    out[..., :2, :2] = h2
    return out


def _pad3x3x3(t2):
    out = np.zeros(t2.shape[:-3] + (3, 3, 3))
    out[..., :2, :2, :2] = t2
    return out


# --- infinite strips -------------------------------------------------------
#
# With g(u, y) = atan(u / y), u = x - edge:
#   g_x = y / r^2, g_y = -u / r^2
#   g_xx = -2 u y / r^4 = -g_yy, g_xy = (u^2 - y^2) / r^4
# The strip potential is U/pi * [g(x - a) - g(x - b)] with the constant pi/2
# branches for an infinite edge, whose derivatives simply drop that edge.


def _edges(strip):
    terms = []
    if math.isfinite(strip.a):
        terms.append((strip.a, 1.0))
    if math.isfinite(strip.b):
        terms.append((strip.b, -1.0))
    return terms


def strip_potential(strip: Strip, point) -> np.ndarray:
    """Potential (V) of a biased strip at ``(x, y)``."""
    p = np.asarray(point, dtype=float)
    x, y = p[..., 0], p[..., 1]
    _check_half_space(y)
    if strip.a == -math.inf:
        val = 0.5 * math.pi - np.arctan((x - strip.b) / y)
    elif strip.b == math.inf:
        val = 0.5 * math.pi + np.arctan((x - strip.a) / y)
    else:
        val = np.arctan((x - strip.a) / y) - np.arctan((x - strip.b) / y)
    return strip.bias / math.pi * val


def strip_gradient(strip: Strip, point) -> np.ndarray:
    """Analytic gradient of :func:`strip_potential`, shape ``(..., 2)``."""
    p = np.asarray(point, dtype=float)
    x, y = p[..., 0], p[..., 1]
    _check_half_space(y)
    gx = np.zeros_like(x)
    gy = np.zeros_like(x)
    for edge, sign in _edges(strip):
        u = x - edge
        r2 = u * u + y * y
        gx = gx + sign * y / r2
        gy = gy - sign * u / r2
    return strip.bias / math.pi * np.stack([gx, gy], axis=-1)


def strip_field(strip: Strip, point) -> np.ndarray:
    """Electric field ``-grad(phi)`` in V/m, components ``(E_x, E_y)``."""
    return -strip_gradient(strip, point)


def strip_hessian(strip: Strip, point) -> np.ndarray:
    p = np.asarray(point, dtype=float)
    x, y = p[..., 0], p[..., 1]
    _check_half_space(y)
    hxx = np.zeros_like(x)
    hxy = np.zeros_like(x)
    for edge, sign in _edges(strip):
        u = x - edge
        r2 = u * u + y * y
        r4 = r2 * r2
        hxx = hxx - sign * 2.0 * u * y / r4
        hxy = hxy + sign * (u * u - y * y) / r4
    h = np.empty(x.shape + (2, 2))
    h[..., 0, 0] = hxx
    h[..., 1, 1] = -hxx
    h[..., 0, 1] = hxy
    h[..., 1, 0] = hxy
    return strip.bias / math.pi * h


def strip_third(strip: Strip, point) -> np.ndarray:
    """Third derivatives ``d3 phi / dx_i dx_j dx_k``, shape ``(..., 2, 2, 2)``."""
    p = np.asarray(point, dtype=float)
    x, y = p[..., 0], p[..., 1]
    _check_half_space(y)
    txxx = np.zeros_like(x)
    txxy = np.zeros_like(x)
    for edge, sign in _edges(strip):
        u = x - edge
        r2 = u * u + y * y
        r6 = r2 * r2 * r2
        txxx = txxx + sign * (6.0 * u * u * y - 2.0 * y ** 3) / r6
        txxy = txxy + sign * (6.0 * u * y * y - 2.0 * u ** 3) / r6
    t = np.empty(x.shape + (2, 2, 2))
    t[..., 0, 0, 0] = txxx
    t[..., 0, 0, 1] = t[..., 0, 1, 0] = t[..., 1, 0, 0] = txxy
    t[..., 0, 1, 1] = t[..., 1, 0, 1] = t[..., 1, 1, 0] = -txxx
    t[..., 1, 1, 1] = -txxy
    return strip.bias / math.pi * t


# --- rectangles ------------------------------------------------------------


def _corners(patch, p):
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    _check_half_space(y)
    for cx, sx in ((patch.x2, 1.0), (patch.x1, -1.0)):
        for cz, sz in ((patch.z2, 1.0), (patch.z1, -1.0)):
            yield sx * sz, cx - x, y, cz - z


def rect_patch_potential(patch: RectPatch, point) -> np.ndarray:
    """Potential (V) of a biased rectangle at ``(x, y, z)``."""
    p = np.asarray(point, dtype=float)
    total = 0.0
    for s, X, y, Z in _corners(patch, p):
        R = np.sqrt(X * X + Z * Z + y * y)
        total = total + s * np.arctan(X * Z / (y * R))
    return patch.bias / (2.0 * math.pi) * total


def rect_patch_gradient(patch: RectPatch, point) -> np.ndarray:
    p = np.asarray(point, dtype=float)
    gx = gy = gz = 0.0
    for s, X, y, Z in _corners(patch, p):
        R = np.sqrt(X * X + Z * Z + y * y)
        A = X * X + y * y
        B = Z * Z + y * y
        # X, Z are corner minus point, hence the sign flips for d/dx, d/dz
        gx = gx - s * Z * y / (R * A)
        gz = gz - s * X * y / (R * B)
        gy = gy - s * X * Z * (R * R + y * y) / (R * A * B)
    g = np.stack(np.broadcast_arrays(gx, gy, gz), axis=-1)
    return patch.bias / (2.0 * math.pi) * g


def rect_patch_hessian(patch: RectPatch, point) -> np.ndarray:
    p = np.asarray(point, dtype=float)
    hxx = hzz = hxz = hxy = hzy = 0.0
    for s, X, y, Z in _corners(patch, p):
        R2 = X * X + Z * Z + y * y
        R = np.sqrt(R2)
        R3 = R2 * R
        A = X * X + y * y
        B = Z * Z + y * y
        hxx = hxx - s * X * Z * y * (A + 2 * R2) / (R3 * A * A)
        hzz = hzz - s * X * Z * y * (B + 2 * R2) / (R3 * B * B)
        hxz = hxz + s * y / R3
        hxy = hxy - s * Z * (R2 * A - y * y * A - 2 * y * y * R2) / (R3 * A * A)
        hzy = hzy - s * X * (R2 * B - y * y * B - 2 * y * y * R2) / (R3 * B * B)
    hxx, hzz, hxz, hxy, hzy = np.broadcast_arrays(hxx, hzz, hxz, hxy, hzy)
    h = np.empty(hxx.shape + (3, 3))
    h[..., 0, 0] = hxx
    h[..., 2, 2] = hzz
    h[..., 1, 1] = -(hxx + hzz)
    h[..., 0, 2] = h[..., 2, 0] = hxz
    h[..., 0, 1] = h[..., 1, 0] = hxy
    h[..., 1, 2] = h[..., 2, 1] = hzy
    return patch.bias / (2.0 * math.pi) * h


# --- geometries ------------------------------------------------------------


def _overlap(e1, e2):
    (a1, b1), (a2, b2) = e1.x_extent, e2.x_extent
    (c1, d1), (c2, d2) = e1.z_extent, e2.z_extent
    return min(b1, b2) > max(a1, a2) and min(d1, d2) > max(c1, c2)


@dataclass(frozen=True)
class PlanarGeometry:
    """Electrodes in the ``y = 0`` plane; everything not covered is grounded.

    Each electrode's ``bias`` is its voltage when used as a static electrode
    or its rf amplitude scale when the role is ``rf``. Geometry evaluation in
    :func:`geometry_potential` takes an explicit bias vector instead.
    """

    strips: tuple = ()
    patches: tuple = ()
    name: str = ""
    _labels: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "strips", tuple(self.strips))
        object.__setattr__(self, "patches", tuple(self.patches))
        els = self.electrodes
        for i in range(len(els)):
            for j in range(i + 1, len(els)):
                if _overlap(els[i], els[j]):
                    raise ValidationError(
                        f"electrodes {els[i].label or i!r} and {els[j].label or j!r} overlap")
        labels = tuple(e.label or f"e{i}" for i, e in enumerate(els))
        if len(set(labels)) != len(labels):
            raise ValidationError(f"duplicate electrode labels: {labels}")
        object.__setattr__(self, "_labels", labels)

    @property
    def electrodes(self) -> tuple:
        return self.strips + self.patches

    @property
    def labels(self) -> tuple:
        return self._labels

    @property
    def is_2d(self) -> bool:
        """True when every electrode is z-invariant."""
        return not self.patches

    def __len__(self):
        return len(self.strips) + len(self.patches)

    def index(self, label) -> int:
        return self._labels.index(label)

    def role_indices(self, role) -> list:
        return [i for i, e in enumerate(self.electrodes) if e.role == role]

    def translated(self, dx, dz=0.0) -> "PlanarGeometry":
        return PlanarGeometry(
            tuple(s.translated(dx) for s in self.strips),
            tuple(p.translated(dx, dz) for p in self.patches),
            self.name,
        )

    def scaled(self, factor) -> "PlanarGeometry":
        return PlanarGeometry(
            tuple(s.scaled(factor) for s in self.strips),
            tuple(p.scaled(factor) for p in self.patches),
            self.name,
        )

    def with_electrodes(self, electrodes) -> "PlanarGeometry":
        """Same layout with replacement electrode objects (strips first, then patches)."""
        els = list(electrodes)
        ns = len(self.strips)
        return PlanarGeometry(tuple(els[:ns]), tuple(els[ns:]), self.name)

    def default_biases(self) -> np.ndarray:
        return np.array([e.bias for e in self.electrodes], dtype=float)

    def _bias_vector(self, biases):
        if biases is None:
            return self.default_biases()
        b = np.asarray(biases, dtype=float)
        if b.shape != (len(self),):
            raise ValidationError(f"expected {len(self)} biases, got shape {b.shape}")
        return b

    def unit_potentials(self, points) -> np.ndarray:
        """Per-electrode potential at unit bias, shape ``(n_electrodes, ...)``."""
        p = _as3(points)
        return np.stack([_unit(e).potential(p) for e in self.electrodes])

    def potential(self, points, biases=None):
        b = self._bias_vector(biases)
        p = _as3(points)
        out = np.zeros(p.shape[:-1])
        for bi, e in zip(b, self.electrodes):
            if bi != 0.0:
                out = out + bi * _unit(e).potential(p)
        return out

    def gradient(self, points, biases=None):
        b = self._bias_vector(biases)
        p = _as3(points)
        out = np.zeros(p.shape)
        for bi, e in zip(b, self.electrodes):
            if bi != 0.0:
                out = out + bi * _unit(e).gradient(p)
        return out

    def field(self, points, biases=None):
        return -self.gradient(points, biases)

    def hessian(self, points, biases=None):
        b = self._bias_vector(biases)
        p = _as3(points)
        out = np.zeros(p.shape[:-1] + (3, 3))
        for bi, e in zip(b, self.electrodes):
            if bi != 0.0:
                out = out + bi * _unit(e).hessian(p)
        return out

    def third(self, points, biases=None):
        b = self._bias_vector(biases)
        p = _as3(points)
        out = np.zeros(p.shape[:-1] + (3, 3, 3))
        for bi, e in zip(b, self.electrodes):
            if bi != 0.0:
                out = out + bi * _unit(e).third(p)
        return out

    def length_scale(self) -> float:
        """Smallest finite electrode dimension, used to make tolerances unit-free."""
        sizes = []
        for e in self.electrodes:
            for lo, hi in (e.x_extent, e.z_extent):
                if math.isfinite(lo) and math.isfinite(hi):
                    sizes.append(hi - lo)
        return min(sizes) if sizes else 1.0

    def x_span(self):
        xs = [v for e in self.electrodes for v in e.x_extent if math.isfinite(v)]
        return (min(xs), max(xs)) if xs else (-1.0, 1.0)


def _unit(e):
    return e if e.bias == 1.0 else replace(e, bias=1.0)


def _as3(points):
    p = np.asarray(points, dtype=float)
    if p.shape[-1] == 2:
        p = np.concatenate([p, np.zeros(p.shape[:-1] + (1,))], axis=-1)
    elif p.shape[-1] != 3:
        raise ValidationError(f"points need 2 or 3 coordinates, got shape {p.shape}")
    return p


def geometry_potential(geometry: PlanarGeometry, biases: Sequence[float], point) -> np.ndarray:
    """Superposed potential of all electrodes for the given bias vector."""
    return geometry.potential(point, biases)


def four_wire(d: float, amplitude: float = 1.0) -> PlanarGeometry:
    """rf strips ``(-d, 0)`` and ``(d, inf)``; null at ``(0, d)``."""
    if not d > 0:
        raise ValidationError(f"d must be positive, got {d}")
    return PlanarGeometry(
        strips=(
            Strip(-d, 0.0, amplitude, RF, label="rf1"),
            Strip(d, math.inf, amplitude, RF, label="rf2"),
        ),
        name="four-wire",
    )


def five_wire(d: float, amplitude: float = 1.0, widths=(1.0, 1.0)) -> PlanarGeometry:
    """rf strips ``(-3d/2, -d/2)`` and ``(d/2, 3d/2)``; null at ``(0, sqrt(3) d / 2)``.

    ``widths`` scales the two rf strip widths (in units of ``d``) away from the
    centre gap, giving the asymmetric variants used for axis rotation.
    """
    if not d > 0:
        raise ValidationError(f"d must be positive, got {d}")
    w1, w2 = widths
    return PlanarGeometry(
        strips=(
            Strip(-d / 2 - w1 * d, -d / 2, amplitude, RF, label="rf1"),
            Strip(d / 2, d / 2 + w2 * d, amplitude, RF, label="rf2"),
        ),
        name="five-wire",
    )


def segmented_five_wire(d: float, n_segments: int = 5, pitch: float | None = None,
                        width: float | None = None, amplitude: float = 1.0) -> PlanarGeometry:
    """Five-wire rf rail with a row of segmented control electrodes.

    Each control electrode is one rectangle on the ``+x`` side of the rf rail,
    centred on the axis at ``z = (k - (n - 1) / 2) * pitch``. The outer side
    is left to the ground plane.
    """
    if n_segments < 1:
        raise ValidationError("need at least one segment")
    pitch = d if pitch is None else pitch
    width = 2 * d if width is None else width
    base = five_wire(d, amplitude)
    x1 = 1.5 * d
    # shared edges so neighbours abut exactly
    edges = (np.arange(n_segments + 1) - n_segments / 2) * pitch
    patches = [RectPatch(x1, x1 + width, edges[k], edges[k + 1], 0.0, CONTROL, label=f"dc{k + 1}")
               for k in range(n_segments)]
    return PlanarGeometry(base.strips, tuple(patches), name="segmented-five-wire")

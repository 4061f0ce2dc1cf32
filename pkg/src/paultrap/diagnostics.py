"""Design-rule estimators: dielectric stray fields and motional heating scaling."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import CONSTANTS, DomainError, IonSpecies, ValidationError

__all__ = [
    "DielectricGap",
    "HeatingModel",
    "UnsupportedRegimeError",
    "stray_field",
    "heating_spectral_density",
    "heating_rate",
    "johnson_comparison",
    "distance_scaling_report",
    "design_report",
]


class UnsupportedRegimeError(DomainError):
    pass


@dataclass(frozen=True)
class DielectricGap:
    """Exposed substrate strip of width ``a`` between electrodes of thickness ``t``.

    ``V_s`` is the potential the charged substrate sits at, ``R`` the ion height.
    """

    a: float
    t: float
    V_s: float
    R: float
    min_ratio: float = 5.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValidationError("gap width must be positive")
        if not self.t >= 0:
            raise ValidationError("electrode thickness must be non-negative")
        if not self.R > 0:
            raise ValidationError("ion height must be positive")

    @property
    def far_field_ok(self) -> bool:
        """``R >> a``, taken as ``R >= min_ratio * a``."""
        return self.R >= self.min_ratio * self.a

    @property
    def thickness_ok(self) -> bool:
        return self.t == 0 or self.t >= self.a / math.pi


def stray_field(gap: DielectricGap, override=False) -> float:
    """Field magnitude (V/m) at the ion from a charged dielectric gap.

    ``a V / (pi R^2)`` for flush electrodes, suppressed by
    ``(4/pi) exp(-pi t / a)`` once ``t >= a / pi``. Thicknesses strictly
    between 0 and ``a / pi`` are refused.
    """
    if not gap.thickness_ok:
        raise UnsupportedRegimeError(
            f"thickness t = {gap.t:.3g} m lies in (0, a/pi = {gap.a / math.pi:.3g} m); "
            "only t = 0 or t >= a/pi is covered, evaluate at those endpoints instead")
    if not gap.far_field_ok:
        msg = f"R = {gap.R:.3g} m is not >> a = {gap.a:.3g} m; estimate unreliable"
        if not override:
            raise DomainError(msg)
        warnings.warn(msg, stacklevel=2)
    base = gap.a * abs(gap.V_s) / (math.pi * gap.R ** 2)
    if gap.t == 0:
        return base
    return base * 4.0 / math.pi * math.exp(-math.pi * gap.t / gap.a)


@dataclass(frozen=True)
class HeatingModel:
    """Power-law field-noise model ``S_E = S_E0 (R/R0)^-alpha (w/w0)^-beta_h``.

    ``beta_h`` is the frequency exponent (distinct from the modulation index).
    """

    S_E0: float
    R0: float
    omega0: float
    alpha: float = 3.5
    beta_h: float = 1.0

    def __post_init__(self):
        if not (self.S_E0 > 0 and self.R0 > 0 and self.omega0 > 0):
            raise ValidationError("reference S_E, R and omega must be positive")
        if not (self.alpha > 0 and self.beta_h > 0):
            raise ValidationError("scaling exponents must be positive")

    @classmethod
    def from_heating_rate(cls, rate, species: IonSpecies, R0, omega0, alpha=3.5, beta_h=1.0):
        """Anchor the model to a measured heating rate (quanta/s) at ``(R0, omega0)``."""
        s_e = rate * 4.0 * species.mass * CONSTANTS.hbar * omega0 / species.charge ** 2
        return cls(s_e, R0, omega0, alpha, beta_h)


def heating_spectral_density(model: HeatingModel, R, omega):
    """Electric-field noise spectral density, (V/m)^2/Hz."""
    R = np.asarray(R, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if np.any(R <= 0) or np.any(omega <= 0):
        raise ValidationError("R and omega must be positive")
    return model.S_E0 * (R / model.R0) ** (-model.alpha) * (omega / model.omega0) ** (-model.beta_h)


def heating_rate(S_E, species: IonSpecies, omega):
    """Motional heating rate ``q^2 S_E / (4 m hbar w)`` in quanta per second."""
    if np.any(np.asarray(S_E) < 0) or np.any(np.asarray(omega) <= 0):
        raise ValidationError("S_E must be non-negative and omega positive")
    return species.charge ** 2 * np.asarray(S_E) / (4.0 * species.mass * CONSTANTS.hbar * np.asarray(omega))


def johnson_comparison(R1, R2) -> float:
    """Johnson-noise spectral density ratio ``S(R1)/S(R2) = (R1/R2)^-2``."""
    if not (R1 > 0 and R2 > 0):
        raise ValidationError("distances must be positive")
    return (R1 / R2) ** -2


def distance_scaling_report(model: HeatingModel, R_from, R_to) -> dict:
    """Growth of the field noise when moving the ion from ``R_from`` to ``R_to``."""
    anomalous = float(heating_spectral_density(model, R_to, model.omega0)
                      / heating_spectral_density(model, R_from, model.omega0))
    return {"anomalous": anomalous, "johnson": johnson_comparison(R_to, R_from),
            "alpha": model.alpha}


def design_report(items) -> str:
    """Plain-text block from ``(label, value, unit)`` rows, aligned for docs."""
    rows = [(str(k), _fmt(v), u or "") for k, v, u in items]
    if not rows:
        return ""
    w0 = max(len(r[0]) for r in rows)
    w1 = max(len(r[1]) for r in rows)
    return "\n".join(f"{k:<{w0}}  {v:>{w1}} {u}".rstrip() for k, v, u in rows) + "\n"


def _fmt(v):
    if isinstance(v, bool) or v is None or isinstance(v, str):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.6g}"

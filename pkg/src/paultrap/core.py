"""Physical constants, unit helpers and the ion species table.

Everything inside the package is SI. Conversion to the reporting units
(MHz, um, meV) happens at the edges, mostly in :mod:`paultrap.cli`.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

from scipy import constants as _sc

__all__ = [
    "CONSTANTS",
    "Constants",
    "IonSpecies",
    "Frequency",
    "species",
    "register_species",
    "convert_frequency",
    "angular_to_cyclic",
    "PaultrapError",
    "ValidationError",
    "DomainError",
    "SearchError",
    "UnstableEquilibriumError",
]


class PaultrapError(Exception):
    """Base class for errors raised by the physics layer."""


class ValidationError(PaultrapError, ValueError):
    pass


class DomainError(PaultrapError, ValueError):
    """Point or parameter outside the domain where a formula holds."""


class SearchError(PaultrapError, RuntimeError):
    """An iterative search failed; ``best`` holds the best iterate found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class UnstableEquilibriumError(PaultrapError, RuntimeError):
    def __init__(self, message, direction=None, eigenvalue=None):
        super().__init__(message)
        self.direction = direction
        self.eigenvalue = eigenvalue


@dataclass(frozen=True)
class Constants:
    elementary_charge: float = _sc.e
    atomic_mass: float = _sc.physical_constants["atomic mass constant"][0]
    epsilon_0: float = _sc.epsilon_0
    hbar: float = _sc.hbar
    speed_of_light: float = _sc.c
    boltzmann: float = _sc.k


CONSTANTS = Constants()


@dataclass(frozen=True)
class IonSpecies:
    """A trapped particle. ``mass_u`` in atomic mass units, ``charge_number`` in units of e."""

    mass_u: float
    charge_number: int = 1
    name: str = ""

    def __post_init__(self):
        if not (self.mass_u > 0) or not math.isfinite(self.mass_u):
            raise ValidationError(f"mass must be positive, got {self.mass_u!r} u")
        if int(self.charge_number) != self.charge_number or self.charge_number == 0:
            raise ValidationError(f"charge must be a non-zero integer, got {self.charge_number!r}")

    @property
    def mass(self) -> float:
        """Mass in kg."""
        return self.mass_u * CONSTANTS.atomic_mass

    @property
    def charge(self) -> float:
        """Charge in C."""
        return self.charge_number * CONSTANTS.elementary_charge

    @property
    def q_over_m(self) -> float:
        return self.charge / self.mass


# integer mass numbers: the worked examples in the literature use 24 u for 24Mg+
_SPECIES_TABLE: dict[str, IonSpecies] = {}


def register_species(label: str, mass_u: float, charge_number: int = 1) -> IonSpecies:
    ion = IonSpecies(mass_u, charge_number, label)
    _SPECIES_TABLE[_normalize_label(label)] = ion
    return ion


def _normalize_label(label: str) -> str:
    return label.replace("^", "").replace(" ", "").lower()


for _label, _mass in [
    ("9Be+", 9), ("24Mg+", 24), ("25Mg+", 25), ("26Mg+", 26), ("27Al+", 27),
    ("40Ca+", 40), ("43Ca+", 43), ("88Sr+", 88), ("111Cd+", 111),
    ("137Ba+", 137), ("138Ba+", 138), ("171Yb+", 171), ("174Yb+", 174),
]:
    register_species(_label, _mass, 1)

_LABEL_RE = re.compile(r"^(\d+)([A-Za-z]{1,2})(\d*)([+-])$")


def species(name=None, *, mass_u=None, charge=1) -> IonSpecies:
    """Look up an ion by label (``"24Mg+"``) or build one from an explicit mass.

    >>> species("24Mg+").mass_u
    24
    >>> species(mass_u=1.0).charge_number
    1
    """
    if name is None:
        if mass_u is None:
            raise ValidationError("need a species label or an explicit mass")
        return IonSpecies(float(mass_u), int(charge))
    if isinstance(name, IonSpecies):
        return name
    if isinstance(name, (int, float)):
        return IonSpecies(float(name), int(charge))
    key = _normalize_label(str(name))
    try:
        return _SPECIES_TABLE[key]
    except KeyError:
        pass
    # generic isotope labels such as "40Ca2+"
    m = _LABEL_RE.match(str(name).replace("^", "").replace(" ", ""))
    if m:
        mass_number, _, z, sign = m.groups()
        z = int(z) if z else 1
        return IonSpecies(float(mass_number), z if sign == "+" else -z, str(name))
    raise KeyError(f"unknown species {name!r}; known: {sorted(_SPECIES_TABLE)}")


def convert_frequency(cyclic_hz: float) -> float:
    """Cyclic frequency (Hz) to angular frequency (rad/s)."""
    return 2.0 * math.pi * cyclic_hz


def angular_to_cyclic(omega: float) -> float:
    return omega / (2.0 * math.pi)


@dataclass(frozen=True)
class Frequency:
    """Angular frequency with cyclic-Hz helpers."""

    omega: float

    def __post_init__(self):
        if not (self.omega >= 0):
            raise ValidationError(f"frequency must be non-negative, got {self.omega!r}")

    @classmethod
    def from_hz(cls, hz: float) -> "Frequency":
        return cls(convert_frequency(hz))

    @classmethod
    def from_mhz(cls, mhz: float) -> "Frequency":
        return cls(convert_frequency(mhz * 1e6))

    @property
    def hz(self) -> float:
        return angular_to_cyclic(self.omega)

    @property
    def mhz(self) -> float:
        return self.hz / 1e6

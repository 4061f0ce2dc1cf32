"""Axial equilibria and normal modes of linear ion chains.

Positions are solved in the dimensionless coordinate ``u = z / s`` where
``s = (q^2 / (4 pi eps0 m w_z^2))^(1/3)``; the energy is then
``sum u_i^2 / 2 + sum_{i<j} 1 / |u_i - u_j|`` in units of ``m w_z^2 s^2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import CONSTANTS, IonSpecies, SearchError, UnstableEquilibriumError, ValidationError

__all__ = ["ChainConfig", "ChainSolution", "length_scale", "equilibrium", "normal_modes",
           "MAX_IONS"]

MAX_IONS = 50


@dataclass(frozen=True)
class ChainConfig:
    species: IonSpecies
    n_ions: int
    omega_z: float
    omega_r: float | None = None

    def __post_init__(self):
        if int(self.n_ions) != self.n_ions or self.n_ions < 1:
            raise ValidationError("need at least one ion")
        if not self.omega_z > 0:
            raise ValidationError("omega_z must be positive")


@dataclass
class ChainSolution:
    config: ChainConfig
    scaled_positions: np.ndarray
    length_scale: float
    residual: float
    mode_frequencies: np.ndarray = field(default=None)
    mode_vectors: np.ndarray = field(default=None, repr=False)

    @property
    def positions(self) -> np.ndarray:
        return self.scaled_positions * self.length_scale

    @property
    def spacings(self) -> np.ndarray:
        return np.diff(self.positions)

    @property
    def radially_stable(self):
        """``w_z << w_r`` check (factor 10); None when no radial frequency was given."""
        if self.config.omega_r is None:
            return None
        return self.config.omega_z < 0.1 * self.config.omega_r


def length_scale(species: IonSpecies, omega_z: float) -> float:
    """Characteristic ion spacing ``(q^2 / (4 pi eps0 m w_z^2))^(1/3)`` in metres."""
    if not omega_z > 0:
        raise ValidationError("omega_z must be positive")
    q = species.charge
    return (q * q / (4 * math.pi * CONSTANTS.epsilon_0 * species.mass * omega_z ** 2)) ** (1 / 3)


def _energy(u):
    d = u[:, None] - u[None, :]
    iu = np.triu_indices(len(u), 1)
    return 0.5 * np.sum(u * u) + np.sum(1.0 / np.abs(d[iu]))


def _gradient(u):
    d = u[:, None] - u[None, :]
    np.fill_diagonal(d, np.inf)
    return u - np.sum(np.sign(d) / d ** 2, axis=1)


def _hessian(u):
    d = np.abs(u[:, None] - u[None, :])
    np.fill_diagonal(d, np.inf)
    c = 2.0 / d ** 3
    h = -c
    np.fill_diagonal(h, 1.0 + c.sum(axis=1))
    return h


def equilibrium(chain: ChainConfig, max_ions=MAX_IONS, tol=1e-10, max_iter=200) -> ChainSolution:
    """Minimum-energy positions of a linear chain, sorted ascending."""
    n = int(chain.n_ions)
    if n > max_ions:
        raise ValidationError(f"chain of {n} ions exceeds the cap of {max_ions}")
    s = length_scale(chain.species, chain.omega_z)
    if n == 1:
        sol = ChainSolution(chain, np.zeros(1), s, 0.0)
        return normal_modes(sol)
    half = 0.6 * n ** 0.56
    u = np.linspace(-half, half, n)
    g = _gradient(u)
    for _ in range(max_iter):
        gn = float(np.abs(g).max())
        if gn < tol:
            break
        step = -np.linalg.solve(_hessian(u), g)
        e0 = _energy(u)
        alpha = 1.0
        while alpha > 1e-12:
            trial = u + alpha * step
            if np.all(np.diff(trial) > 0) and _energy(trial) <= e0 + 1e-14 * abs(e0):
                break
            alpha *= 0.5
        else:
            raise SearchError("chain equilibrium line search failed", best=u * s)
        u = trial
        g = _gradient(u)
    else:
        raise SearchError("chain equilibrium did not converge", best=u * s)
    # symmetrize away the last rounding asymmetry
    u = 0.5 * (u - u[::-1])
    return normal_modes(ChainSolution(chain, u, s, float(np.abs(_gradient(u)).max())))


def normal_modes(solution: ChainSolution) -> ChainSolution:
    """Axial mode frequencies (rad/s, ascending) and orthonormal mode vectors (columns)."""
    u = solution.scaled_positions
    h = _hessian(u) if len(u) > 1 else np.ones((1, 1))
    w, v = np.linalg.eigh(h)
    if w.min() <= 0:
        raise UnstableEquilibriumError("axial Hessian is not positive definite",
                                       eigenvalue=float(w.min()))
    # fix the sign convention: first nonzero component positive
    for k in range(v.shape[1]):
        col = v[:, k]
        i = int(np.argmax(np.abs(col) > 1e-12))
        if col[i] < 0:
            v[:, k] = -col
    solution.mode_frequencies = solution.config.omega_z * np.sqrt(w)
    solution.mode_vectors = v
    return solution

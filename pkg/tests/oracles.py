"""Independent reference computations shared by the tests.

Each oracle reaches its answer by a route that shares no code with the package:
direct quadrature of the half-space Green's function, brute-force scans and
finite differences.
"""
import math

import numpy as np
from scipy.integrate import dblquad, quad


def strip_quadrature(a, b, x, y):
    """Potential of a unit-voltage strip ``a < x' < b`` by integrating the 2D Poisson kernel."""
    if math.isinf(a) or math.isinf(b):
        # split the infinite tail so quad sees a finite piece near the point
        lo, hi = (a, b)
        mid = np.clip(x, -1e300 if math.isinf(lo) else lo, 1e300 if math.isinf(hi) else hi)
        parts = [(lo, mid), (mid, hi)]
    else:
        parts = [(a, b)]
    f = lambda xp: y / (math.pi * ((x - xp) ** 2 + y * y))
    return sum(quad(f, lo, hi, epsabs=1e-15, epsrel=1e-12, limit=200)[0]
               for lo, hi in parts if hi > lo)


def patch_quadrature(x1, x2, z1, z2, point):
    """Potential of a unit-voltage rectangle by 2D quadrature of the 3D half-space kernel."""
    x, y, z = point
    f = lambda zp, xp: y / (2 * math.pi * ((x - xp) ** 2 + y * y + (z - zp) ** 2) ** 1.5)
    return dblquad(f, x1, x2, z1, z2, epsabs=1e-14, epsrel=1e-11)[0]


def laplacian_fd(fun, p, h):
    """Fourth-order central-difference Laplacian."""
    p = np.asarray(p, float)
    total = 0.0
    f0 = fun(p)
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        total += (-fun(p + 2 * e) + 16 * fun(p + e) - 30 * f0 + 16 * fun(p - e) - fun(p - 2 * e)) / (12 * h * h)
    return total


def chain_energy(u):
    u = np.asarray(u, float)
    d = np.abs(u[:, None] - u[None, :])
    iu = np.triu_indices(len(u), 1)
    return 0.5 * np.sum(u * u) + np.sum(1.0 / d[iu])


def chain_bruteforce(n, half_width=2.5, points=401):
    """Symmetric chain equilibria for n <= 4 by exhaustive search over a grid.

    Symmetry about the origin leaves at most two free coordinates.
    """
    grid = np.linspace(1e-3, half_width, points)
    if n == 1:
        return np.array([0.0]), 0.0
    if n == 2:
        e = [chain_energy([-g, g]) for g in grid]
        g = grid[int(np.argmin(e))]
        return np.array([-g, g]), grid[1] - grid[0]
    if n == 3:
        e = [chain_energy([-g, 0, g]) for g in grid]
        g = grid[int(np.argmin(e))]
        return np.array([-g, 0, g]), grid[1] - grid[0]
    if n == 4:
        best, arg = np.inf, None
        for i, a in enumerate(grid):
            for b in grid[i + 1:]:
                en = chain_energy([-b, -a, a, b])
                if en < best:
                    best, arg = en, (a, b)
        a, b = arg
        return np.array([-b, -a, a, b]), grid[1] - grid[0]
    raise ValueError("brute force only for n <= 4")


def brent_min(fun, lo, hi):
    from scipy.optimize import minimize_scalar
    r = minimize_scalar(fun, bounds=(lo, hi), method="bounded", options={"xatol": 1e-14})
    return r.x

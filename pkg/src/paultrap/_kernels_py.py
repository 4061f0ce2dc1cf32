"""Pure-Python reference implementation of the integrator kernels.

Same signatures as the compiled ``_kernels`` extension. Slow, but it is the
fallback when the extension is not built and the oracle the compiled kernel
is tested against.
"""
import math

import numpy as np

BACKEND = "python"


def _strip_grad(strips, x, y):
    gx = np.zeros(len(strips))
    gy = np.zeros(len(strips))
    for i in range(len(strips)):
        for edge, sign in ((strips[i, 0], 1.0), (strips[i, 1], -1.0)):
            if math.isinf(edge):
                continue
            u = x - edge
            r2 = u * u + y * y
            gx[i] += sign * y / r2
            gy[i] -= sign * u / r2
    return gx / math.pi, gy / math.pi


def _patch_grad(patches, x, y, z):
    n = len(patches)
    gx = np.zeros(n)
    gy = np.zeros(n)
    gz = np.zeros(n)
    for i in range(n):
        x1, x2, z1, z2 = patches[i]
        for cx, sx in ((x2, 1.0), (x1, -1.0)):
            for cz, sz in ((z2, 1.0), (z1, -1.0)):
                s = sx * sz
                X = cx - x
                Z = cz - z
                R = math.sqrt(X * X + Z * Z + y * y)
                A = X * X + y * y
                B = Z * Z + y * y
                gx[i] -= s * Z * y / (R * A)
                gz[i] -= s * X * y / (R * B)
                gy[i] -= s * X * Z * (R * R + y * y) / (R * A * B)
    c = 1.0 / (2.0 * math.pi)
    return gx * c, gy * c, gz * c


def field_at(spec, t, pos):
    """Electric field (V/m) at position ``pos`` and time ``t``."""
    (strips, patches, e_dc, e_rf, e_phase, uni_rf, uni_phase, uni_dc,
     quad_rf, quad_phase, quad_dc, omega) = spec
    x, y, z = pos
    ns = len(strips)
    coef = e_dc + e_rf * np.cos(omega * t + e_phase)
    ex = ey = ez = 0.0
    if ns:
        gx, gy = _strip_grad(strips, x, y)
        ex -= coef[:ns] @ gx
        ey -= coef[:ns] @ gy
    if len(patches):
        gx, gy, gz = _patch_grad(patches, x, y, z)
        c = coef[ns:]
        ex -= c @ gx
        ey -= c @ gy
        ez -= c @ gz
    cu = math.cos(omega * t + uni_phase)
    cq = math.cos(omega * t + quad_phase)
    ex += uni_rf[0] * cu + uni_dc[0] - (quad_rf[0] * cq + quad_dc[0]) * x
    ey += uni_rf[1] * cu + uni_dc[1] - (quad_rf[1] * cq + quad_dc[1]) * y
    ez += uni_rf[2] * cu + uni_dc[2] - (quad_rf[2] * cq + quad_dc[2]) * z
    return np.array([ex, ey, ez])


def rk4_integrate(spec, q_over_m, state0, t0, dt, nsteps, sample_every, half_space, box):
    """Fixed-step classical RK4 for ``r'' = (q/m) E(r, t)``.

    Returns ``(times, states, escape_step)``; ``escape_step`` is -1 if the
    ion stayed inside ``box`` (and above the plane when ``half_space``).
    """
    nsamples = nsteps // sample_every + 1
    times = np.empty(nsamples)
    states = np.empty((nsamples, 6))
    s = np.array(state0, dtype=float)
    t = t0
    times[0] = t
    states[0] = s
    k = 1
    escape = -1

    def deriv(tt, ss):
        a = q_over_m * field_at(spec, tt, ss[:3])
        return np.concatenate([ss[3:], a])

    for step in range(1, nsteps + 1):
        k1 = deriv(t, s)
        k2 = deriv(t + 0.5 * dt, s + 0.5 * dt * k1)
        k3 = deriv(t + 0.5 * dt, s + 0.5 * dt * k2)
        k4 = deriv(t + dt, s + dt * k3)
        s = s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t0 + step * dt
        if (half_space and s[1] <= 0.0) or np.any(s[:3] < box[0::2]) or np.any(s[:3] > box[1::2]):
            escape = step
            times[k] = t
            states[k] = s
            return times[: k + 1], states[: k + 1], escape
        if step % sample_every == 0:
            times[k] = t
            states[k] = s
            k += 1
    return times[:k], states[:k], escape

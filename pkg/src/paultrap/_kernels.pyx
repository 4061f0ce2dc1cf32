# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled integrator kernels; see ``_kernels_py`` for the reference version."""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sqrt, isinf, M_PI

cnp.import_array()

BACKEND = "cython"


cdef struct Spec:
    int ns
    int npatch
    double* strips
    double* patches
    double* e_dc
    double* e_rf
    double* e_phase
    double* coef
    double uni_rf[3]
    double uni_phase
    double uni_dc[3]
    double quad_rf[3]
    double quad_phase
    double quad_dc[3]
    double omega


cdef void _field(Spec* sp, double t, double x, double y, double z, double* out) noexcept nogil:
    cdef int i, a, b
    cdef double ex = 0.0, ey = 0.0, ez = 0.0
    cdef double gx, gy, gz, edge, sign, u, r2, c
    cdef double cx, cz, sx, sz, s, X, Z, R, A, B
    cdef double wt = sp.omega * t
    for i in range(sp.ns + sp.npatch):
        sp.coef[i] = sp.e_dc[i]
        if sp.e_rf[i] != 0.0:
            sp.coef[i] += sp.e_rf[i] * cos(wt + sp.e_phase[i])
    for i in range(sp.ns):
        c = sp.coef[i]
        if c == 0.0:
            continue
        gx = 0.0
        gy = 0.0
        for a in range(2):
            edge = sp.strips[2 * i + a]
            if isinf(edge):
                continue
            sign = 1.0 if a == 0 else -1.0
            u = x - edge
            r2 = u * u + y * y
            gx += sign * y / r2
            gy -= sign * u / r2
        ex -= c * gx / M_PI
        ey -= c * gy / M_PI
    for i in range(sp.npatch):
        c = sp.coef[sp.ns + i]
        if c == 0.0:
            continue
        gx = 0.0
        gy = 0.0
        gz = 0.0
        for a in range(2):
            cx = sp.patches[4 * i + 1] if a == 0 else sp.patches[4 * i]
            sx = 1.0 if a == 0 else -1.0
            for b in range(2):
                cz = sp.patches[4 * i + 3] if b == 0 else sp.patches[4 * i + 2]
                sz = 1.0 if b == 0 else -1.0
                s = sx * sz
                X = cx - x
                Z = cz - z
                R = sqrt(X * X + Z * Z + y * y)
                A = X * X + y * y
                B = Z * Z + y * y
                gx -= s * Z * y / (R * A)
                gz -= s * X * y / (R * B)
                gy -= s * X * Z * (R * R + y * y) / (R * A * B)
        c = c / (2.0 * M_PI)
        ex -= c * gx
        ey -= c * gy
        ez -= c * gz
    cdef double cu = cos(wt + sp.uni_phase)
    cdef double cq = cos(wt + sp.quad_phase)
    out[0] = ex + sp.uni_rf[0] * cu + sp.uni_dc[0] - (sp.quad_rf[0] * cq + sp.quad_dc[0]) * x
    out[1] = ey + sp.uni_rf[1] * cu + sp.uni_dc[1] - (sp.quad_rf[1] * cq + sp.quad_dc[1]) * y
    out[2] = ez + sp.uni_rf[2] * cu + sp.uni_dc[2] - (sp.quad_rf[2] * cq + sp.quad_dc[2]) * z


cdef void _deriv(Spec* sp, double qm, double t, double* s, double* out) noexcept nogil:
    cdef double e[3]
    _field(sp, t, s[0], s[1], s[2], e)
    out[0] = s[3]
    out[1] = s[4]
    out[2] = s[5]
    out[3] = qm * e[0]
    out[4] = qm * e[1]
    out[5] = qm * e[2]


cdef class _SpecHolder:
    """Keeps the numpy buffers alive while the C struct points into them."""
    cdef Spec spec
    cdef object refs

    def __init__(self, spec):
        (strips, patches, e_dc, e_rf, e_phase, uni_rf, uni_phase, uni_dc,
         quad_rf, quad_phase, quad_dc, omega) = spec
        cdef cnp.ndarray[double, ndim=1, mode="c"] st = np.ascontiguousarray(strips, dtype=np.float64).ravel()
        cdef cnp.ndarray[double, ndim=1, mode="c"] pa = np.ascontiguousarray(patches, dtype=np.float64).ravel()
        cdef cnp.ndarray[double, ndim=1, mode="c"] dc = np.ascontiguousarray(e_dc, dtype=np.float64)
        cdef cnp.ndarray[double, ndim=1, mode="c"] rf = np.ascontiguousarray(e_rf, dtype=np.float64)
        cdef cnp.ndarray[double, ndim=1, mode="c"] ph = np.ascontiguousarray(e_phase, dtype=np.float64)
        cdef cnp.ndarray[double, ndim=1, mode="c"] co = np.zeros(max(len(dc), 1))
        # dummy one-element buffers so pointers are valid for empty arrays
        if st.size == 0:
            st = np.zeros(1)
        if pa.size == 0:
            pa = np.zeros(1)
        if dc.size == 0:
            dc = np.zeros(1)
            rf = np.zeros(1)
            ph = np.zeros(1)
        self.refs = (st, pa, dc, rf, ph, co)
        self.spec.ns = len(strips)
        self.spec.npatch = len(patches)
        self.spec.strips = &st[0]
        self.spec.patches = &pa[0]
        self.spec.e_dc = &dc[0]
        self.spec.e_rf = &rf[0]
        self.spec.e_phase = &ph[0]
        self.spec.coef = &co[0]
        for i in range(3):
            self.spec.uni_rf[i] = uni_rf[i]
            self.spec.uni_dc[i] = uni_dc[i]
            self.spec.quad_rf[i] = quad_rf[i]
            self.spec.quad_dc[i] = quad_dc[i]
        self.spec.uni_phase = uni_phase
        self.spec.quad_phase = quad_phase
        self.spec.omega = omega


def field_at(spec, double t, pos):
    cdef _SpecHolder h = _SpecHolder(spec)
    cdef double out[3]
    _field(&h.spec, t, pos[0], pos[1], pos[2], out)
    return np.array([out[0], out[1], out[2]])


def rk4_integrate(spec, double q_over_m, state0, double t0, double dt, long nsteps,
                  long sample_every, bint half_space, box):
    cdef _SpecHolder h = _SpecHolder(spec)
    cdef long nsamples = nsteps // sample_every + 1
    cdef cnp.ndarray[double, ndim=1] times = np.empty(nsamples)
    cdef cnp.ndarray[double, ndim=2] states = np.empty((nsamples, 6))
    cdef double[:] bx = np.ascontiguousarray(box, dtype=np.float64)
    cdef double s[6]
    cdef double tmp[6]
    cdef double k1[6]
    cdef double k2[6]
    cdef double k3[6]
    cdef double k4[6]
    cdef int j
    cdef long step, k = 1, escape = -1
    cdef double t = t0
    cdef bint out
    for j in range(6):
        s[j] = state0[j]
        states[0, j] = s[j]
    times[0] = t
    with nogil:
        for step in range(1, nsteps + 1):
            _deriv(&h.spec, q_over_m, t, s, k1)
            for j in range(6):
                tmp[j] = s[j] + 0.5 * dt * k1[j]
            _deriv(&h.spec, q_over_m, t + 0.5 * dt, tmp, k2)
            for j in range(6):
                tmp[j] = s[j] + 0.5 * dt * k2[j]
            _deriv(&h.spec, q_over_m, t + 0.5 * dt, tmp, k3)
            for j in range(6):
                tmp[j] = s[j] + dt * k3[j]
            _deriv(&h.spec, q_over_m, t + dt, tmp, k4)
            for j in range(6):
                s[j] = s[j] + dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            t = t0 + step * dt
            out = half_space and s[1] <= 0.0
            for j in range(3):
                if s[j] < bx[2 * j] or s[j] > bx[2 * j + 1]:
                    out = True
            if out:
                escape = step
                times[k] = t
                for j in range(6):
                    states[k, j] = s[j]
                k += 1
                break
            if step % sample_every == 0:
                times[k] = t
                for j in range(6):
                    states[k, j] = s[j]
                k += 1
    return times[:k], states[:k], escape

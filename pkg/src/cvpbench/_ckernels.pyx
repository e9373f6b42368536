# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: pair derivatives and block scatter-add assembly.

Same API as ``cvpbench._kernels_py``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, sqrt, M_PI

cnp.import_array()

cdef double INV_SQRT_PI = 1.0 / sqrt(M_PI)


cdef inline double _sign(double v) noexcept nogil:
    if v > 0.0:
        return 1.0
    if v < 0.0:
        return -1.0
    return 0.0


cdef inline void _step(double x, double* s, double* ds, double* dds) noexcept nogil:
    cdef double g, si, ss, m1, m2, e
    if x <= 0.0:
        s[0] = 0.0
        ds[0] = 0.0
        dds[0] = 0.0
        return
    if x >= 1.0:
        s[0] = 1.0
        ds[0] = 0.0
        dds[0] = 0.0
        return
    g = 1.0 / x - 1.0 / (1.0 - x)
    if g >= 0.0:
        e = exp(-g)
        si = e / (1.0 + e)
        ss = si / (1.0 + e)
    else:
        e = exp(g)
        si = 1.0 / (1.0 + e)
        ss = si * e / (1.0 + e)
    m1 = 1.0 / (x * x) + 1.0 / ((1.0 - x) * (1.0 - x))
    m2 = -2.0 / (x * x * x) + 2.0 / ((1.0 - x) * (1.0 - x) * (1.0 - x))
    s[0] = si
    ds[0] = ss * m1
    dds[0] = ss * (1.0 - 2.0 * si) * m1 * m1 + ss * m2


cdef inline void _bump(double r, double r0, double* b, double* db, double* ddb) noexcept nogil:
    cdef double scale = 1.0 / (1.0 - r0)
    cdef double s, ds, dds
    _step((1.0 - fabs(r)) * scale, &s, &ds, &dds)
    b[0] = s
    db[0] = -_sign(r) * ds * scale
    ddb[0] = dds * scale * scale


def gaussian_pair_derivs(X, Y, double cutoff):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] Yv = np.ascontiguousarray(Y, dtype=np.float64)
    cdef Py_ssize_t P = Xv.shape[0], p
    L_ = np.empty(P)
    g1_ = np.empty((P, 2))
    g2_ = np.empty((P, 2))
    H11_ = np.empty((P, 2, 2))
    H12_ = np.empty((P, 2, 2))
    H22_ = np.empty((P, 2, 2))
    cdef double[::1] L = L_
    cdef double[:, ::1] g1 = g1_
    cdef double[:, ::1] g2 = g2_
    cdef double[:, :, ::1] H11 = H11_
    cdef double[:, :, ::1] H12 = H12_
    cdef double[:, :, ::1] H22 = H22_
    cdef double d, x2, y2, E, A, B, EAB
    with nogil:
        for p in range(P):
            d = Xv[p, 0] - Yv[p, 0]
            x2 = Xv[p, 1]
            y2 = Yv[p, 1]
            if fabs(d) > cutoff:
                E = 0.0
            else:
                E = exp(-d * d) * INV_SQRT_PI
            A = 1.0 + x2 * x2
            B = 1.0 + y2 * y2
            EAB = E * A * B
            L[p] = EAB
            g1[p, 0] = -2.0 * d * EAB
            g1[p, 1] = 2.0 * x2 * E * B
            g2[p, 0] = 2.0 * d * EAB
            g2[p, 1] = 2.0 * y2 * E * A
            H11[p, 0, 0] = (4.0 * d * d - 2.0) * EAB
            H11[p, 0, 1] = -4.0 * d * x2 * E * B
            H11[p, 1, 0] = H11[p, 0, 1]
            H11[p, 1, 1] = 2.0 * E * B
            H22[p, 0, 0] = H11[p, 0, 0]
            H22[p, 0, 1] = 4.0 * d * y2 * E * A
            H22[p, 1, 0] = H22[p, 0, 1]
            H22[p, 1, 1] = 2.0 * E * A
            H12[p, 0, 0] = -H11[p, 0, 0]
            H12[p, 0, 1] = -4.0 * d * y2 * E * A
            H12[p, 1, 0] = 4.0 * d * x2 * E * B
            H12[p, 1, 1] = 4.0 * x2 * y2 * E
    return L_, g1_, g2_, H11_, H12_, H22_


def lattice_pair_derivs(X, Y, double c, double T0, double W0, double slope, double r0):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] Yv = np.ascontiguousarray(Y, dtype=np.float64)
    cdef Py_ssize_t P = Xv.shape[0], p
    L_ = np.empty(P)
    g1_ = np.empty((P, 2))
    g2_ = np.empty((P, 2))
    H11_ = np.empty((P, 2, 2))
    H12_ = np.empty((P, 2, 2))
    H22_ = np.empty((P, 2, 2))
    cdef double[::1] L = L_
    cdef double[:, ::1] g1 = g1_
    cdef double[:, ::1] g2 = g2_
    cdef double[:, :, ::1] H11 = H11_
    cdef double[:, :, ::1] H12 = H12_
    cdef double[:, :, ::1] H22 = H22_
    cdef double a, b, f, fr, frr, fa, faa, q, g, gr, grr, gq, gqq, qa, qb
    cdef double La, Lb, Laa, Lab, Lbb
    cdef Py_ssize_t q_i, q_j
    with nogil:
        for p in range(P):
            a = Xv[p, 0] - Yv[p, 0]
            b = Xv[p, 1] - Yv[p, 1]
            _bump(a / T0, r0, &f, &fr, &frr)
            if f == 0.0 and fr == 0.0 and frr == 0.0:
                # every term carries a factor of f or its derivatives
                L[p] = 0.0
                g1[p, 0] = 0.0
                g1[p, 1] = 0.0
                g2[p, 0] = 0.0
                g2[p, 1] = 0.0
                for q_i in range(2):
                    for q_j in range(2):
                        H11[p, q_i, q_j] = 0.0
                        H12[p, q_i, q_j] = 0.0
                        H22[p, q_i, q_j] = 0.0
                continue
            fa = fr / T0
            faa = frr / (T0 * T0)
            q = fabs(b) - slope * fabs(a)
            if q > 0.0:
                _bump(q / W0, r0, &g, &gr, &grr)
                gq = gr / W0
                gqq = grr / (W0 * W0)
            else:
                _bump(0.0, r0, &g, &gr, &grr)
                gq = 0.0
                gqq = 0.0
            qa = -slope * _sign(a)
            qb = _sign(b)
            L[p] = c * f * g
            La = c * (fa * g + f * gq * qa)
            Lb = c * f * gq * qb
            Laa = c * (faa * g + 2.0 * fa * gq * qa + f * gqq * qa * qa)
            Lab = c * (fa * gq * qb + f * gqq * qa * qb)
            Lbb = c * f * gqq * qb * qb
            g1[p, 0] = La
            g1[p, 1] = Lb
            g2[p, 0] = -La
            g2[p, 1] = -Lb
            H11[p, 0, 0] = Laa
            H11[p, 0, 1] = Lab
            H11[p, 1, 0] = Lab
            H11[p, 1, 1] = Lbb
            H22[p, 0, 0] = Laa
            H22[p, 0, 1] = Lab
            H22[p, 1, 0] = Lab
            H22[p, 1, 1] = Lbb
            H12[p, 0, 0] = -Laa
            H12[p, 0, 1] = -Lab
            H12[p, 1, 0] = -Lab
            H12[p, 1, 1] = -Lbb
    return L_, g1_, g2_, H11_, H12_, H22_


def scatter_blocks(double[:, ::1] out, const long[::1] I, const long[::1] J,
                   const double[::1] coef, const double[:, :, ::1] B):
    cdef Py_ssize_t P = B.shape[0], d = B.shape[1], p, r, s, i0, j0
    cdef double cp
    with nogil:
        for p in range(P):
            cp = coef[p]
            if cp == 0.0:
                continue
            i0 = I[p] * d
            j0 = J[p] * d
            for r in range(d):
                for s in range(d):
                    out[i0 + r, j0 + s] += cp * B[p, r, s]


def scatter_diag_blocks(double[:, :, ::1] out, const long[::1] I,
                        const double[::1] coef, const double[:, :, ::1] B):
    cdef Py_ssize_t P = B.shape[0], d = B.shape[1], p, r, s, i0
    cdef double cp
    with nogil:
        for p in range(P):
            cp = coef[p]
            if cp == 0.0:
                continue
            i0 = I[p]
            for r in range(d):
                for s in range(d):
                    out[i0, r, s] += cp * B[p, r, s]

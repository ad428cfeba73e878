# cython: language_level=3
"""Compiled coupled path kernel.

Same contract and operation order as ``_kernels_py.coupled_paths``; the
per-sample loop runs without the GIL.
"""
from libc.math cimport sqrt

cdef enum:
    GBM = 0
    IGBM = 1


cdef inline void _coeffs(int family, double p0, double p1, double p2, double s,
                         double* a, double* b, double* half_bbp) noexcept nogil:
    cdef double sp
    if family == GBM:
        a[0] = p0 * s
        b[0] = p2 * s
        half_bbp[0] = (0.5 * p2 * p2) * s
    elif family == IGBM:
        a[0] = p0 * (p1 - s)
        b[0] = p2 * s
        half_bbp[0] = (0.5 * p2 * p2) * s
    else:
        sp = s if s > 0.0 else 0.0
        a[0] = p0 * (p1 - sp)
        b[0] = p2 * sqrt(sp)
        half_bbp[0] = 0.25 * p2 * p2 if s > 0.0 else 0.0


cdef inline double _step(int family, double p0, double p1, double p2, double s,
                         double h, double dw, bint milstein, double* b) noexcept nogil:
    cdef double a, half_bbp
    _coeffs(family, p0, p1, p2, s, &a, b, &half_bbp)
    if milstein:
        return s + a * h + b[0] * dw + half_bbp * (dw * dw - h)
    return s + a * h + b[0] * dw


def coupled_paths(int family, double p0, double p1, double p2, double s0,
                  double horizon, int n_fine, int refinement, bint coarse,
                  bint milstein, bint antithetic, const double[:, ::1] dW,
                  double[:, :, ::1] out):
    cdef Py_ssize_t n = dW.shape[0]
    cdef int M = refinement
    cdef double h = horizon / n_fine
    cdef double inv_j = 1.0 / n_fine
    cdef int n_coarse = n_fine // M if coarse else 1
    cdef double hc = horizon / n_coarse
    cdef double inv_jc = 1.0 / n_coarse
    cdef double half_m1 = 0.5 * (M - 1)
    cdef double bridge_scale = h / horizon
    cdef int n_mirror = 2 if antithetic else 1
    cdef Py_ssize_t i, j
    cdef int m
    cdef double sign, dw, s, s_new, rsum, tsum, b
    cdef double sc, sc_new, crsum, ctsum, bsum, dwc, wsum, bc, ctavg
    with nogil:
        for m in range(n_mirror):
            sign = 1.0 if m == 0 else -1.0
            for i in range(n):
                s = s0
                rsum = 0.0
                tsum = 0.0
                sc = s0
                crsum = 0.0
                ctsum = 0.0
                bsum = 0.0
                dwc = 0.0
                wsum = 0.0
                for j in range(n_fine):
                    dw = dW[i, j] if m == 0 else -dW[i, j]
                    s_new = _step(family, p0, p1, p2, s, h, dw, milstein, &b)
                    rsum = rsum + s_new
                    tsum = tsum + 0.5 * (s + s_new)
                    s = s_new
                    if coarse:
                        dwc = dwc + dw
                        if (j % M) < M - 1:
                            wsum = wsum + dwc
                        else:
                            sc_new = _step(family, p0, p1, p2, sc, hc, dwc, milstein, &bc)
                            bsum = bsum + bc * (wsum - dwc * half_m1)
                            crsum = crsum + sc_new
                            ctsum = ctsum + 0.5 * (sc + sc_new)
                            sc = sc_new
                            dwc = 0.0
                            wsum = 0.0
                out[0, i, m] = s
                out[1, i, m] = rsum * inv_j
                out[2, i, m] = tsum * inv_j
                if coarse:
                    ctavg = ctsum * inv_jc
                    out[3, i, m] = sc
                    out[4, i, m] = crsum * inv_jc
                    out[5, i, m] = ctavg
                    out[6, i, m] = ctavg + bsum * bridge_scale

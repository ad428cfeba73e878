"""Pure-numpy coupled path kernel (fallback for the compiled ``_kernels``).

Vectorised over samples, sequential over time steps.  Every arithmetic
expression is written in the same order as the Cython kernel so the two
backends agree bit for bit.
"""
from __future__ import annotations

import numpy as np

GBM, IGBM, CIR = 0, 1, 2

# rows of the output array
F_TERMINAL, F_RUNNING, F_TRAPEZOID = 0, 1, 2
C_TERMINAL, C_RUNNING, C_TRAPEZOID, C_BRIDGE = 3, 4, 5, 6
N_OUTPUTS = 7


def _coefficients(family, p0, p1, p2, s):
    """Drift, volatility and half of b*b' under the full-truncation rule."""
    if family == GBM:
        a = p0 * s
        b = p2 * s
        half_bbp = (0.5 * p2 * p2) * s
    elif family == IGBM:
        a = p0 * (p1 - s)
        b = p2 * s
        half_bbp = (0.5 * p2 * p2) * s
    else:
        sp = np.where(s > 0.0, s, 0.0)
        a = p0 * (p1 - sp)
        b = p2 * np.sqrt(sp)
        half_bbp = np.where(s > 0.0, 0.25 * p2 * p2, 0.0)
    return a, b, half_bbp


def _step(family, p0, p1, p2, s, h, dw, milstein):
    a, b, half_bbp = _coefficients(family, p0, p1, p2, s)
    if milstein:
        return s + a * h + b * dw + half_bbp * (dw * dw - h), b
    return s + a * h + b * dw, b


def coupled_paths(family, p0, p1, p2, s0, horizon, n_fine, refinement,
                  coarse, milstein, antithetic, dW, out):
    """Advance fine (and optionally coarse) paths driven by ``dW``.

    ``dW`` has shape ``(n, n_fine)`` and holds Brownian increments with
    variance ``horizon / n_fine``.  ``out`` has shape ``(7, n, P)`` with
    ``P = 2`` under antithetic sampling; the second mirror uses ``-dW``.
    """
    n = dW.shape[0]
    M = refinement
    h = horizon / n_fine
    inv_j = 1.0 / n_fine
    if coarse:
        n_coarse = n_fine // M
        hc = horizon / n_coarse
        inv_jc = 1.0 / n_coarse
        half_m1 = 0.5 * (M - 1)
        bridge_scale = h / horizon
    signs = (1.0, -1.0) if antithetic else (1.0,)
    for m, sign in enumerate(signs):
        inc = dW if sign > 0 else -dW
        s = np.full(n, float(s0))
        rsum = np.zeros(n)
        tsum = np.zeros(n)
        if coarse:
            sc = np.full(n, float(s0))
            crsum = np.zeros(n)
            ctsum = np.zeros(n)
            bsum = np.zeros(n)
            dwc = np.zeros(n)
            wsum = np.zeros(n)
        for j in range(n_fine):
            dw = inc[:, j]
            s_new, _ = _step(family, p0, p1, p2, s, h, dw, milstein)
            rsum = rsum + s_new
            tsum = tsum + 0.5 * (s + s_new)
            s = s_new
            if coarse:
                dwc = dwc + dw
                if (j % M) < M - 1:
                    wsum = wsum + dwc
                else:
                    sc_new, bc = _step(family, p0, p1, p2, sc, hc, dwc, milstein)
                    bsum = bsum + bc * (wsum - dwc * half_m1)
                    crsum = crsum + sc_new
                    ctsum = ctsum + 0.5 * (sc + sc_new)
                    sc = sc_new
                    dwc = np.zeros(n)
                    wsum = np.zeros(n)
        out[F_TERMINAL, :, m] = s
        out[F_RUNNING, :, m] = rsum * inv_j
        out[F_TRAPEZOID, :, m] = tsum * inv_j
        if coarse:
            ctavg = ctsum * inv_jc
            out[C_TERMINAL, :, m] = sc
            out[C_RUNNING, :, m] = crsum * inv_jc
            out[C_TRAPEZOID, :, m] = ctavg
            out[C_BRIDGE, :, m] = ctavg + bsum * bridge_scale

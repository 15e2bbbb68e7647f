"""Fused pairwise kernel sums and their gradients (numba).

Each routine returns the kernel sum together with its gradient for a unit
upstream weight, so one pass over the pairs serves both the forward value
and the backward step. ``*_self`` variants exploit the symmetry of
sum_{l,k} k(x_l, x_k) and visit every unordered pair once. Samples are
passed transposed (columns x rows) so that the inner loops run over
contiguous memory. Loops run in a fixed order, so results are reproducible
bit for bit.
"""

import numpy as np
from numba import njit

PHI = 0
PSI = 1

_FAST = {"reassoc", "contract", "arcp"}

_I0_SMALL = np.array([1.0, 3.5156229, 3.0899424, 1.2067492, 0.2659732, 0.0360768, 0.0045813])
_I0_LARGE = np.array([0.39894228, 0.01328592, 0.00225319, -0.00157565, 0.00916281,
                      -0.02057706, 0.02635537, -0.01647633, 0.00392377])

# Beyond this argument the polynomial fit drifts past 1e-7 relative; the
# asymptotic series ((2k-1)!!)^2 / (k! 8^k t^k) is accurate to ~exp(-2t) there.
_ASYMPTOTIC_FROM = 15.0
_ASYMPTOTIC_TERMS = 24
_INV_SQRT_2PI = 0.3989422804014327


@njit(cache=True)
def _horner(c, x):
    acc = 0.0
    for i in range(c.shape[0] - 1, -1, -1):
        acc = acc * x + c[i]
    return acc


@njit(cache=True)
def _horner_d(c, x):
    acc = 0.0
    for i in range(c.shape[0] - 1, 0, -1):
        acc = acc * x + i * c[i]
    return acc


@njit(cache=True)
def _psi(s):
    """exp(-s/2) I0(s/2) and its derivative."""
    t = 0.5 * s
    if t <= 3.75:
        y = (t / 3.75) ** 2
        e = np.exp(-t)
        p = _horner(_I0_SMALL, y)
        return e * p, 0.5 * e * (_horner_d(_I0_SMALL, y) * 2.0 * t / 3.75 ** 2 - p)
    rt = np.sqrt(t)
    if t >= _ASYMPTOTIC_FROM:
        term, acc, dacc = 1.0, 1.0, 0.5
        for k in range(1, _ASYMPTOTIC_TERMS):
            term *= (2.0 * k - 1.0) ** 2 / (8.0 * k * t)
            acc += term
            dacc += (k + 0.5) * term
        v = _INV_SQRT_2PI * acc / rt
        return v, -0.5 * _INV_SQRT_2PI * dacc / (t * rt)
    u = 3.75 / t
    p = _horner(_I0_LARGE, u)
    return p / rt, 0.5 * (-_horner_d(_I0_LARGE, u) * u / t - 0.5 * p / t) / rt


@njit(cache=True)
def _kern(kind, s, a):
    if kind == PHI:
        r = 1.0 / np.sqrt(1.0 + a * s)
        return r, -0.5 * a * r * r * r
    return _psi(s)


@njit(cache=True)
def kernel_values(s, kind, a):
    """Kernel values and derivatives at every entry of the 1-D array ``s``."""
    out = np.empty_like(s)
    der = np.empty_like(s)
    for i in range(s.shape[0]):
        out[i], der[i] = _kern(kind, s[i], a)
    return out, der


@njit(cache=True, fastmath=_FAST)
def _kernel_row(kind, s, m, scale, a, c, cfac):
    """Sum of k(scale * s[:m]); fills c[:m] with cfac * scale * k'(scale * s)."""
    row = 0.0
    if kind == PHI:
        for k in range(m):
            r = 1.0 / np.sqrt(1.0 + a * scale * s[k])
            row += r
            c[k] = -0.5 * cfac * scale * a * r * r * r
    else:
        for k in range(m):
            v, dv = _psi(scale * s[k])
            row += v
            c[k] = cfac * scale * dv
    return row


@njit(cache=True, fastmath=_FAST)
def radial_cross(xT, yT, scale, kind, a, want_grad):
    """sum_{l,k} kernel(scale * ||x_l - y_k||^2) and its gradients (transposed)."""
    D, n = xT.shape
    m = yT.shape[1]
    gxT = np.zeros_like(xT)
    gyT = np.zeros_like(yT)
    s = np.empty(m)
    c = np.empty(m)
    total = 0.0
    for l in range(n):
        s[:] = 0.0
        for j in range(D):
            xv = xT[j, l]
            for k in range(m):
                d = xv - yT[j, k]
                s[k] += d * d
        total += _kernel_row(kind, s, m, scale, a, c, 2.0)
        if want_grad:
            for j in range(D):
                xv = xT[j, l]
                acc = 0.0
                for k in range(m):
                    g = c[k] * (xv - yT[j, k])
                    acc += g
                    gyT[j, k] -= g
                gxT[j, l] += acc
    return total, gxT, gyT


@njit(cache=True, fastmath=_FAST)
def radial_self(xT, scale, kind, a, want_grad):
    """sum_{l,k} kernel(scale * ||x_l - x_k||^2) over ordered pairs, and its gradient."""
    D, n = xT.shape
    gxT = np.zeros_like(xT)
    s = np.empty(n)
    c = np.empty(n)
    k0, _ = _kern(kind, 0.0, a)
    off = 0.0
    for l in range(n - 1):
        m = n - l - 1
        s[:m] = 0.0
        for j in range(D):
            xv = xT[j, l]
            for k in range(m):
                d = xv - xT[j, l + 1 + k]
                s[k] += d * d
        off += _kernel_row(kind, s, m, scale, a, c, 4.0)
        if want_grad:
            for j in range(D):
                xv = xT[j, l]
                acc = 0.0
                for k in range(m):
                    g = c[k] * (xv - xT[j, l + 1 + k])
                    acc += g
                    gxT[j, l + 1 + k] -= g
                gxT[j, l] += acc
    return n * k0 + 2.0 * off, gxT


@njit(cache=True, fastmath=_FAST)
def weighted_axis_cross(u, cu, v, cv, scale, want_grad):
    """sum_{p,q} cu_p cv_q exp(-scale (u_p - v_q)^2) over distinct values.

    The gradients are per distinct value and per single row holding it, i.e.
    without the multiplicity of the row itself.
    """
    gu = np.zeros_like(u)
    gv = np.zeros_like(v)
    total = 0.0
    for p in range(u.shape[0]):
        row = 0.0
        acc = 0.0
        for q in range(v.shape[0]):
            d = u[p] - v[q]
            e = np.exp(-scale * d * d)
            row += cv[q] * e
            if want_grad:
                t = -2.0 * scale * d * e
                acc += cv[q] * t
                gv[q] -= cu[p] * t
        total += cu[p] * row
        gu[p] += acc
    return total, gu, gv


@njit(cache=True, fastmath=_FAST)
def weighted_axis_self(u, cu, scale, want_grad):
    """sum_{p,q} cu_p cu_q exp(-scale (u_p - u_q)^2) and the per-row gradient."""
    gu = np.zeros_like(u)
    off = 0.0
    diag = 0.0
    for p in range(u.shape[0]):
        diag += cu[p] * cu[p]
        row = 0.0
        acc = 0.0
        for q in range(p + 1, u.shape[0]):
            d = u[p] - u[q]
            e = np.exp(-scale * d * d)
            row += cu[q] * e
            if want_grad:
                t = -4.0 * scale * d * e
                acc += cu[q] * t
                gu[q] -= cu[p] * t
        off += cu[p] * row
        gu[p] += acc
    return diag + 2.0 * off, gu

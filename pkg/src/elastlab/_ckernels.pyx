# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled SGD inner loops; same contract and operation order as ``_pykernels``."""
import numpy as np
from libc.math cimport sqrt, fabs, NAN

cdef double REL_TINY = 1e-14


cdef inline double _dot(const double[::1] a, const double[::1] b) noexcept nogil:
    cdef Py_ssize_t i
    cdef double s = 0.0
    for i in range(a.shape[0]):
        s += a[i] * b[i]
    return s


cdef inline double _quad_f(const double[::1] x, const double[::1] w) noexcept nogil:
    cdef Py_ssize_t i
    cdef double s = 0.0
    for i in range(x.shape[0]):
        s += x[i] * (w[i] * w[i])
    return s


cdef inline double _dist(const double[::1] w, const double[::1] ws) noexcept nogil:
    cdef Py_ssize_t i
    cdef double d, s = 0.0
    for i in range(w.shape[0]):
        d = w[i] - ws[i]
        s += d * d
    return sqrt(s)


cdef double _quad_srel(const double[::1] w, const double[::1] ws, const double[::1] x,
                       const double[::1] xp, double eta, double[::1] wp) noexcept nogil:
    cdef Py_ssize_t i
    cdef double f_x = _quad_f(x, w)
    cdef double r = _quad_f(x, ws) - f_x
    cdef double den
    for i in range(w.shape[0]):
        wp[i] = w[i] + 2.0 * eta * r * x[i] * w[i]
    den = fabs(_quad_f(x, wp) - f_x)
    if not den >= REL_TINY * (1.0 + fabs(f_x)):
        return NAN
    return fabs(_quad_f(xp, wp) - _quad_f(xp, w)) / den


cdef double _relu_srel(const double[::1] w, const double[::1] ws, const double[::1] x,
                       const double[::1] xp, double eta, double[::1] wp) noexcept nogil:
    cdef Py_ssize_t i
    cdef double wx = _dot(w, x)
    cdef double f_x = wx if wx > 0.0 else 0.0
    cdef double y = _dot(ws, x)
    cdef double g, den, a, b
    if y < 0.0:
        y = 0.0
    if y > 0.0:
        g = eta * (y - wx)
        for i in range(w.shape[0]):
            wp[i] = w[i] + g * x[i]
    else:
        wp[:] = w
    a = _dot(wp, x)
    den = fabs((a if a > 0.0 else 0.0) - f_x)
    if not den >= REL_TINY * (1.0 + f_x):
        return NAN
    a = _dot(wp, xp)
    b = _dot(w, xp)
    return fabs((a if a > 0.0 else 0.0) - (b if b > 0.0 else 0.0)) / den


cdef double _quad_step(double[::1] w, const double[::1] ws, const double[::1] x, double eta) noexcept nogil:
    cdef Py_ssize_t i
    cdef double r = _quad_f(x, ws) - _quad_f(x, w)
    cdef double c = 2.0 * eta * r
    for i in range(w.shape[0]):
        w[i] += c * x[i] * w[i]
    return 0.5 * r * r


cdef double _relu_step(double[::1] w, const double[::1] ws, const double[::1] x, double eta) noexcept nogil:
    cdef Py_ssize_t i
    cdef double wx = _dot(w, x)
    cdef double y = _dot(ws, x)
    cdef double g, d
    if y < 0.0:
        y = 0.0
    if y > 0.0:
        g = eta * (y - wx)
        for i in range(w.shape[0]):
            w[i] += g * x[i]
    d = y - (wx if wx > 0.0 else 0.0)
    return 0.5 * d * d


cdef _run(int kind, w0, w_star, xs, double eta, px, pxp, record_steps, double tol, double div_limit):
    cdef double[::1] w = np.array(w0, dtype=np.float64, copy=True).ravel()
    cdef double[::1] ws = np.ascontiguousarray(w_star, dtype=np.float64).ravel()
    cdef const double[:, ::1] X = np.ascontiguousarray(xs, dtype=np.float64)
    cdef const double[:, ::1] PX = np.ascontiguousarray(px, dtype=np.float64).reshape(-1, w.shape[0])
    cdef const double[:, ::1] PXP = np.ascontiguousarray(pxp, dtype=np.float64).reshape(-1, w.shape[0])
    cdef const long long[::1] rec = np.ascontiguousarray(record_steps, dtype=np.int64)
    cdef Py_ssize_t n_rec = rec.shape[0], n_pairs = PX.shape[0], steps = X.shape[0]
    srel_a = np.full((n_rec, n_pairs), np.nan)
    snaps_a = np.full((n_rec, w.shape[0]), np.nan)
    loss_a = np.full(n_rec, np.nan)
    cdef double[:, ::1] srel = srel_a
    cdef double[:, ::1] snaps = snaps_a
    cdef double[::1] loss = loss_a
    cdef double[::1] wp = np.empty(w.shape[0])
    cdef Py_ssize_t t = 0, ri = 0, p
    cdef long long hit = -1, div = -1
    cdef double acc = 0.0
    cdef long long cnt = 0
    with nogil:
        while True:
            while ri < n_rec and rec[ri] == t:
                for p in range(n_pairs):
                    if kind == 0:
                        srel[ri, p] = _quad_srel(w, ws, PX[p], PXP[p], eta, wp)
                    else:
                        srel[ri, p] = _relu_srel(w, ws, PX[p], PXP[p], eta, wp)
                snaps[ri, :] = w
                if cnt > 0:
                    loss[ri] = acc / cnt
                acc = 0.0
                cnt = 0
                ri += 1
            if hit < 0 and _dist(w, ws) < tol:
                hit = t
            if (hit >= 0 and ri == n_rec) or t == steps:
                break
            if kind == 0:
                acc += _quad_step(w, ws, X[t], eta)
            else:
                acc += _relu_step(w, ws, X[t], eta)
            cnt += 1
            t += 1
            if not sqrt(_dot(w, w)) <= div_limit:
                div = t
                break
    return srel_a, snaps_a, loss_a, int(hit), int(div), int(t)


def quad_run(w0, w_star, xs, double eta, px, pxp, record_steps, double tol, double div_limit):
    """SGD on the diagonal quadratic-feature model ``f = sum_p x_p w_p^2``."""
    return _run(0, w0, w_star, xs, eta, px, pxp, record_steps, tol, div_limit)


def relu_run(w0, w_star, xs, double eta, px, pxp, record_steps, double tol, double div_limit):
    """Indicator-gated SGD for a realizable ReLU gate."""
    return _run(1, w0, w_star, xs, eta, px, pxp, record_steps, tol, div_limit)

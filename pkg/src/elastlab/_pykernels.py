"""Pure-Python SGD inner loops; reference and fallback for the compiled kernels.

Both kernels share one contract. ``xs`` holds the pre-drawn sample for every
step. At each step index ``t`` listed in ``record_steps`` the state ``w_t`` is
recorded before the update: S_rel for every tracked pair (NaN when undefined),
a weight snapshot and the mean training loss accumulated since the previous
record. The loop stops after the last record once ``||w_t - w*|| < tol``, or
once the weight norm exceeds ``div_limit``.

Returns ``(srel, snaps, loss, hit_step, div_step, steps_run)``; the step
fields are -1 when the event never happened.
"""
import math

import numpy as np

REL_TINY = 1e-14


def _dot(a, b):
    s = 0.0
    for i in range(len(a)):
        s += a[i] * b[i]
    return s


def _quad_f(x, w):
    s = 0.0
    for i in range(len(x)):
        s += x[i] * (w[i] * w[i])
    return s


def _quad_srel(w, w_star, x, xp, eta):
    n = len(w)
    f_x = _quad_f(x, w)
    r = _quad_f(x, w_star) - f_x
    wp = [w[i] + 2.0 * eta * r * x[i] * w[i] for i in range(n)]
    den = abs(_quad_f(x, wp) - f_x)
    if not den >= REL_TINY * (1.0 + abs(f_x)):
        return math.nan
    return abs(_quad_f(xp, wp) - _quad_f(xp, w)) / den


def _relu_srel(w, w_star, x, xp, eta):
    n = len(w)
    wx = _dot(w, x)
    f_x = max(0.0, wx)
    y = max(0.0, _dot(w_star, x))
    if y > 0.0:
        g = eta * (y - wx)
        wp = [w[i] + g * x[i] for i in range(n)]
    else:
        wp = list(w)
    den = abs(max(0.0, _dot(wp, x)) - f_x)
    if not den >= REL_TINY * (1.0 + f_x):
        return math.nan
    return abs(max(0.0, _dot(wp, xp)) - max(0.0, _dot(w, xp))) / den


def _dist(w, w_star):
    s = 0.0
    for i in range(len(w)):
        d = w[i] - w_star[i]
        s += d * d
    return math.sqrt(s)


def _run(step, srel_fn, w0, w_star, xs, eta, px, pxp, record_steps, tol, div_limit):
    w = [float(v) for v in w0]
    ws = [float(v) for v in w_star]
    xs_l = np.asarray(xs, dtype=float).tolist()
    px_l = np.asarray(px, dtype=float).tolist()
    pxp_l = np.asarray(pxp, dtype=float).tolist()
    rec = [int(r) for r in record_steps]
    n_rec, n_pairs, steps = len(rec), len(px_l), len(xs_l)
    srel = np.full((n_rec, n_pairs), np.nan)
    snaps = np.full((n_rec, len(w)), np.nan)
    loss = np.full(n_rec, np.nan)
    hit, div, ri = -1, -1, 0
    acc, cnt = 0.0, 0
    t = 0
    while True:
        while ri < n_rec and rec[ri] == t:
            for p in range(n_pairs):
                srel[ri, p] = srel_fn(w, ws, px_l[p], pxp_l[p], eta)
            snaps[ri] = w
            if cnt > 0:
                loss[ri] = acc / cnt
            acc, cnt = 0.0, 0
            ri += 1
        if hit < 0 and _dist(w, ws) < tol:
            hit = t
        if (hit >= 0 and ri == n_rec) or t == steps:
            break
        acc += step(w, ws, xs_l[t], eta)
        cnt += 1
        t += 1
        if not math.sqrt(_dot(w, w)) <= div_limit:
            div = t
            break
    return srel, snaps, loss, hit, div, t


def _quad_step(w, ws, x, eta):
    r = _quad_f(x, ws) - _quad_f(x, w)
    c = 2.0 * eta * r
    for i in range(len(w)):
        w[i] += c * x[i] * w[i]
    return 0.5 * r * r


def _relu_step(w, ws, x, eta):
    wx = _dot(w, x)
    y = max(0.0, _dot(ws, x))
    if y > 0.0:
        g = eta * (y - wx)
        for i in range(len(w)):
            w[i] += g * x[i]
    d = y - max(0.0, wx)
    return 0.5 * d * d


def quad_run(w0, w_star, xs, eta, px, pxp, record_steps, tol, div_limit):
    """SGD on the diagonal quadratic-feature model ``f = sum_p x_p w_p^2``."""
    return _run(_quad_step, _quad_srel, w0, w_star, xs, eta, px, pxp, record_steps, tol, div_limit)


def relu_run(w0, w_star, xs, eta, px, pxp, record_steps, tol, div_limit):
    """Indicator-gated SGD for a realizable ReLU gate."""
    return _run(_relu_step, _relu_srel, w0, w_star, xs, eta, px, pxp, record_steps, tol, div_limit)

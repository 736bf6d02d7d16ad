"""Independent reference computations used by ``elastlab verify``.

Nothing here shares code with the production paths it checks.
"""
import math

import numpy as np


def expm_taylor(a, terms=30):
    """``exp(a)`` by scaling and squaring with a truncated Taylor series."""
    a = np.asarray(a, dtype=float)
    norm = np.linalg.norm(a, 1)
    s = max(0, int(math.ceil(math.log2(norm))) + 1) if norm > 0.5 else 0
    b = a / 2.0**s
    out = np.eye(a.shape[0])
    term = np.eye(a.shape[0])
    for k in range(1, terms):
        term = term @ b / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


def central_difference_grad(f, w, h=1e-5):
    """Coordinatewise central differences of scalar ``f`` at ``w``."""
    w = np.array(w, dtype=float)
    g = np.empty_like(w)
    for i in range(w.size):
        old = w[i]
        w[i] = old + h
        fp = f(w)
        w[i] = old - h
        fm = f(w)
        w[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def relative_error(a, b, floor=0.0):
    """Largest coordinatewise ``|a - b| / max(|a|, |b|, floor)``."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(scale > 0, np.abs(a - b) / np.where(scale > 0, scale, 1.0), 0.0)
    return float(np.max(r)) if r.size else 0.0

"""Fused per-row loops for :class:`rmstpo.survival.RMSTBatch`.

Inputs are in time-sorted subject order.  ``start`` has ``m + 1`` entries:
the first index of each distinct time below ``t_star`` and one past the
last subject sharing the final such time.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _row(w, event, start, m, widths, first, risk, dead, area):
    n = w.shape[0]
    total = 0.0
    for i in range(n):
        total += w[i]
    acc = 0.0
    idx = 0
    surv = 1.0
    theta = first
    for k in range(m):
        while idx < start[k]:
            acc += w[idx]
            idx += 1
        r = total - acc
        d = 0.0
        for i in range(start[k], start[k + 1]):
            d += w[i] * event[i]
        risk[k] = r
        dead[k] = d
        if r > 0.0:
            surv *= 1.0 - d / r
        area[k] = surv * widths[k]
        theta += area[k]
    a = 0.0
    var = 0.0
    for k in range(m - 1, -1, -1):
        a += area[k]
        area[k] = a
        alive = risk[k] - dead[k]
        if dead[k] > 0.0 and alive > 0.0:
            var += a * a * dead[k] / (risk[k] * alive)
    return theta, var


@njit(cache=True)
def rmst_var(w, event, start, m, widths, first):
    bsz = w.shape[0]
    theta = np.empty(bsz)
    var = np.empty(bsz)
    risk = np.empty(m)
    dead = np.empty(m)
    area = np.empty(m)
    for b in range(bsz):
        theta[b], var[b] = _row(w[b], event, start, m, widths, first, risk, dead, area)
    return theta, var


@njit(cache=True)
def rmst_var_grad(w, event, start, m, widths, first, upto, own):
    bsz, n = w.shape
    theta = np.empty(bsz)
    var = np.empty(bsz)
    grad = np.empty((bsz, n))
    risk = np.empty(m)
    dead = np.empty(m)
    area = np.empty(m)
    cum = np.empty(m)
    for b in range(bsz):
        theta[b], var[b] = _row(w[b], event, start, m, widths, first, risk, dead, area)
        c = 0.0
        for k in range(m):
            alive = risk[k] - dead[k]
            if dead[k] > 0.0 and alive > 0.0:
                c += area[k] * dead[k] / (risk[k] * alive)
            cum[k] = c
        for i in range(n):
            g = cum[upto[i]]
            j = own[i]
            if j >= 0 and event[i] > 0.0:
                alive = risk[j] - dead[j]
                if alive > 0.0:
                    g -= area[j] / alive
            grad[b, i] = g
    return theta, var, grad


@njit(cache=True)
def rmst_var_split(lab, event, start, m, widths, first):
    """Rows of ``lab`` and of ``1 - lab`` (the complementary arm)."""
    bsz, n = lab.shape
    out = np.empty((4, bsz))
    risk = np.empty(m)
    dead = np.empty(m)
    area = np.empty(m)
    comp = np.empty(n)
    for b in range(bsz):
        row = lab[b]
        for i in range(n):
            comp[i] = 1.0 - row[i]
        out[0, b], out[1, b] = _row(row, event, start, m, widths, first, risk, dead, area)
        out[2, b], out[3, b] = _row(comp, event, start, m, widths, first, risk, dead, area)
    return out

"""Independent reference implementations used as test oracles."""
from __future__ import annotations

import math

import numpy as np


def midranks(x):
    """O(n^2) ranks: 1 + #smaller + (#equal others) / 2."""
    x = list(map(float, x))
    return [1 + sum(b < a for b in x) + 0.5 * (sum(b == a for b in x) - 1) for a in x]


def pearson(x, y):
    """Two-pass textbook formula."""
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def spearman(x, y):
    return pearson(midranks(x), midranks(y))


def kendall_tau_b(x, y):
    """Pairwise enumeration of concordant/discordant pairs with tie correction."""
    n = len(x)
    conc = disc = tx = ty = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx, dy = x[i] - x[j], y[i] - y[j]
            if dx == 0:
                tx += 1
            if dy == 0:
                ty += 1
            if dx * dy > 0:
                conc += 1
            elif dx * dy < 0:
                disc += 1
    n0 = n * (n - 1) // 2
    return (conc - disc) / math.sqrt((n0 - tx) * (n0 - ty))


def central_difference(f, x, h=1e-6):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        orig = x[i]
        x[i] = orig + h
        fp = f(x)
        x[i] = orig - h
        fm = f(x)
        x[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return g


def relative_error(analytic, numeric) -> float:
    """max |a - n| scaled by the largest gradient magnitude (guards near-zero entries)."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.abs(a).max(), np.abs(n).max(), 1e-12)
    return float(np.abs(a - n).max() / scale)


def emd_1d(p, q):
    """Earth mover's distance between two histograms on unit-spaced bins of width 1/len."""
    p = np.asarray(p, float) / np.sum(p)
    q = np.asarray(q, float) / np.sum(q)
    # transport plan by the north-west corner rule
    p, q = p.copy(), q.copy()
    i = j = 0
    cost = 0.0
    while i < len(p) and j < len(q):
        m = min(p[i], q[j])
        cost += m * abs(i - j)
        p[i] -= m
        q[j] -= m
        if p[i] <= 1e-15:
            i += 1
        if q[j] <= 1e-15:
            j += 1
    return cost / len(p)

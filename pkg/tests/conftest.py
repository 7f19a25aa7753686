"""Shared test helpers: independent oracles kept deliberately naive."""

import math

import numpy as np


def finite_difference_gradient(loss_fn, w, step=1e-5):
    """Central finite differences, one coordinate at a time."""
    w = np.asarray(w, dtype=float)
    grad = np.zeros_like(w)
    for i in range(w.size):
        up = w.copy()
        down = w.copy()
        up[i] += step
        down[i] -= step
        grad[i] = (loss_fn(up) - loss_fn(down)) / (2.0 * step)
    return grad


def ks_distance(samples, cdf):
    """Kolmogorov-Smirnov distance between a sample and a model CDF."""
    s = np.sort(np.asarray(samples, dtype=float))
    n = s.size
    f = np.array([cdf(x) for x in s])
    d_plus = np.max(np.arange(1, n + 1) / n - f)
    d_minus = np.max(f - np.arange(0, n) / n)
    return max(float(d_plus), float(d_minus))


def gaussian_cdf(x, sd):
    return 0.5 * (1.0 + math.erf(x / (sd * math.sqrt(2.0))))


def mac_reference(g, threshold):
    """Scalar per-entry statement of median-anchored clipping.

    In exact arithmetic med + sgn(g_i - med) * min(|g_i - med|, C) equals g_i
    whenever the deviation is within C, so the unclipped branch returns the
    entry itself.
    """
    g = np.asarray(g, dtype=float)
    m = float(np.median(g))
    out = np.empty_like(g)
    for i in range(g.size):
        delta = g[i] - m
        if abs(delta) <= threshold:
            out[i] = g[i]
        else:
            out[i] = m + math.copysign(threshold, delta)
    return out

"""Symmetric alpha-stable sampling and clip-probability utilities.

The channel interference model is a symmetric alpha-stable (SaS) law with
tail index alpha in (0, 2] and scale tau > 0. alpha = 2 is Gaussian with
variance 2*tau**2, alpha = 1 is Cauchy with scale tau, and for alpha < 2 the
survival function P(|X| > x) decays like x**(-alpha).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RegimeError",
    "StableParams",
    "sample_sas",
    "tail_prob_simplified",
    "estimate_unclipped_prob",
    "fit_tail_exponent",
]


class RegimeError(ValueError):
    """A threshold/parameter combination falls outside the supported regime."""


@dataclass(frozen=True)
class StableParams:
    """Tail index and scale of a symmetric alpha-stable law."""

    alpha: float
    tau: float

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 2.0:
            raise ValueError(f"alpha must lie in (0, 2], got {self.alpha}")
        if not self.tau > 0.0:
            raise ValueError(f"tau must be positive, got {self.tau}")

    def scaled(self, factor: float) -> "StableParams":
        return StableParams(self.alpha, self.tau * factor)


def sample_sas(params: StableParams, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Draw `dim` i.i.d. symmetric alpha-stable variates (Chambers-Mallows-Stuck).

    A standardized variate is built from one uniform angle on (-pi/2, pi/2)
    and one unit exponential, then scaled by tau, so samples at scale c*tau
    are exactly c times the samples at scale tau under the same generator
    state. alpha = 1 short-circuits to the Cauchy tangent form and never
    touches the exponential draw.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    alpha = params.alpha
    u = rng.uniform(-math.pi / 2.0, math.pi / 2.0, size=dim)
    if alpha == 1.0:
        return params.tau * np.tan(u)
    w = rng.standard_exponential(dim)
    # Generic CMS transform; at alpha = 2 it reduces to 2*sqrt(w)*sin(u),
    # i.e. a Gaussian with variance 2, without any division by zero.
    x = np.sin(alpha * u) / np.cos(u) ** (1.0 / alpha)
    x *= (np.cos((1.0 - alpha) * u) / w) ** ((1.0 - alpha) / alpha)
    return params.tau * x


def tail_prob_simplified(params: StableParams, threshold: float) -> float:
    """Constant-free asymptote (tau/C)**alpha for the clipped-entry probability.

    This is the complement of the simplified survival probability of an entry
    at clip threshold C. The value is clamped to [0, 1] because the power law
    exceeds one below C = tau, where the asymptote carries no information.
    """
    if not threshold > 0.0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    return min(1.0, (params.tau / threshold) ** params.alpha)


def estimate_unclipped_prob(
    params: StableParams,
    c: float,
    g: float,
    n_samples: int,
    rng: np.random.Generator,
    difference_law: str = "exact",
) -> float:
    """Monte Carlo probability that a noisy entry stays inside the clip window.

    The deviation between an entry's noise and the median entry's noise is
    compared against the worst-case margin c - sqrt(2)*g, where g bounds the
    per-client gradient norms. ``difference_law`` selects how the deviation is
    modeled:

    * ``"exact"``: the difference of two independent SaS(alpha, tau) draws,
      which by the stability property has scale 2**(1/alpha) * tau;
    * ``"sqrt2"``: a single draw at scale sqrt(2) * tau. The two agree only
      at alpha = 2.
    """
    if g < 0.0:
        raise ValueError(f"gradient bound g must be >= 0, got {g}")
    if c <= math.sqrt(2.0) * g:
        raise RegimeError(
            f"clip threshold must exceed sqrt(2)*G: C={c}, sqrt(2)*G={math.sqrt(2.0) * g}"
        )
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    margin = c - math.sqrt(2.0) * g
    if difference_law == "exact":
        deviation = sample_sas(params, n_samples, rng) - sample_sas(params, n_samples, rng)
    elif difference_law == "sqrt2":
        deviation = sample_sas(params.scaled(math.sqrt(2.0)), n_samples, rng)
    else:
        raise ValueError(f"unknown difference_law {difference_law!r}")
    return float(np.mean(np.abs(deviation) <= margin))


def fit_tail_exponent(
    samples: np.ndarray,
    start_quantile: float = 0.99,
    decades: float = 1.0,
    n_points: int = 20,
    weighted: bool = True,
) -> float:
    """Least-squares slope of log P(|X| > x) against log x.

    The grid spans `decades` decades upward from the `start_quantile` of |X|.
    Grid points with no exceedances are dropped; with Poisson counting noise
    the weighted fit uses sqrt(count) weights.
    """
    abs_sorted = np.sort(np.abs(np.asarray(samples, dtype=float)))
    n = abs_sorted.size
    if n < 100:
        raise ValueError("too few samples for a tail fit")
    x0 = abs_sorted[min(n - 1, int(start_quantile * n))]
    xs = np.logspace(np.log10(x0), np.log10(x0) + decades, n_points)
    counts = n - np.searchsorted(abs_sorted, xs, side="right")
    keep = counts > 0
    xs, counts = xs[keep], counts[keep]
    if xs.size < 2:
        raise ValueError("not enough tail mass above the start quantile")
    weights = np.sqrt(counts) if weighted else None
    slope = np.polyfit(np.log(xs), np.log(counts / n), 1, w=weights)[0]
    return float(slope)

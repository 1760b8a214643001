"""Exact single-time transition law of the square-root diffusion.

Conditionally on V(0) = v0, the scaled value 2*c*V(t) with
``c = 2*k / (sigma**2 * (1 - exp(-k*t)))`` follows a noncentral chi-square
law with ``4*k*lam/sigma**2`` degrees of freedom and noncentrality
``2*c*v0*exp(-k*t)``.  This module exposes that law directly from
scipy's noncentral chi-square implementation; it shares no code with the
path engines and serves as the independent yardstick for their terminal
distributions.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import ncx2

from .errors import DomainError
from .model import CirParams

__all__ = ["transition_cdf", "transition_mean", "transition_variance"]


def _scale_terms(params: CirParams, v0: float, t: float) -> tuple[float, float, float]:
    if t <= 0.0:
        raise DomainError(f"transition law requires t > 0, got {t!r}")
    if v0 <= 0.0:
        raise DomainError(f"transition law requires v0 > 0, got {v0!r}")
    decay = math.exp(-params.k * t)
    c = 2.0 * params.k / (params.sigma**2 * (1.0 - decay))
    df = 4.0 * params.k * params.lam / params.sigma**2
    nc = 2.0 * c * v0 * decay
    return c, df, nc


def transition_cdf(params: CirParams, v0: float, t: float, v):
    """P(V(t) <= v | V(0) = v0); accepts scalar or array v."""
    c, df, nc = _scale_terms(params, v0, t)
    arr = np.asarray(v, dtype=float)
    out = ncx2.cdf(2.0 * c * arr, df, nc)
    return float(out) if np.ndim(v) == 0 else out


def transition_mean(params: CirParams, v0: float, t: float) -> float:
    """E[V(t) | V(0) = v0] = lam + (v0 - lam) * exp(-k*t)."""
    _scale_terms(params, v0, t)
    decay = math.exp(-params.k * t)
    return params.lam * (1.0 - decay) + v0 * decay


def transition_variance(params: CirParams, v0: float, t: float) -> float:
    """Var[V(t) | V(0) = v0] in closed form."""
    _scale_terms(params, v0, t)
    k, lam, s2 = params.k, params.lam, params.sigma**2
    decay = math.exp(-k * t)
    return v0 * s2 * (decay - decay * decay) / k + lam * s2 * (1.0 - decay) ** 2 / (2.0 * k)

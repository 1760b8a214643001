"""Model parameters and the averaged square-root dynamics.

The simulated diffusion is the mean-reverting square-root process

    dV = k*(lam - V) dt + sigma*sqrt(V) dw,      V(0) = v0 > 0.

Working with U = sqrt(V) turns this into a unit-diffusion equation with
drift ``alpha/U - (k/2)*U`` where ``alpha = (4*k*lam - sigma**2)/8``.  The
scheme advances U between driver increments with the *averaged* flow, i.e.
the solution of

    dy/dt = alpha/y - (k/2)*y,

which is available in closed form:

    y(t)**2 = y0**2 * exp(-k*(t - t0)) + (2*alpha/k) * (1 - exp(-k*(t - t0))).

This module owns the validated parameter bundle, the closed-form flow, the
pathwise reconstruction (flow plus half-volatility-scaled driver shift),
the sub/super envelopes that bracket the flow under any driver bounded by
``r``, and the per-step error coefficient ``C = d1 + d2/y**2`` together with
the largest increment radius that certifies a given floor level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NegativeAlphaError, NonPositiveParameterError

__all__ = [
    "CirParams",
    "OdeState",
    "validate_params",
    "ode_exact",
    "ds_reconstruct",
    "envelopes",
    "step_error_coeff",
    "r0_for_floor",
]


@dataclass(frozen=True)
class CirParams:
    """Validated model parameters plus derived coefficients.

    Attributes
    ----------
    k, lam, sigma:
        Reversion speed, long-run mean and volatility of the square-root
        diffusion; all strictly positive.
    horizon_t:
        Length of the simulation window; strictly positive.
    alpha:
        Transformed drift coefficient ``(4*k*lam - sigma**2)/8``.  The
        scheme requires ``alpha >= 0``; the near-zero exit-time law exists
        only for ``alpha > 0``.
    gamma:
        Boundary exponent ``1/2 - k*lam/sigma**2`` of the near-zero
        eigen-expansion.  ``alpha > 0`` is equivalent to ``gamma < 1/4``
        and to a Bessel order ``-2*gamma > -1/2``.
    d1, d2:
        Error-coefficient constants ``d1 = sigma*k/2`` and
        ``d2 = (4*alpha*sigma/3) * exp(k*horizon_t/2)``.  One step from
        level ``y`` contributes ``(d1 + d2/y**2) * r * dt`` to the
        certified uniform bound.
    """

    k: float
    lam: float
    sigma: float
    horizon_t: float
    alpha: float
    gamma: float
    d1: float
    d2: float

    @property
    def near_zero_capable(self) -> bool:
        """True when the near-zero exit-time law is defined (alpha > 0)."""
        return self.alpha > 0.0

    @property
    def fixed_point(self) -> float:
        """Stationary level sqrt(2*alpha/k) of the averaged flow."""
        return math.sqrt(2.0 * self.alpha / self.k)


@dataclass(frozen=True)
class OdeState:
    """Initial condition (t0, y0) for the averaged flow."""

    t0: float
    y0: float


def validate_params(k: float, lam: float, sigma: float, horizon_t: float) -> CirParams:
    """Check raw inputs and assemble the derived coefficient bundle.

    Raises
    ------
    NonPositiveParameterError
        If any of k, lam, sigma, horizon_t is not a strictly positive
        finite number.
    NegativeAlphaError
        If 4*k*lam < sigma**2, i.e. the transformed drift coefficient is
        negative and the scheme's floor guarantees are void.
    """
    for name, value in (("k", k), ("lam", lam), ("sigma", sigma), ("horizon_t", horizon_t)):
        if not math.isfinite(value) or value <= 0.0:
            raise NonPositiveParameterError(f"{name} must be finite and > 0, got {value!r}")
    alpha = (4.0 * k * lam - sigma * sigma) / 8.0
    if alpha < 0.0:
        raise NegativeAlphaError(
            f"(4*k*lam - sigma**2)/8 = {alpha!r} < 0; the square-root scheme does not apply"
        )
    gamma = 0.5 - k * lam / (sigma * sigma)
    d1 = sigma * k / 2.0
    d2 = (4.0 * alpha * sigma / 3.0) * math.exp(k * horizon_t / 2.0)
    return CirParams(
        k=float(k),
        lam=float(lam),
        sigma=float(sigma),
        horizon_t=float(horizon_t),
        alpha=float(alpha),
        gamma=float(gamma),
        d1=float(d1),
        d2=float(d2),
    )


def _flow_squared(k: float, alpha: float, y0, dt):
    """Squared averaged flow after elapsed time dt >= 0 (array friendly)."""
    decay = np.exp(-k * np.asarray(dt, dtype=float))
    return np.square(y0) * decay + (2.0 * alpha / k) * (1.0 - decay)


def ode_exact(params: CirParams, state: OdeState, t):
    """Averaged flow y(t) started from (t0, y0), evaluated at t >= t0.

    Accepts a scalar or array ``t`` and returns a matching shape.  The
    value is strictly positive for y0 > 0 and moves monotonically toward
    the fixed point sqrt(2*alpha/k).

    Raises DomainError for t < t0 or a non-positive starting level.
    """
    if state.y0 <= 0.0:
        raise DomainError(f"flow requires y0 > 0, got {state.y0!r}")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < state.t0):
        raise DomainError("flow evaluated before its start time")
    out = np.sqrt(_flow_squared(params.k, params.alpha, state.y0, t_arr - state.t0))
    if np.ndim(t) == 0:
        return float(out)
    return out


def ds_reconstruct(y, w_increment, sigma: float):
    """Doss-Sussmann-type reconstruction: flow value plus driver shift.

    Returns ``y + (sigma/2) * w_increment`` with no clamping; callers that
    need positivity must guarantee it through step-size conditions.
    """
    result = np.asarray(y, dtype=float) + 0.5 * sigma * np.asarray(w_increment, dtype=float)
    if np.ndim(y) == 0 and np.ndim(w_increment) == 0:
        return float(result)
    return result


def envelopes(params: CirParams, state: OdeState, r: float, t):
    """Lower/upper envelopes bracketing any driven flow with |driver| <= r.

    For every control path phi with sup|phi(t)| <= r, the solution of the
    driven equation ``dy/dt = alpha/(y + s) - (k/2)*(y + s)`` with shift
    ``s = (sigma/2)*phi(t)`` stays between

        lower(t) = sqrt((y0 + sigma*r/2)**2 * e + q*(1 - e)) - sigma*r/2,
        upper(t) = sqrt((y0 - sigma*r/2)**2 * e + q*(1 - e)) + sigma*r/2,

    with ``e = exp(-k*(t - t0))`` and ``q = 2*alpha/k``.  Both collapse to
    the averaged flow as r -> 0 and equal y0 at t = t0.

    Requires y0 >= sigma*r so the upper envelope's inner square root starts
    from a non-negative shifted level.
    """
    if r < 0.0:
        raise DomainError(f"radius r must be >= 0, got {r!r}")
    if state.y0 < params.sigma * r:
        raise DomainError("envelopes require y0 >= sigma*r")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < state.t0):
        raise DomainError("envelopes evaluated before their start time")
    dt = t_arr - state.t0
    shift = 0.5 * params.sigma * r
    lower = np.sqrt(_flow_squared(params.k, params.alpha, state.y0 + shift, dt)) - shift
    upper = np.sqrt(_flow_squared(params.k, params.alpha, state.y0 - shift, dt)) + shift
    if np.ndim(t) == 0:
        return float(lower), float(upper)
    return lower, upper


def step_error_coeff(params: CirParams, y_m: float) -> float:
    """Per-step error coefficient C(y) = d1 + d2 / y**2 at level y > 0."""
    if y_m <= 0.0:
        raise DomainError(f"error coefficient requires y > 0, got {y_m!r}")
    return params.d1 + params.d2 / (y_m * y_m)


def r0_for_floor(params: CirParams, eta: float) -> float:
    """Largest increment radius certifying the floor level eta.

    Returns ``min(eta/sigma, eta / ((d1 + d2/eta**2) * horizon_t))``.  For
    any r below this value, a trajectory whose true path stays above
    2*eta keeps every skeleton point above eta, and the certified uniform
    bound is at most ``r * (d1 + d2/eta**2) * horizon_t``.
    """
    if eta <= 0.0:
        raise DomainError(f"floor level eta must be > 0, got {eta!r}")
    c_eta = step_error_coeff(params, eta)
    return min(eta / params.sigma, eta / (c_eta * params.horizon_t))

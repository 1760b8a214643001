"""Near-zero band: exit-time law of the squared process from [0, l).

When a trajectory of the squared process falls below the hand-off level
``l = A**2 * r**(2*a)``, the square-root stepper pauses and the excursion is
resolved in one shot by sampling the first time the process exits the band
at level l.  For the comparison process with constant drift ``k*lam`` (an
upper bound for the true drift inside the band) the exit-time distribution
function from a start x in [0, l) has the eigen-expansion

    u(t, x) = 1 - 2 * (x/l)**gamma
              * sum_m J_nu(pi_m * sqrt(x/l)) / (pi_m * J_{nu+1}(pi_m))
              * exp(-mu_m * t)

where ``gamma = 1/2 - k*lam/sigma**2``, ``nu = -2*gamma`` (which is > -1/2
exactly when the transformed drift coefficient alpha is positive), ``pi_m``
is the m-th positive zero of J_nu and ``mu_m = sigma**2 * pi_m**2 / (8*l)``.
In the normalised variables ``t_tilde = sigma**2 * t / (8*l)`` and
``x_tilde = x/l`` the exponents reduce to ``-pi_m**2 * t_tilde``.

A matching lower bound uses the drift ``k*(lam - l)``, i.e. the same series
with ``gamma`` replaced by ``gamma_minus = gamma + k*l/sigma**2`` (defined
for l < lam).  The gap between the two distribution functions quantifies
the band-approximation quality and is reported per excursion.

The kernel ``x_tilde**gamma * J_nu(pi_m*sqrt(x_tilde))`` is evaluated
through its power series for small arguments: the two factors separately
blow up/vanish as x_tilde -> 0 while their product is entire, with value
``(pi_m/2)**nu / Gamma(nu+1)`` at zero.  This keeps starts arbitrarily
close to (and exactly at) the origin well defined.

Intended range: orders nu up to roughly 10**2.  Far beyond that the
leading series terms overflow the double range at small t_tilde and the
clamped values degrade; such parameter sets put essentially no mass near
zero in the first place.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln, jv, jvp

from .errors import ConvergenceError, DomainError, NearZeroUnavailableError
from .model import CirParams
from .rng import RngStream

__all__ = [
    "DEFAULT_TRUNCATION",
    "FourierBesselTable",
    "BandExcursionResult",
    "bessel_j",
    "bessel_zero",
    "build_table",
    "u_value",
    "u_normalized",
    "u_minus",
    "sample_exit_time",
    "band_excursion",
    "band_level",
]

logger = logging.getLogger(__name__)

# Table length. 16 terms keep the truncation tail of the expansion below
# 1e-8 for all normalised times >= 0.01 across the supported orders.
DEFAULT_TRUNCATION = 16

_ZERO_ABS_TOL = 1.0e-12
_SERIES_SWITCH_Z = 2.0


def band_level(band_amplitude: float, band_exponent: float, r: float) -> float:
    """Hand-off level l = A**2 * r**(2*a) in squared-process units."""
    _validate_band_inputs(r, band_amplitude, band_exponent)
    return band_amplitude * band_amplitude * r ** (2.0 * band_exponent)


def _validate_band_inputs(r: float, band_amplitude: float, band_exponent: float) -> None:
    if not (math.isfinite(r) and r > 0.0):
        raise DomainError(f"radius r must be finite and > 0, got {r!r}")
    if not (math.isfinite(band_amplitude) and band_amplitude > 0.0):
        raise DomainError(f"band amplitude must be finite and > 0, got {band_amplitude!r}")
    if not 0.0 < band_exponent < 0.5:
        raise DomainError(
            f"band exponent must lie in (0, 1/2), got {band_exponent!r}"
        )


def bessel_j(nu: float, x):
    """Bessel function of the first kind J_nu(x) for nu > -1, x >= 0."""
    if not nu > -1.0:
        raise DomainError(f"bessel_j requires order nu > -1, got {nu!r}")
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0.0) or not np.all(np.isfinite(arr)):
        raise DomainError("bessel_j requires x >= 0")
    out = jv(nu, arr)
    return float(out) if np.ndim(x) == 0 else out


def _mcmahon_guess(nu: float, m: int) -> float:
    """Asymptotic approximation of the m-th positive zero of J_nu."""
    beta = (m + 0.5 * nu - 0.25) * math.pi
    mu = 4.0 * nu * nu
    return beta - (mu - 1.0) / (8.0 * beta) - 4.0 * (mu - 1.0) * (7.0 * mu - 31.0) / (
        3.0 * (8.0 * beta) ** 3
    )


def _next_zero_by_scan(nu: float, lo: float) -> float:
    """First zero of J_nu strictly above lo, via sign-change scan + brentq.

    Consecutive zeros of J_nu are more than pi/2 apart for every nu > -1,
    so a scan step of pi/4 cannot jump across two sign changes.
    """
    step = math.pi / 4.0
    a = lo
    fa = jv(nu, a) if a > 0.0 else math.inf  # J_nu > 0 just right of 0
    for _ in range(10_000):
        b = a + step
        fb = jv(nu, b)
        if fb == 0.0:
            return b
        if (fa > 0.0) != (fb > 0.0):
            return brentq(lambda z: jv(nu, z), a, b, xtol=1e-15, rtol=8.9e-16)
        a, fa = b, fb
    raise ConvergenceError(f"no sign change of J_{nu} found above {lo!r}")


def _is_mth_zero(nu: float, x: float, m: int) -> bool:
    """Residual plus parity check: J_{nu+1} alternates sign across the
    ordered zeros of J_nu, positive at the first one."""
    if abs(jv(nu, x)) >= _ZERO_ABS_TOL:
        return False
    want_positive = m % 2 == 1
    return (jv(nu + 1.0, x) > 0.0) == want_positive


@functools.lru_cache(maxsize=256)
def _bessel_zeros_cached(nu: float, count: int) -> tuple[float, ...]:
    zeros: list[float] = []
    prev = max(nu, 0.0)  # positive zeros of J_nu exceed nu for nu >= 0
    for m in range(1, count + 1):
        x = _mcmahon_guess(nu, m)
        accepted = False
        if x > prev:
            for _ in range(50):
                f = jv(nu, x)
                fp = jvp(nu, x, 1)
                if fp == 0.0 or not math.isfinite(fp):
                    break
                x_new = x - f / fp
                if x_new <= prev:
                    break
                converged = abs(x_new - x) < 1e-15 * max(1.0, x)
                x = x_new
                if converged:
                    accepted = _is_mth_zero(nu, x, m)
                    break
        if not accepted:
            x = _next_zero_by_scan(nu, prev + 1e-9 if zeros else prev)
            if not _is_mth_zero(nu, x, m):
                raise ConvergenceError(
                    f"zero {m} of J_{nu}: scan landed at {x!r} failing the "
                    f"residual/parity validation"
                )
        zeros.append(x)
        prev = x
    return tuple(zeros)


def bessel_zero(nu: float, m: int) -> float:
    """The m-th positive zero of J_nu (m >= 1), accurate to ~1e-13 relative.

    Starts from the McMahon asymptotic approximation refined by Newton
    steps on J_nu; falls back to a sign-change scan with bracketed root
    finding whenever the asymptotic start is unreliable (small m together
    with orders away from |nu| = 1/2).
    """
    if not nu > -1.0:
        raise DomainError(f"bessel_zero requires order nu > -1, got {nu!r}")
    if m < 1 or int(m) != m:
        raise DomainError(f"bessel_zero requires integer m >= 1, got {m!r}")
    return _bessel_zeros_cached(float(nu), int(m))[-1]


@dataclass(frozen=True, eq=False)
class FourierBesselTable:
    """Precomputed eigen-expansion data for one (gamma, l, sigma) triple.

    zeros[m] are the positive Bessel zeros pi_m of order ``order_nu``,
    eigenvalues[m] = sigma**2 * pi_m**2 / (8*l) are the physical-time decay
    rates, coefficients[m] = -2 / (l**gamma * pi_m * J_{nu+1}(pi_m)) are the
    expansion coefficients against the kernels x**gamma * J_nu(pi_m
    sqrt(x/l)), and weights[m] = 2 / (pi_m * J_{nu+1}(pi_m)) are the same
    coefficients in normalised variables (with the sign folded into the
    series, u = 1 - sum_m weights[m] * kernel_m * exp(-pi_m**2 * t_tilde)).
    """

    gamma: float
    order_nu: float
    level_l: float
    sigma: float
    truncation_m: int
    zeros: np.ndarray
    eigenvalues: np.ndarray
    coefficients: np.ndarray
    weights: np.ndarray


def _build_table_raw(gamma: float, level_l: float, sigma: float, truncation_m: int) -> FourierBesselTable:
    nu = -2.0 * gamma
    zeros = np.array(_bessel_zeros_cached(float(nu), int(truncation_m)))
    eigenvalues = sigma * sigma * zeros * zeros / (8.0 * level_l)
    j_next = jv(nu + 1.0, zeros)
    weights = 2.0 / (zeros * j_next)
    coefficients = -(level_l**-gamma) * weights
    return FourierBesselTable(
        gamma=float(gamma),
        order_nu=float(nu),
        level_l=float(level_l),
        sigma=float(sigma),
        truncation_m=int(truncation_m),
        zeros=zeros,
        eigenvalues=eigenvalues,
        coefficients=coefficients,
        weights=weights,
    )


def build_table(
    params: CirParams,
    r: float,
    band_amplitude: float,
    band_exponent: float,
    truncation_m: int = DEFAULT_TRUNCATION,
) -> FourierBesselTable:
    """Assemble the exit-time expansion table for the level l = A**2 r**(2a).

    Raises NearZeroUnavailableError when the transformed drift coefficient
    is zero (the expansion order would hit -1/2 where the boundary is
    attainable in a different regime), and DomainError for a non-positive
    radius, amplitude or truncation length, or an exponent outside
    (0, 1/2).
    """
    if params.alpha <= 0.0:
        raise NearZeroUnavailableError(
            "near-zero exit-time law requires (4*k*lam - sigma**2)/8 > 0"
        )
    if r <= 0.0 or band_amplitude <= 0.0:
        raise DomainError("build_table requires r > 0 and band_amplitude > 0")
    if not 0.0 < band_exponent < 0.5:
        raise DomainError(f"band_exponent must lie in (0, 1/2), got {band_exponent!r}")
    if truncation_m < 1:
        raise DomainError(f"truncation_m must be >= 1, got {truncation_m!r}")
    level = band_level(band_amplitude, band_exponent, r)
    return _build_table_raw(params.gamma, level, params.sigma, truncation_m)


def build_table_at_level(
    params: CirParams, level: float, truncation_m: int = DEFAULT_TRUNCATION
) -> FourierBesselTable:
    """Assemble the exit-time expansion table at an explicitly given level.

    Same contract as build_table, but the hand-off level is prescribed from
    outside instead of derived from (A, a, r); used for file exports and
    cross-validation where the level must be hit exactly.
    """
    if params.alpha <= 0.0:
        raise NearZeroUnavailableError(
            "near-zero exit-time law requires (4*k*lam - sigma**2)/8 > 0"
        )
    if not (math.isfinite(level) and level > 0.0):
        raise DomainError(f"level must be finite and > 0, got {level!r}")
    if truncation_m < 1:
        raise DomainError(f"truncation_m must be >= 1, got {truncation_m!r}")
    return _build_table_raw(params.gamma, float(level), params.sigma, int(truncation_m))


def build_minus_table_at_level(
    params: CirParams, level: float, truncation_m: int = DEFAULT_TRUNCATION
) -> FourierBesselTable:
    """Lower comparison-law table at an explicitly given level (needs level < lam)."""
    if params.alpha <= 0.0:
        raise NearZeroUnavailableError(
            "near-zero exit-time law requires (4*k*lam - sigma**2)/8 > 0"
        )
    if not (math.isfinite(level) and 0.0 < level < params.lam):
        raise DomainError(
            f"lower comparison law requires 0 < level < lam, got level={level!r}, lam={params.lam!r}"
        )
    if truncation_m < 1:
        raise DomainError(f"truncation_m must be >= 1, got {truncation_m!r}")
    gamma_minus = params.gamma + params.k * level / (params.sigma * params.sigma)
    return _build_table_raw(gamma_minus, float(level), params.sigma, int(truncation_m))


@functools.lru_cache(maxsize=64)
def _cached_table(params: CirParams, r: float, band_amplitude: float, band_exponent: float, truncation_m: int) -> FourierBesselTable:
    return build_table(params, r, band_amplitude, band_exponent, truncation_m)


@functools.lru_cache(maxsize=64)
def _cached_minus_table(params: CirParams, r: float, band_amplitude: float, band_exponent: float, truncation_m: int) -> FourierBesselTable:
    level = band_level(band_amplitude, band_exponent, r)
    if not level < params.lam:
        raise DomainError(
            f"lower comparison law requires l < lam, got l={level!r}, lam={params.lam!r}"
        )
    gamma_minus = params.gamma + params.k * level / (params.sigma * params.sigma)
    return _build_table_raw(gamma_minus, level, params.sigma, truncation_m)


def _scaled_kernel(gamma: float, zeros: np.ndarray, x_tilde: float) -> np.ndarray:
    """x_tilde**gamma * J_nu(pi_m * sqrt(x_tilde)) for all tabulated zeros.

    Uses the power series in x_tilde (entire, obtained by folding the
    x**gamma prefactor into the series of J_nu) whenever the Bessel
    argument is small, and the direct product otherwise.
    """
    nu = -2.0 * gamma
    z = zeros * math.sqrt(x_tilde)
    out = np.empty_like(zeros)
    small = z <= _SERIES_SWITCH_Z
    if np.any(small):
        zs = zeros[small]
        with np.errstate(under="ignore"):
            term = np.exp(nu * np.log(0.5 * zs) - gammaln(nu + 1.0))
            acc = term.copy()
            w = zs * zs * x_tilde / 4.0
            for j in range(200):
                term = term * (-w) / ((j + 1.0) * (j + 1.0 + nu))
                acc += term
                if np.max(np.abs(term)) < 1e-18 * max(np.max(np.abs(acc)), 1e-300):
                    break
        out[small] = acc
    large = ~small
    if np.any(large):
        with np.errstate(under="ignore"):
            out[large] = math.exp(gamma * math.log(x_tilde)) * jv(nu, z[large])
    return out


def _u_tilde(table: FourierBesselTable, t_tilde: float, x_tilde: float) -> float:
    """Truncated expansion in normalised variables, clamped to [0, 1].

    Accepts x_tilde = 0 as the continuous limit of the kernel.  Returns
    exactly 1.0 on the boundary x_tilde = 1 where the expansion's residual
    is pure truncation noise.
    """
    if x_tilde == 1.0:
        return 1.0
    kern = _scaled_kernel(table.gamma, table.zeros, x_tilde)
    with np.errstate(under="ignore", over="ignore", invalid="ignore"):
        s = float(np.sum(table.weights * kern * np.exp(-table.zeros * table.zeros * t_tilde)))
    value = 1.0 - s
    if math.isnan(value):
        # overflowing leading terms (extreme orders at tiny times) carry the
        # sign of the largest term; the clamp direction hardly matters there
        return 0.0
    return min(1.0, max(0.0, value))


def u_normalized(table: FourierBesselTable, t_tilde: float, x_tilde: float) -> float:
    """Exit-probability expansion in normalised variables, in [0, 1].

    Requires 0 <= x_tilde <= 1 and t_tilde >= 0; x_tilde = 0 is evaluated
    as the (finite) limit of the kernel.
    """
    if not 0.0 <= x_tilde <= 1.0:
        raise DomainError(f"u_normalized requires 0 <= x_tilde <= 1, got {x_tilde!r}")
    if t_tilde < 0.0:
        raise DomainError(f"u_normalized requires t_tilde >= 0, got {t_tilde!r}")
    return _u_tilde(table, t_tilde, x_tilde)


def u_value(table: FourierBesselTable, t: float, x: float) -> float:
    """Probability that the band has been exited by physical time t,
    starting from squared-process level x in (0, l]."""
    if not 0.0 < x <= table.level_l:
        raise DomainError(f"u_value requires 0 < x <= l = {table.level_l!r}, got {x!r}")
    if t < 0.0:
        raise DomainError(f"u_value requires t >= 0, got {t!r}")
    t_tilde = table.sigma * table.sigma * t / (8.0 * table.level_l)
    return _u_tilde(table, t_tilde, x / table.level_l)


def u_minus(
    params: CirParams,
    r: float,
    band_amplitude: float,
    band_exponent: float,
    t: float,
    x: float,
    truncation_m: int = DEFAULT_TRUNCATION,
) -> float:
    """Lower comparison exit probability (drift reduced to k*(lam - l)).

    Same expansion with gamma replaced by gamma + k*l/sigma**2; requires
    l < lam.  Bounds u_value from below, and the gap between the two is
    the band-approximation diagnostic.
    """
    table = _cached_minus_table(params, r, band_amplitude, band_exponent, truncation_m)
    if not 0.0 < x <= table.level_l:
        raise DomainError(f"u_minus requires 0 < x <= l = {table.level_l!r}, got {x!r}")
    if t < 0.0:
        raise DomainError(f"u_minus requires t >= 0, got {t!r}")
    t_tilde = table.sigma * table.sigma * t / (8.0 * table.level_l)
    return _u_tilde(table, t_tilde, x / table.level_l)


def sample_exit_time(table: FourierBesselTable, x: float, u: float, tol: float = 1.0e-10) -> float:
    """Invert the exit-time law: physical time theta with u(theta, x) = u.

    Expands a bracket in normalised time by doubling/halving from 0.25 and
    finishes with bracketed root finding; the result satisfies
    |u(theta, x) - u| < tol.  Starts exactly at the origin (x = 0) are
    evaluated through the kernel's limit.

    If u lies below the truncated expansion's value at the smallest
    resolvable time (possible only for u under the truncation noise
    floor), the exit is below the table's time resolution and 0.0 is
    returned; the residual guarantee does not apply to that branch.
    """
    if not 0.0 <= x < table.level_l:
        raise DomainError(
            f"sample_exit_time requires 0 <= x < l = {table.level_l!r}, got {x!r}"
        )
    if not 0.0 < u < 1.0:
        raise DomainError(f"sample_exit_time requires u in (0, 1), got {u!r}")
    x_tilde = x / table.level_l

    def g(t_tilde: float) -> float:
        return _u_tilde(table, t_tilde, x_tilde) - u

    hi = 0.25
    g_hi = g(hi)
    for _ in range(64):
        if g_hi >= 0.0:
            break
        hi *= 2.0
        g_hi = g(hi)
    else:
        raise ConvergenceError("sample_exit_time: no upper bracket below t_tilde = 2**64/4")
    lo = 0.5 * hi
    g_lo = g(lo)
    while g_lo > 0.0:
        lo *= 0.5
        if lo < 1e-14:
            logger.debug(
                "exit below table resolution: u=%.3e under noise floor %.3e at x_tilde=%.3e",
                u, g_lo + u, x_tilde,
            )
            return 0.0
        g_lo = g(lo)

    t_root = brentq(g, lo, hi, xtol=1e-16, rtol=8.9e-16, maxiter=300)
    if abs(g(t_root)) >= tol:
        raise ConvergenceError(
            f"sample_exit_time: residual {g(t_root):.3e} above tol {tol:.3e}"
        )
    return 8.0 * table.level_l * t_root / (table.sigma * table.sigma)


@dataclass(frozen=True)
class BandExcursionResult:
    """One resolved excursion: its duration, the squared-process level at
    which stepping resumes (always the hand-off level l), and the gap
    between upper and lower comparison laws at the sampled point (nan when
    the lower law is undefined, i.e. l >= lam)."""

    exit_time: float
    exit_value: float
    u_gap: float


def band_excursion(
    params: CirParams,
    r: float,
    band_amplitude: float,
    band_exponent: float,
    v_bar_entry: float,
    rng: RngStream,
    truncation_m: int = DEFAULT_TRUNCATION,
) -> BandExcursionResult:
    """Resolve one near-zero excursion started at squared level v_bar_entry.

    Consumes exactly one uniform draw.  The exit_value is the hand-off
    level A**2 * r**(2*a) itself, so the caller resumes regular stepping
    from sqrt(exit_value) with no interpolation error at the hand-off.
    """
    if params.alpha <= 0.0:
        raise NearZeroUnavailableError(
            "band excursion requires (4*k*lam - sigma**2)/8 > 0"
        )
    table = _cached_table(params, r, band_amplitude, band_exponent, truncation_m)
    if not 0.0 <= v_bar_entry < table.level_l:
        raise DomainError(
            f"band entry level must lie in [0, l) with l = {table.level_l!r}, "
            f"got {v_bar_entry!r}"
        )
    u = rng.uniform()
    if u <= 0.0:
        u = 2.0**-53
    theta = sample_exit_time(table, v_bar_entry, u)

    if table.level_l < params.lam:
        minus = _cached_minus_table(params, r, band_amplitude, band_exponent, truncation_m)
        t_tilde = table.sigma * table.sigma * theta / (8.0 * table.level_l)
        x_tilde = v_bar_entry / table.level_l
        gap = _u_tilde(table, t_tilde, x_tilde) - _u_tilde(minus, t_tilde, x_tilde)
        logger.debug(
            "band excursion: entry=%.6e exit_time=%.6e comparison gap=%.3e",
            v_bar_entry, theta, gap,
        )
    else:
        gap = math.nan
    return BandExcursionResult(exit_time=theta, exit_value=table.level_l, u_gap=gap)

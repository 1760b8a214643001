"""Exit-time driven stepping of the square-root process.

A trajectory is advanced on the random time grid generated by successive
exit times of the driving Wiener path from [-r, r]: over one step the
driver increment is exactly +-r, the square-root value is propagated with
the averaged flow and shifted by (sigma/2) * (+-r), and one term
``C_n * dt_n`` with ``C_n = d1 + d2/y_n**2`` is appended to the error
ledger.  The certified almost-sure uniform bound for the whole run is

    r * sum_n C_n * dt_n  (+ sigma*r if the run ends with the horizon
                           truncating a step, where the unknown partial
                           driver increment is replaced by zero).

Whenever the value falls below the hand-off threshold (A/2) * r**a the
regular scheme pauses: the squared process sits inside the near-zero band
[0, A**2 * r**(2a)) and the excursion is resolved in one shot by the
eigen-expansion exit-time sampler, after which stepping resumes exactly at
the hand-off level.  Inside an excursion the dense output is the chord
between entry and exit, certified within A * r**a.

One regular step consumes exactly two uniforms (sign first, then exit
time) and one excursion consumes exactly one; engines that pre-draw per
path rely on this order.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional

from .errors import (
    BandRequiredError,
    ConfigError,
    ConvergenceError,
    DomainError,
    NearZeroUnavailableError,
)
from .fpt import sample_sign, sample_theta
from .model import CirParams, OdeState, ds_reconstruct, ode_exact, step_error_coeff
from .nearzero import DEFAULT_TRUNCATION, band_excursion, band_level
from .rng import RngStream

__all__ = [
    "Regime",
    "BandDecision",
    "SkeletonPoint",
    "ErrorLedger",
    "BandExcursionRecord",
    "PathSkeleton",
    "DenseValue",
    "BoundReport",
    "check_band_entry",
    "step_regular",
    "simulate_path",
    "dense_eval",
    "error_bound",
    "bound_report",
    "verify_skeleton",
]

_MAX_STEPS_HARD_CAP = 10_000_000


class Regime(str, Enum):
    """Tag attached to every skeleton point."""

    REGULAR = "regular"
    BAND_ENTRY = "band_entry"
    BAND_EXIT = "band_exit"
    FINAL = "final"


class BandDecision(Enum):
    CONTINUE = "continue"
    ENTER_BAND = "enter_band"


@dataclass(frozen=True)
class SkeletonPoint:
    """One skeleton node.

    ``xi`` and ``theta`` record the draws consumed by the step that
    produced this point: the exit side and the drawn exit duration for a
    regular step (xi is None on a horizon-truncated step, whose increment
    is replaced by zero), or the excursion duration for a band exit.  Both
    are None on the initial point.  ``cum_bound`` is the certified bound
    valid at this node: the running ``r * sum C_m * dt_m``, plus the
    sigma*r surcharge on a zero-increment final node.
    """

    t: float
    sqrt_v_bar: float
    regime: Regime
    xi: Optional[int]
    theta: Optional[float]
    cum_bound: float


@dataclass
class ErrorLedger:
    """Accumulates the certified uniform bound of one trajectory."""

    r: float
    band_amplitude: float
    band_exponent: float
    terms: list[tuple[float, float]] = field(default_factory=list)
    final_step_extra: float = 0.0
    n_band_excursions: int = 0
    _sum: float = 0.0

    def add_term(self, coeff: float, dt: float) -> None:
        self.terms.append((coeff, dt))
        self._sum += coeff * dt

    @property
    def terms_bound(self) -> float:
        """r * sum of C_m * dt_m, accumulated left to right."""
        return self.r * self._sum

    @property
    def cumulative_bound(self) -> float:
        return self.r * self._sum + self.final_step_extra


@dataclass(frozen=True)
class BandExcursionRecord:
    """Diagnostics for one resolved near-zero excursion."""

    t_entry: float
    v_entry: float
    exit_time: float
    u_gap: float
    truncated: bool


@dataclass
class PathSkeleton:
    """Full output of one simulated trajectory."""

    params: CirParams
    r: float
    band_amplitude: float
    band_exponent: float
    t0: float
    t_end: float
    truncation_m: int
    points: list[SkeletonPoint]
    ledger: ErrorLedger
    excursions: list[BandExcursionRecord]
    metadata: dict

    @property
    def terminal_sqrt(self) -> float:
        return self.points[-1].sqrt_v_bar

    @property
    def terminal_value(self) -> float:
        s = self.points[-1].sqrt_v_bar
        return s * s

    @property
    def times(self) -> list[float]:
        return [p.t for p in self.points]


@dataclass(frozen=True)
class DenseValue:
    """Dense-output sample: value, certified error tag and the regime that
    produced it ("skeleton" for exact node hits, else "regular"/"band")."""

    value: float
    error_bound: float
    regime: str


@dataclass(frozen=True)
class BoundReport:
    """Split of the certified bound by regime.

    ``skeleton_terms_bound`` covers the exit-time grid outside the band
    (order r**(1-2a) in the radius), ``final_step_extra`` the zero
    increment on a horizon-truncated step, and ``band_inside_bound`` the
    chord approximation inside excursions (A * r**a, reported as 0 when no
    excursion occurred).
    """

    cumulative_bound: float
    skeleton_terms_bound: float
    final_step_extra: float
    band_inside_bound: float
    n_band_excursions: int


def _radius_limit(params: CirParams) -> float:
    """Largest admissible increment radius (2/3)*sqrt(2*alpha/(k*sigma**2))."""
    return (2.0 / 3.0) * math.sqrt(2.0 * params.alpha / (params.k * params.sigma**2))


def check_band_entry(
    params: CirParams,
    r: float,
    band_amplitude: float,
    band_exponent: float,
    sqrt_v_bar: float,
) -> BandDecision:
    """Validate the band configuration and classify the current level.

    Returns ENTER_BAND exactly when sqrt_v_bar < (A/2) * r**a.  Raises
    ConfigError when the configuration is structurally unusable: r or A
    not positive, exponent outside (0, 1/2), hand-off threshold not above
    the regular-step floor (3/2)*sigma*r, or (for a positive transformed
    drift coefficient) a radius at or beyond
    (2/3)*sqrt(2*alpha/(k*sigma**2)), past which the scheme's positivity
    guarantee is void.  With a zero transformed drift coefficient the
    radius condition is vacuous and entering the band raises downstream
    instead.
    """
    if r <= 0.0:
        raise ConfigError(f"increment radius r must be > 0, got {r!r}")
    if band_amplitude <= 0.0:
        raise ConfigError(f"band_amplitude must be > 0, got {band_amplitude!r}")
    if not 0.0 < band_exponent < 0.5:
        raise ConfigError(f"band_exponent must lie in (0, 1/2), got {band_exponent!r}")
    threshold = 0.5 * band_amplitude * r**band_exponent
    if not threshold > 1.5 * params.sigma * r:
        raise ConfigError(
            f"hand-off threshold {threshold!r} must exceed (3/2)*sigma*r = "
            f"{1.5 * params.sigma * r!r}; decrease r"
        )
    if params.alpha > 0.0 and r >= _radius_limit(params):
        raise ConfigError(
            f"r = {r!r} must stay below (2/3)*sqrt(2*alpha/(k*sigma**2)) = "
            f"{_radius_limit(params)!r}"
        )
    if sqrt_v_bar < threshold:
        return BandDecision.ENTER_BAND
    return BandDecision.CONTINUE


def step_regular(
    params: CirParams,
    r: float,
    current: SkeletonPoint,
    rng: RngStream,
    ledger: ErrorLedger,
    t_end: float,
    final_increment_sampler: Optional[Callable[[RngStream, float, float], float]] = None,
) -> SkeletonPoint:
    """Advance one exit-time step from ``current``, not past ``t_end``.

    Draws the exit side and the exit duration theta (two uniforms, in that
    order), propagates the averaged flow to min(t + theta, t_end), applies
    the driver shift (sigma/2)*r*xi on an interior step, and appends the
    step's (C, dt) term to the ledger.  A horizon-truncated step replaces
    the unknown partial increment with zero and books the sigma*r
    surcharge, unless ``final_increment_sampler(rng, r, remaining)`` is
    supplied to draw the partial increment exactly, in which case no
    surcharge applies.

    Requires current.sqrt_v_bar >= (3/2)*sigma*r (raises
    BandRequiredError below it - the near-zero machinery must take over).
    """
    if current.sqrt_v_bar < 1.5 * params.sigma * r:
        raise BandRequiredError(
            f"level {current.sqrt_v_bar!r} below (3/2)*sigma*r = "
            f"{1.5 * params.sigma * r!r}; resolve through the near-zero band"
        )
    xi = sample_sign(rng)
    theta = sample_theta(rng, r)
    final = current.t + theta >= t_end
    t_next = t_end if final else current.t + theta
    y_flow = ode_exact(params, OdeState(current.t, current.sqrt_v_bar), t_next)
    extra = 0.0
    if final:
        if final_increment_sampler is None:
            value = y_flow
            xi_out: Optional[int] = None
            extra = params.sigma * r
        else:
            zeta = final_increment_sampler(rng, r, t_end - current.t)
            if not abs(zeta) <= r:
                raise DomainError(
                    f"final increment sampler returned {zeta!r} outside [-r, r]"
                )
            value = ds_reconstruct(y_flow, zeta, params.sigma)
            xi_out = None
    else:
        value = ds_reconstruct(y_flow, r * xi, params.sigma)
        xi_out = xi
    ledger.add_term(step_error_coeff(params, current.sqrt_v_bar), t_next - current.t)
    if final:
        ledger.final_step_extra = extra
    # With r below the admissible radius the post-step level cannot drop
    # under sigma*r: the squared flow is a convex mix of y**2 >= (3/2 s r)**2
    # and 2*alpha/k > (3 s r / 2)**2, and the shift removes at most s*r/2.
    if params.alpha > 0.0 and r < _radius_limit(params):
        assert value >= params.sigma * r * (1.0 - 1e-12)
    return SkeletonPoint(
        t=t_next,
        sqrt_v_bar=float(value),
        regime=Regime.FINAL if final else Regime.REGULAR,
        xi=xi_out,
        theta=theta,
        cum_bound=ledger.terms_bound + extra,
    )


def simulate_path(
    params: CirParams,
    v0: float,
    r: float,
    band_amplitude: float,
    band_exponent: float,
    rng: RngStream,
    t0: float = 0.0,
    truncation_m: int = DEFAULT_TRUNCATION,
    max_steps: Optional[int] = None,
    final_increment_sampler: Optional[Callable[[RngStream, float, float], float]] = None,
) -> PathSkeleton:
    """Simulate one trajectory over [t0, t0 + horizon_t].

    Alternates regular exit-time steps with near-zero excursions whenever
    the level crosses the hand-off threshold (A/2)*r**a.  Requires
    sqrt(v0) >= sigma*r.  Raises NearZeroUnavailableError if the band is
    entered while the transformed drift coefficient is zero, and
    ConvergenceError if the step budget is exhausted (a guard against
    misconfigured radii, not a tuning knob).
    """
    if v0 <= 0.0:
        raise DomainError(f"v0 must be > 0, got {v0!r}")
    sqrt_v0 = math.sqrt(v0)
    if sqrt_v0 < params.sigma * r:
        raise DomainError(
            f"sqrt(v0) = {sqrt_v0!r} below sigma*r = {params.sigma * r!r}"
        )
    decision = check_band_entry(params, r, band_amplitude, band_exponent, sqrt_v0)
    t_end = t0 + params.horizon_t
    ledger = ErrorLedger(r=r, band_amplitude=band_amplitude, band_exponent=band_exponent)
    first_regime = (
        Regime.BAND_ENTRY if decision is BandDecision.ENTER_BAND else Regime.REGULAR
    )
    points = [
        SkeletonPoint(
            t=t0, sqrt_v_bar=sqrt_v0, regime=first_regime, xi=None, theta=None,
            cum_bound=0.0,
        )
    ]
    excursions: list[BandExcursionRecord] = []
    sqrt_handoff = math.sqrt(band_level(band_amplitude, band_exponent, r))
    cap = _MAX_STEPS_HARD_CAP if max_steps is None else max_steps

    while points[-1].t < t_end:
        if len(points) > cap:
            raise ConvergenceError(
                f"step budget {cap} exhausted before reaching the horizon"
            )
        current = points[-1]
        if current.regime is Regime.BAND_ENTRY:
            if not params.near_zero_capable:
                raise NearZeroUnavailableError(
                    "trajectory entered the near-zero band but the transformed "
                    "drift coefficient is zero"
                )
            exc = band_excursion(
                params, r, band_amplitude, band_exponent,
                v_bar_entry=current.sqrt_v_bar**2, rng=rng,
                truncation_m=truncation_m,
            )
            ledger.n_band_excursions += 1
            t_exit = current.t + exc.exit_time
            truncated = t_exit >= t_end
            excursions.append(
                BandExcursionRecord(
                    t_entry=current.t,
                    v_entry=current.sqrt_v_bar**2,
                    exit_time=exc.exit_time,
                    u_gap=exc.u_gap,
                    truncated=truncated,
                )
            )
            if truncated:
                # horizon inside the excursion: final value on the chord
                frac = (t_end - current.t) / exc.exit_time
                value = current.sqrt_v_bar + (sqrt_handoff - current.sqrt_v_bar) * frac
                points.append(
                    SkeletonPoint(
                        t=t_end, sqrt_v_bar=value, regime=Regime.FINAL,
                        xi=None, theta=exc.exit_time, cum_bound=ledger.terms_bound,
                    )
                )
            else:
                points.append(
                    SkeletonPoint(
                        t=t_exit, sqrt_v_bar=sqrt_handoff, regime=Regime.BAND_EXIT,
                        xi=None, theta=exc.exit_time, cum_bound=ledger.terms_bound,
                    )
                )
            continue
        nxt = step_regular(
            params, r, current, rng, ledger, t_end,
            final_increment_sampler=final_increment_sampler,
        )
        if nxt.regime is Regime.REGULAR:
            if (
                check_band_entry(params, r, band_amplitude, band_exponent, nxt.sqrt_v_bar)
                is BandDecision.ENTER_BAND
            ):
                nxt = replace(nxt, regime=Regime.BAND_ENTRY)
        points.append(nxt)

    metadata = {
        "seed": getattr(rng, "seed", None),
        "stream_id": getattr(rng, "stream_id", None),
        "generator": getattr(rng, "generator_id", "unknown"),
    }
    return PathSkeleton(
        params=params,
        r=r,
        band_amplitude=band_amplitude,
        band_exponent=band_exponent,
        t0=t0,
        t_end=t_end,
        truncation_m=truncation_m,
        points=points,
        ledger=ledger,
        excursions=excursions,
        metadata=metadata,
    )


def _point_display_bound(path: PathSkeleton, idx: int) -> float:
    return path.points[idx].cum_bound


def dense_eval(path: PathSkeleton, t: float) -> DenseValue:
    """Evaluate the dense interpolant of the trajectory at time t.

    Exact skeleton times return the stored node value with its certified
    node bound.  Inside a regular segment the value is the averaged flow
    from the left node plus the chord of the known driver increment; its
    tag is the right node's ledger bound plus sigma*r (covering the gap
    between the true driver and its chord).  Inside an excursion the value
    is the straight line between entry and exit and the tag is A * r**a.
    """
    if not path.t0 <= t <= path.t_end:
        raise DomainError(f"t = {t!r} outside [{path.t0!r}, {path.t_end!r}]")
    times = path.times
    pts = path.points
    idx = bisect_left(times, t)
    if idx < len(times) and times[idx] == t:
        return DenseValue(
            value=pts[idx].sqrt_v_bar,
            error_bound=_point_display_bound(path, idx),
            regime="skeleton",
        )
    p, q = pts[idx - 1], pts[idx]
    frac = (t - p.t) / (q.t - p.t)
    if p.regime is Regime.BAND_ENTRY:
        value = p.sqrt_v_bar + (q.sqrt_v_bar - p.sqrt_v_bar) * frac
        tag = path.band_amplitude * path.r**path.band_exponent
        return DenseValue(value=value, error_bound=tag, regime="band")
    y_flow = ode_exact(path.params, OdeState(p.t, p.sqrt_v_bar), t)
    dw = path.r * q.xi if q.xi is not None else 0.0
    value = y_flow + 0.5 * path.params.sigma * dw * frac
    q_has_extra = q is pts[-1] and path.ledger.final_step_extra > 0.0
    tag = q.cum_bound + (0.0 if q_has_extra else path.params.sigma * path.r)
    return DenseValue(value=float(value), error_bound=tag, regime="regular")


def error_bound(path: PathSkeleton) -> float:
    """Certified almost-sure uniform bound of the skeleton trajectory."""
    return path.ledger.cumulative_bound


def bound_report(path: PathSkeleton) -> BoundReport:
    """Regime split of the certified bound."""
    inside = (
        path.band_amplitude * path.r**path.band_exponent
        if path.ledger.n_band_excursions > 0
        else 0.0
    )
    return BoundReport(
        cumulative_bound=path.ledger.cumulative_bound,
        skeleton_terms_bound=path.ledger.terms_bound,
        final_step_extra=path.ledger.final_step_extra,
        band_inside_bound=inside,
        n_band_excursions=path.ledger.n_band_excursions,
    )


def verify_skeleton(path: PathSkeleton) -> None:
    """Re-check the structural invariants of a finished trajectory.

    Raises AssertionError on the first violation; used by tests and by the
    command-line tool after writing a run to disk.
    """
    pts = path.points
    assert pts, "empty skeleton"
    assert pts[0].t == path.t0 and pts[-1].t == path.t_end
    assert pts[-1].regime is Regime.FINAL
    times = path.times
    assert all(a <= b for a, b in zip(times, times[1:])), "times must be non-decreasing"
    assert all(p.sqrt_v_bar >= 0.0 for p in pts)
    for i, p in enumerate(pts[:-1]):
        if p.regime is Regime.BAND_ENTRY:
            nxt = pts[i + 1]
            assert nxt.regime in (Regime.BAND_EXIT, Regime.FINAL), (
                "band entry must be resolved before regular stepping resumes"
            )
    for i, p in enumerate(pts):
        if p.regime is Regime.BAND_EXIT:
            assert i > 0 and pts[i - 1].regime is Regime.BAND_ENTRY
    # ledger recomputation, summed in append order
    total = 0.0
    for coeff, dt in path.ledger.terms:
        total += coeff * dt
    recomputed = path.r * total + path.ledger.final_step_extra
    assert math.isclose(
        recomputed, path.ledger.cumulative_bound, rel_tol=1e-12, abs_tol=1e-300
    ), "ledger sum mismatch"
    assert len(path.excursions) == path.ledger.n_band_excursions

"""Command-line harness.

Subcommands
-----------
simulate
    Run sequential trajectories, write one skeleton CSV per path (plus an
    optional dense-output CSV), a per-path summary and a metadata record,
    then re-read and lint every skeleton against its ledger.
validate-fpt
    Draw exit times by inverse transform and test them against the
    analytic law (Kolmogorov-Smirnov plus a mean check).
validate-bessel
    Self-checks of the Bessel layer: half-integer closed forms, zero
    locations, orthogonality and the closed-form expansion equivalence.
validate-marginal
    Compare the terminal empirical law of a batch run against the exact
    transition law.
export-u-grid
    Write the exit-probability expansion on a level slice (with the lower
    comparison law and their gap) and on a normalised grid.

Exit codes: 0 success/pass, 1 validation failure or runtime error,
2 configuration error.  All emitted files are byte-deterministic for a
fixed configuration: floats are written with shortest round-trip
formatting and no timestamps are recorded.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .errors import (
    CirbandError,
    ConfigError,
    DomainError,
    NegativeAlphaError,
    NonPositiveParameterError,
)
from .fpt import fpt_cdf, fpt_inverse
from .model import CirParams, validate_params
from .nearzero import (
    DEFAULT_TRUNCATION,
    _u_tilde,
    band_level,
    bessel_j,
    bessel_zero,
    build_minus_table_at_level,
    build_table,
    build_table_at_level,
    u_value,
)
from .rng import GENERATOR_ID, RngStream
from .batch import simulate_batch
from .stepper import PathSkeleton, Regime, dense_eval, simulate_path, verify_skeleton
from .transition import transition_cdf

SKELETON_COLUMNS = ["t", "sqrt_v_bar", "v_bar", "regime", "xi", "theta", "cum_error_bound"]
DENSE_COLUMNS = ["t", "value", "error_bound", "regime"]
FPT_KS_THRESHOLD = 0.01
MARGINAL_KS_THRESHOLD = 0.02
MARGINAL_MIN_PATHS = 10_000


@dataclass
class RunConfig:
    """Flat configuration shared by all subcommands."""

    mode: str
    k: float = 2.0
    lam: float = 1.0
    sigma: float = 1.0
    horizon_t: float = 1.0
    v0: float = 1.0
    r: float = 0.02
    band_amplitude: float = 1.0
    band_exponent: float = 1.0 / 3.0
    t0: float = 0.0
    seed: int = 0
    n_paths: int = 1
    truncation_m: int = DEFAULT_TRUNCATION
    output: Optional[Path] = None
    dense_points: int = 0
    workers: int = 1
    n_samples: int = 100_000
    slice_t: float = 0.1
    grid_points: int = 200
    level_override: Optional[float] = None


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _write_metadata(path: Path, config: RunConfig) -> None:
    record = {
        "mode": config.mode,
        "k": _fmt(config.k),
        "lam": _fmt(config.lam),
        "sigma": _fmt(config.sigma),
        "horizon_t": _fmt(config.horizon_t),
        "v0": _fmt(config.v0),
        "r": _fmt(config.r),
        "band_amplitude": _fmt(config.band_amplitude),
        "band_exponent": _fmt(config.band_exponent),
        "t0": _fmt(config.t0),
        "seed": str(config.seed),
        "n_paths": str(config.n_paths),
        "truncation_m": str(config.truncation_m),
        "dense_points": str(config.dense_points),
        "n_samples": str(config.n_samples),
        "slice_t": _fmt(config.slice_t),
        "grid_points": str(config.grid_points),
        "level_override": _fmt(config.level_override),
        "generator": GENERATOR_ID,
        "library_version": __version__,
    }
    lines = [f"{key}={record[key]}\n" for key in sorted(record)]
    path.write_text("".join(lines), encoding="ascii")


def _write_skeleton_csv(path: Path, skeleton: PathSkeleton) -> None:
    with path.open("w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(SKELETON_COLUMNS)
        for p in skeleton.points:
            writer.writerow(
                [
                    _fmt(p.t),
                    _fmt(p.sqrt_v_bar),
                    _fmt(p.sqrt_v_bar * p.sqrt_v_bar),
                    p.regime.value,
                    "" if p.xi is None else str(p.xi),
                    _fmt(p.theta),
                    _fmt(p.cum_bound),
                ]
            )


def _write_dense_csv(path: Path, skeleton: PathSkeleton, n_points: int) -> None:
    grid = np.linspace(skeleton.t0, skeleton.t_end, n_points)
    with path.open("w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(DENSE_COLUMNS)
        for t in grid:
            d = dense_eval(skeleton, float(t))
            writer.writerow([_fmt(t), _fmt(d.value), _fmt(d.error_bound), d.regime])


def lint_skeleton_csv(path: Path, params: CirParams, r: float) -> None:
    """Re-read an emitted skeleton CSV and re-check its invariants.

    Recomputes the ledger sum from the stored rows (one term per regular
    step, none across excursions, the sigma*r surcharge when a regular
    step was horizon-truncated) and compares it against the final row's
    cumulative bound.  Raises AssertionError on any violation.
    """
    with path.open(newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        assert header == SKELETON_COLUMNS, f"unexpected columns {header!r}"
        rows = [row for row in reader]
    assert rows, "empty skeleton file"
    valid_regimes = {reg.value for reg in Regime}
    prev_t = -math.inf
    total = 0.0
    for row in rows:
        t, sqrt_v, v_bar = float(row[0]), float(row[1]), float(row[2])
        regime = row[3]
        assert regime in valid_regimes, f"unknown regime {regime!r}"
        assert row[4] in ("", "-1", "1"), f"bad xi {row[4]!r}"
        assert t >= prev_t, "times must be non-decreasing"
        assert sqrt_v >= 0.0
        assert v_bar == sqrt_v * sqrt_v, "v_bar must equal sqrt_v_bar squared"
        prev_t = t
    assert rows[-1][3] == Regime.FINAL.value, "last row must be final"
    truncated_step = False
    for prev, cur in zip(rows, rows[1:]):
        if prev[3] == Regime.BAND_ENTRY.value:
            continue  # excursion: no ledger term
        y_prev = float(prev[1])
        dt = float(cur[0]) - float(prev[0])
        total += (params.d1 + params.d2 / (y_prev * y_prev)) * dt
        if cur[3] == Regime.FINAL.value:
            truncated_step = True
    bound = r * total + (params.sigma * r if truncated_step else 0.0)
    reported = float(rows[-1][6])
    assert math.isclose(bound, reported, rel_tol=1e-9, abs_tol=1e-15), (
        f"ledger recomputation {bound!r} != reported {reported!r}"
    )


def _simulate_one(args: tuple) -> PathSkeleton:
    params, v0, r, amplitude, exponent, seed, stream_id, t0, truncation_m = args
    return simulate_path(
        params, v0, r, amplitude, exponent,
        RngStream(seed, stream_id), t0=t0, truncation_m=truncation_m,
    )


def _run_simulate(config: RunConfig, params: CirParams) -> int:
    if config.output is None:
        raise ConfigError("simulate requires --output")
    out = Path(config.output)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [
        (
            params, config.v0, config.r, config.band_amplitude,
            config.band_exponent, config.seed, i, config.t0, config.truncation_m,
        )
        for i in range(config.n_paths)
    ]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            skeletons = list(pool.map(_simulate_one, jobs))
    else:
        skeletons = [_simulate_one(job) for job in jobs]

    summary_rows = []
    for i, skeleton in enumerate(skeletons):
        verify_skeleton(skeleton)
        _write_skeleton_csv(out / f"path_{i:04d}.csv", skeleton)
        if config.dense_points > 0:
            _write_dense_csv(out / f"dense_{i:04d}.csv", skeleton, config.dense_points)
        summary_rows.append(
            [
                str(i),
                str(len(skeleton.points)),
                str(skeleton.ledger.n_band_excursions),
                _fmt(skeleton.terminal_sqrt),
                _fmt(skeleton.ledger.cumulative_bound),
            ]
        )
    with (out / "summary.csv").open("w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["path_id", "n_points", "n_band_excursions", "terminal_sqrt_v_bar",
             "cumulative_error_bound"]
        )
        writer.writerows(summary_rows)
    _write_metadata(out / "run_metadata.txt", config)

    for i in range(config.n_paths):
        lint_skeleton_csv(out / f"path_{i:04d}.csv", params, config.r)
    print(f"simulate: wrote {config.n_paths} path(s) to {out}")
    return 0


def _run_validate_fpt(config: RunConfig) -> int:
    from scipy.stats import kstest

    rng = RngStream(config.seed, 0)
    u = np.maximum(rng.uniforms(config.n_samples), 2.0**-53)
    taus = fpt_inverse(u)
    stat = kstest(taus, fpt_cdf).statistic
    mean = float(np.mean(taus))
    se = math.sqrt(2.0 / 3.0) / math.sqrt(config.n_samples)
    ks_ok = stat < FPT_KS_THRESHOLD
    mean_ok = abs(mean - 1.0) < 3.0 * se
    print(f"exit-time KS distance: {stat:.6f} (threshold {FPT_KS_THRESHOLD}) "
          f"{'ok' if ks_ok else 'FAIL'}")
    print(f"exit-time sample mean: {mean:.6f} (expected 1 within {3 * se:.6f}) "
          f"{'ok' if mean_ok else 'FAIL'}")
    return 0 if ks_ok and mean_ok else 1


def _sine_series_u(x_tilde: float, t_tilde: float, m_terms: int) -> float:
    """Closed-form expansion at gamma = -1/4 (order 1/2 reduces to sines)."""
    if x_tilde == 1.0:
        return 1.0
    acc = 1.0
    root = math.sqrt(x_tilde)
    for m in range(1, m_terms + 1):
        acc += (2.0 / math.pi) * ((-1) ** m / (m * root)) * math.sin(
            math.pi * m * root
        ) * math.exp(-math.pi**2 * m**2 * t_tilde)
    return min(1.0, max(0.0, acc))


def _run_validate_bessel(config: RunConfig) -> int:
    from scipy.integrate import quad

    ok = True

    xs = np.linspace(0.05, 30.0, 400)
    closed = np.sqrt(2.0 / (math.pi * xs)) * np.sin(xs)
    err_half = float(np.max(np.abs(bessel_j(0.5, xs) - closed)))
    good = err_half < 1e-12
    ok &= good
    print(f"half-order closed form max error: {err_half:.2e} {'ok' if good else 'FAIL'}")

    err_zero = max(abs(bessel_zero(0.5, m) - m * math.pi) for m in range(1, 11))
    good = err_zero < 1e-10
    ok &= good
    print(f"half-order zeros vs m*pi max error: {err_zero:.2e} {'ok' if good else 'FAIL'}")

    worst = 0.0
    for nu in (0.5, 1.3):
        zeros = [bessel_zero(nu, m) for m in (1, 2, 3)]
        for a_idx, za in enumerate(zeros):
            for b_idx, zb in enumerate(zeros):
                integral, _ = quad(
                    lambda z: z * bessel_j(nu, za * z) * bessel_j(nu, zb * z),
                    0.0, 1.0, limit=200,
                )
                expected = 0.5 * bessel_j(nu + 1.0, za) ** 2 if a_idx == b_idx else 0.0
                worst = max(worst, abs(integral - expected))
    good = worst < 1e-8
    ok &= good
    print(f"orthogonality max deviation: {worst:.2e} {'ok' if good else 'FAIL'}")

    params = validate_params(k=0.75, lam=1.0, sigma=1.0, horizon_t=1.0)
    table = build_table(params, r=0.1**1.5, band_amplitude=1.0, band_exponent=1.0 / 3.0,
                        truncation_m=10)
    worst = 0.0
    for x_tilde in np.linspace(0.05, 1.0, 20):
        for t_tilde in np.linspace(0.02, 0.5, 20):
            a = _u_tilde(table, float(t_tilde), float(x_tilde))
            b = _sine_series_u(float(x_tilde), float(t_tilde), table.truncation_m)
            worst = max(worst, abs(a - b))
    good = worst < 1e-10
    ok &= good
    print(f"sine-form expansion max deviation: {worst:.2e} {'ok' if good else 'FAIL'}")

    return 0 if ok else 1


def _run_validate_marginal(config: RunConfig, params: CirParams) -> int:
    from scipy.stats import kstest

    if config.n_paths < MARGINAL_MIN_PATHS:
        raise ConfigError(
            f"validate-marginal requires --n-paths >= {MARGINAL_MIN_PATHS}"
        )
    result = simulate_batch(
        params, config.v0, config.r, config.band_amplitude, config.band_exponent,
        seed=config.seed, n_paths=config.n_paths, t0=config.t0,
        truncation_m=config.truncation_m,
    )
    stat = kstest(
        result.terminal_value,
        lambda v: transition_cdf(params, config.v0, params.horizon_t, v),
    ).statistic
    good = stat < MARGINAL_KS_THRESHOLD
    print(
        f"terminal-law KS distance over {config.n_paths} paths: {stat:.6f} "
        f"(threshold {MARGINAL_KS_THRESHOLD}) {'ok' if good else 'FAIL'}"
    )
    return 0 if good else 1


def _run_export_u_grid(config: RunConfig, params: CirParams) -> int:
    if config.output is None:
        raise ConfigError("export-u-grid requires --output")
    out = Path(config.output)
    out.mkdir(parents=True, exist_ok=True)
    if not params.near_zero_capable:
        raise ConfigError("export-u-grid needs (4*k*lam - sigma**2)/8 > 0")
    if config.level_override is not None:
        level = float(config.level_override)
        if level <= 0.0:
            raise ConfigError("--level-override must be > 0")
    else:
        level = band_level(config.band_amplitude, config.band_exponent, config.r)
    table = build_table_at_level(params, level, config.truncation_m)
    has_minus = level < params.lam
    minus_table = (
        build_minus_table_at_level(params, level, config.truncation_m)
        if has_minus
        else None
    )

    with (out / "u_level_slice.csv").open("w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "u_plus", "u_minus", "gap"])
        for i in range(1, config.grid_points + 1):
            # hit the level exactly at the last point
            x = level if i == config.grid_points else level * i / config.grid_points
            plus = u_value(table, config.slice_t, x)
            if minus_table is not None:
                minus = u_value(minus_table, config.slice_t, x)
                gap = plus - minus
            else:
                minus = math.nan
                gap = math.nan
            writer.writerow([_fmt(x), _fmt(plus), _fmt(minus), _fmt(gap)])

    t_grid = np.geomspace(0.005, 2.0, 60)
    x_grid = np.linspace(0.0, 1.0, 51)
    with (out / "u_normalized_grid.csv").open("w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_tilde", "x_tilde", "u_tilde"])
        for t_tilde in t_grid:
            for x_tilde in x_grid:
                writer.writerow(
                    [
                        _fmt(t_tilde),
                        _fmt(x_tilde),
                        _fmt(_u_tilde(table, float(t_tilde), float(x_tilde))),
                    ]
                )
    _write_metadata(out / "run_metadata.txt", config)
    print(f"export-u-grid: wrote level slice and normalised grid to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cirband",
        description="Square-root diffusion trajectories with certified uniform error bands.",
    )
    sub = parser.add_subparsers(dest="mode", required=True)

    def add_model_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--k", type=float, default=2.0, help="reversion speed")
        p.add_argument("--lambda", dest="lam", type=float, default=1.0,
                       help="long-run mean")
        p.add_argument("--sigma", type=float, default=1.0, help="volatility")
        p.add_argument("--horizon-t", type=float, default=1.0, help="window length")
        p.add_argument("--v0", type=float, default=1.0, help="initial value")
        p.add_argument("--r", type=float, default=0.02, help="increment radius")
        p.add_argument("--band-amplitude", type=float, default=1.0,
                       help="hand-off level amplitude A (level = A**2 * r**(2a))")
        p.add_argument("--band-exponent", type=float, default=1.0 / 3.0,
                       help="hand-off level exponent a in (0, 1/2)")
        p.add_argument("--t0", type=float, default=0.0, help="window start")
        p.add_argument("--seed", type=int, default=0, help="root seed")
        p.add_argument("--truncation-m", type=int, default=DEFAULT_TRUNCATION,
                       help="expansion length of the near-zero table")

    sim = sub.add_parser("simulate", help="simulate trajectories and write CSV output")
    add_model_flags(sim)
    sim.add_argument("--n-paths", type=int, default=1)
    sim.add_argument("--output", type=Path, required=True)
    sim.add_argument("--dense-points", type=int, default=0,
                     help="points of the dense-output grid (0 disables)")
    sim.add_argument("--workers", type=int, default=1)

    fpt = sub.add_parser("validate-fpt", help="test the exit-time sampler")
    fpt.add_argument("--seed", type=int, default=0)
    fpt.add_argument("--n-samples", type=int, default=100_000)

    sub.add_parser("validate-bessel", help="self-check the Bessel layer")

    marg = sub.add_parser("validate-marginal",
                          help="test the terminal law of the batch engine")
    add_model_flags(marg)
    marg.add_argument("--n-paths", type=int, default=MARGINAL_MIN_PATHS)

    grid = sub.add_parser("export-u-grid",
                          help="export the exit-probability expansion as CSV")
    add_model_flags(grid)
    grid.add_argument("--output", type=Path, required=True)
    grid.add_argument("--slice-t", type=float, default=0.1,
                      help="physical time of the level slice")
    grid.add_argument("--grid-points", type=int, default=200)
    grid.add_argument("--level-override", type=float, default=None,
                      help="use this hand-off level instead of A**2 * r**(2a)")

    return parser


def _config_from_namespace(ns: argparse.Namespace) -> RunConfig:
    config = RunConfig(mode=ns.mode)
    for name in vars(config):
        if hasattr(ns, name) and getattr(ns, name) is not None:
            setattr(config, name, getattr(ns, name))
    config.level_override = getattr(ns, "level_override", None)
    return config


def run(config: RunConfig) -> int:
    """Execute one configured run; returns the process exit code."""
    if config.mode == "validate-fpt":
        return _run_validate_fpt(config)
    if config.mode == "validate-bessel":
        return _run_validate_bessel(config)
    params = validate_params(config.k, config.lam, config.sigma, config.horizon_t)
    if config.mode == "simulate":
        return _run_simulate(config, params)
    if config.mode == "validate-marginal":
        return _run_validate_marginal(config, params)
    if config.mode == "export-u-grid":
        return _run_export_u_grid(config, params)
    raise ConfigError(f"unknown mode {config.mode!r}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    config = _config_from_namespace(ns)
    try:
        return run(config)
    except (ConfigError, DomainError, NonPositiveParameterError, NegativeAlphaError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except CirbandError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    except AssertionError as exc:
        print(f"output lint failed: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:  # pragma: no cover - thin wrapper
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

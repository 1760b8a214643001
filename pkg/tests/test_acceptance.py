"""End-to-end acceptance checks.

One test per shipped guarantee, each pinned to its stated tolerance and
printing a single summary line; run with -v (or -rA) to see them listed.
"""

import csv
import math
import subprocess
import sys
import time

import numpy as np
from scipy.integrate import quad
from scipy.stats import ks_2samp, kstest

from cirband import (
    OdeState,
    RngStream,
    bessel_j,
    bessel_zero,
    build_table_at_level,
    fpt_cdf,
    fpt_density,
    fpt_inverse,
    ode_exact,
    r0_for_floor,
    sample_exit_time,
    simulate_batch,
    simulate_path,
    transition_cdf,
    u_normalized,
    validate_params,
)
from cirband.cli import main as cli_main

from oracles import (
    PiecewiseLinearDriver,
    cdf_by_quadrature,
    em_exit_times,
    rk4_driven,
    rk4_flow,
    sine_series_exit_probability,
)


def report(num: int, name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {num:02d} {name}: {detail}")
    assert ok, f"criterion {num:02d} {name}: {detail}"


def test_01_exit_time_law_fidelity():
    started = time.perf_counter()
    worst_quad = 0.0
    for t in (0.2, 2.0 / math.pi, 1.0, 3.0):
        ref = cdf_by_quadrature(lambda s: fpt_density(float(s)), t)
        worst_quad = max(worst_quad, abs(fpt_cdf(t) - ref))
    n = 100_000
    u = np.maximum(RngStream(5, 0).uniforms(n), 2.0**-53)
    taus = fpt_inverse(u)
    ks = kstest(taus, fpt_cdf).statistic
    r = 0.05
    thetas = r * r * taus
    mean_gap = abs(thetas.mean() - r * r)
    se3 = 3.0 * r * r * math.sqrt(2.0 / 3.0 / n)
    elapsed = time.perf_counter() - started
    ok = worst_quad < 1e-10 and ks < 0.01 and mean_gap < se3 and elapsed < 10.0
    report(
        1, "exit-time law fidelity", ok,
        f"cdf-vs-quadrature {worst_quad:.2e} (<1e-10), KS {ks:.4f} (<0.01), "
        f"mean gap {mean_gap:.2e} (<{se3:.2e}), {elapsed:.1f} s (<10 s)",
    )


def test_02_averaged_flow_exactness():
    rng = np.random.default_rng(202)
    n = 100
    k = rng.uniform(0.2, 3.0, n)
    lam = rng.uniform(0.3, 2.0, n)
    sigma = np.sqrt(rng.uniform(0.1, 0.95, n) * 4.0 * k * lam)
    y0 = rng.uniform(0.3, 2.5, n)
    t = rng.uniform(0.01, 3.0, n)
    alpha = (4.0 * k * lam - sigma**2) / 8.0
    ref = rk4_flow(k, alpha, y0, t, n_steps=20_000)
    got = np.array(
        [
            ode_exact(validate_params(k[i], lam[i], sigma[i], 3.0), OdeState(0.0, y0[i]), t[i])
            for i in range(n)
        ]
    )
    worst = float(np.max(np.abs(got - ref)))
    worst_fp = 0.0
    for i in range(0, n, 10):
        p = validate_params(k[i], lam[i], sigma[i], 3.0)
        for tt in (0.05, 0.7, 2.9):
            worst_fp = max(worst_fp, abs(ode_exact(p, OdeState(0.0, p.fixed_point), tt) - p.fixed_point))
    ok = worst < 1e-10 and worst_fp < 5e-15
    report(
        2, "averaged flow exactness", ok,
        f"max |flow - RK4| {worst:.2e} over {n} cases (<1e-10), "
        f"fixed-point drift {worst_fp:.1e} (<5e-15)",
    )


def test_03_same_driver_contraction():
    rng = np.random.default_rng(303)
    n_cases, n_pieces = 50, 32
    k = rng.uniform(0.3, 2.0, n_cases)
    lam = rng.uniform(0.4, 1.6, n_cases)
    sigma = np.sqrt(rng.uniform(0.2, 0.7, n_cases) * 4.0 * k * lam)
    alpha = (4.0 * k * lam - sigma**2) / 8.0
    values = 0.18 * rng.uniform(-1.0, 1.0, (n_cases, n_pieces + 1))
    shift = PiecewiseLinearDriver(values, 1.0)
    y_a = rng.uniform(0.8, 1.5, n_cases)
    y_b = y_a + rng.uniform(0.05, 0.5, n_cases)
    grid, traj_a = rk4_driven(k, alpha, y_a, shift, 1.0, n_pieces * 128)
    _, traj_b = rk4_driven(k, alpha, y_b, shift, 1.0, n_pieces * 128)
    # contraction needs the shifted state positive; confirm the design kept it so
    shift_grid = np.array([shift(t) for t in grid])
    assert float(np.min(traj_a + shift_grid)) > 0.05
    gap = np.abs(traj_b - traj_a)
    worst_rise = float(np.max(np.diff(gap, axis=0)))
    worst_over = float(np.max(gap - gap[0][None, :]))
    ok = worst_rise <= 1e-8 and worst_over <= 1e-8
    report(
        3, "same-driver contraction", ok,
        f"max gap increase {worst_rise:.2e}, max over initial gap {worst_over:.2e} "
        f"(both <=1e-8) over {n_cases} driver/start pairs",
    )


def test_04_perturbation_envelope_bound():
    rng = np.random.default_rng(404)
    n_cases, n_pieces = 50, 64
    k = rng.uniform(0.3, 2.5, n_cases)
    lam = rng.uniform(0.4, 1.6, n_cases)
    sigma = np.sqrt(rng.uniform(0.5, 0.9, n_cases) * 4.0 * k * lam)
    alpha = (4.0 * k * lam - sigma**2) / 8.0
    r = np.minimum(0.15, 0.5 / sigma) * rng.uniform(0.2, 1.0, n_cases)
    y0 = rng.uniform(0.8, 1.8, n_cases)
    assert np.all(y0 >= sigma * r)
    phi = rng.uniform(-1.0, 1.0, (n_cases, n_pieces + 1)) * r[:, None]
    shift = PiecewiseLinearDriver(0.5 * sigma[:, None] * phi, 1.0)
    grid, traj = rk4_driven(k, alpha, y0, shift, 1.0, n_pieces * 128)
    worst = -np.inf
    for i in range(n_cases):
        p = validate_params(k[i], lam[i], sigma[i], 1.0)
        flow = ode_exact(p, OdeState(0.0, y0[i]), grid)
        coeff = p.d1 + p.d2 / y0[i] ** 2  # exact step-error constants
        margin = np.abs(traj[:, i] - flow) - coeff * r[i] * grid
        worst = max(worst, float(np.max(margin)))
    ok = worst < 1e-10
    report(
        4, "perturbation envelope bound", ok,
        f"max excess over (D1 + D2/y0^2) r (t - t0): {worst:.2e} (<1e-10) "
        f"across {n_cases} bounded-driver runs",
    )


def test_05_step_count_scaling():
    p = validate_params(k=2.0, lam=1.0, sigma=1.0, horizon_t=1.0)
    details = []
    ok = True
    for r in (0.1, 0.05):
        batch = simulate_batch(p, 1.0, r, 1.0, 1.0 / 3.0, seed=55, n_paths=200)
        mean_steps = float(batch.n_steps.mean())
        target = p.horizon_t / r**2
        ok &= abs(mean_steps - target) < 0.1 * target
        details.append(f"r={r}: mean {mean_steps:.1f} vs {target:.0f}")
    report(5, "step-count scaling", ok, "; ".join(details) + " (within 10%)")


def test_06_floor_regime_keeps_paths_and_bounds():
    p = validate_params(k=2.0, lam=1.0, sigma=0.5, horizon_t=1.0)
    eta = 0.25
    r = 0.008
    assert r < r0_for_floor(p, eta)
    cap = r * (p.d1 + p.d2 / eta**2) * p.horizon_t
    batch = simulate_batch(p, 1.0, r, 1.0, 1.0 / 3.0, seed=66, n_paths=30)
    min_level = float(batch.min_sqrt.min())
    # the skeleton bound excludes the final-step surcharge, which every
    # horizon-truncated path books on top
    terms = batch.error_bound - p.sigma * r
    worst_bound = float(terms.max())
    node_floor_ok = True
    for stream in (0, 1):
        path = simulate_path(p, 1.0, r, 1.0, 1.0 / 3.0, RngStream(66, stream))
        node_floor_ok &= all(q.sqrt_v_bar >= eta for q in path.points)
        node_floor_ok &= path.ledger.terms_bound <= cap + 1e-12
    ok = min_level >= eta and worst_bound <= cap + 1e-12 and node_floor_ok
    report(
        6, "level floor regime", ok,
        f"min level {min_level:.4f} >= eta {eta}, worst skeleton bound "
        f"{worst_bound:.4f} <= r (D1 + D2/eta^2) T = {cap:.4f} over 30 paths",
    )


def test_07_eigen_expansion_correctness(tmp_path):
    # closed-form reduction at order 1/2
    params = validate_params(k=0.75, lam=1.0, sigma=1.0, horizon_t=1.0)
    table10 = build_table_at_level(params, 0.1, truncation_m=10)
    worst_sine = 0.0
    for x_tilde in np.linspace(0.05, 1.0, 20):
        for t_tilde in np.linspace(0.02, 0.5, 20):
            got = u_normalized(table10, float(t_tilde), float(x_tilde))
            ref = sine_series_exit_probability(float(x_tilde), float(t_tilde), 10)
            worst_sine = max(worst_sine, abs(got - ref))

    worst_orth = 0.0
    for nu in (0.5, 1.3):
        zeros = [bessel_zero(nu, m) for m in (1, 2, 3)]
        for i, za in enumerate(zeros):
            for j, zb in enumerate(zeros):
                integral, _ = quad(
                    lambda z: z * bessel_j(nu, za * z) * bessel_j(nu, zb * z),
                    0.0, 1.0, limit=200,
                )
                expected = 0.5 * bessel_j(nu + 1.0, za) ** 2 if i == j else 0.0
                worst_orth = max(worst_orth, abs(integral - expected))

    out = tmp_path / "grid"
    code = cli_main(
        [
            "export-u-grid", "--k", "0.75", "--lambda", "1", "--sigma", "1",
            "--level-override", "0.1", "--slice-t", "0.1",
            "--grid-points", "100", "--output", str(out),
        ]
    )
    with (out / "u_level_slice.csv").open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    gaps = [float(row["gap"]) for row in rows]
    min_gap = min(gaps)

    table5 = build_table_at_level(params, 0.1, truncation_m=5)
    t_slice = 0.1
    t_tilde = params.sigma**2 * t_slice / (8.0 * 0.1)
    worst_trunc = max(
        abs(u_normalized(table5, t_tilde, float(x)) - u_normalized(table10, t_tilde, float(x)))
        for x in np.linspace(0.0, 1.0, 41)
    )
    ok = (
        worst_sine < 1e-10
        and worst_orth < 1e-8
        and code == 0
        and len(rows) == 100
        and min_gap >= 0.0
        and worst_trunc < 1e-8
    )
    report(
        7, "eigen-expansion correctness", ok,
        f"sine-form gap {worst_sine:.1e} (<1e-10), orthogonality {worst_orth:.1e} "
        f"(<1e-8), exported slice min gap {min_gap:.1e} (>=0), "
        f"5-vs-10-term {worst_trunc:.1e} (<1e-8)",
    )


def test_08_exit_sampler_matches_brute_force():
    started = time.perf_counter()
    params = validate_params(k=0.75, lam=1.0, sigma=0.5, horizon_t=1.0)
    level = 0.01
    table = build_table_at_level(params, level, truncation_m=16)
    x0 = level / 2.0
    u = np.maximum(RngStream(81, 0).uniforms(10_000), 2.0**-53)
    draws = np.array([sample_exit_time(table, x0, float(ui)) for ui in u])
    em = em_exit_times(
        drift_const=params.k * params.lam, sigma=params.sigma, level=level,
        x0=x0, dt=1e-5, n_paths=100_000, seed=999, t_max=1.5,
    )
    stat = ks_2samp(draws, em).statistic
    elapsed = time.perf_counter() - started
    ok = stat < 0.02 and elapsed < 300.0
    report(
        8, "near-zero exit sampler vs brute force", ok,
        f"two-sample KS {stat:.4f} (<0.02) against step-1e-5 reference, "
        f"{elapsed:.0f} s (<300 s)",
    )


def test_09_terminal_marginal_law():
    p = validate_params(k=2.0, lam=1.0, sigma=1.0, horizon_t=1.0)
    batch = simulate_batch(p, 1.0, 0.02, 1.0, 1.0 / 3.0, seed=11, n_paths=10_000)
    stat = kstest(
        batch.terminal_value, lambda v: transition_cdf(p, 1.0, p.horizon_t, v)
    ).statistic
    ok = stat < 0.02
    report(
        9, "terminal marginal law", ok,
        f"KS {stat:.4f} (<0.02) over 10000 paths at radius 0.02",
    )


def test_10_byte_identical_reruns(tmp_path):
    args = [
        sys.executable, "-m", "cirband.cli", "simulate",
        "--r", "0.05", "--n-paths", "2", "--seed", "123", "--dense-points", "32",
    ]
    trees = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        proc = subprocess.run(
            args + ["--output", str(out)], capture_output=True, text=True
        )
        assert proc.returncode == 0, proc.stderr
        trees.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    same = trees[0] == trees[1]
    ok = same and len(trees[0]) == 6
    report(
        10, "byte-identical reruns", ok,
        f"two process-level runs produced {len(trees[0])} files, "
        f"{'identical' if same else 'DIFFERENT'} bytes",
    )

"""Vectorised many-path engine.

Runs the same scheme as :func:`cirband.stepper.simulate_path` across many
trajectories in lockstep, keeping only terminal state, step counts, node
minima and certified bounds (no skeletons).  Each path consumes its own
substream (seed, stream_id = path index) with the exact draw order of the
sequential engine - sign uniform then exit-time uniform per regular step,
one uniform per excursion - so path i of a batch reproduces
``simulate_path(..., rng=RngStream(seed, i))`` up to elementwise-libm
rounding.  Uniform blocks are pre-drawn per path; PCG64 block draws equal
repeated scalar draws, which is what makes the lockstep layout possible.

Excursions are rare under typical parameters and are resolved one path at
a time through the same exit-time sampler as the sequential engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DomainError, NearZeroUnavailableError
from .fpt import fpt_inverse
from .model import CirParams
from .nearzero import DEFAULT_TRUNCATION, _cached_table, band_level, sample_exit_time
from .stepper import BandDecision, check_band_entry

__all__ = ["BatchResult", "simulate_batch"]

_MAX_ITERS_HARD_CAP = 20_000_000


@dataclass
class BatchResult:
    """Terminal summary of a batch run (arrays indexed by path)."""

    params: CirParams
    r: float
    band_amplitude: float
    band_exponent: float
    t0: float
    t_end: float
    seed: int
    truncation_m: int
    terminal_sqrt: np.ndarray
    terminal_value: np.ndarray
    n_steps: np.ndarray
    n_band: np.ndarray
    error_bound: np.ndarray
    min_sqrt: np.ndarray


def simulate_batch(
    params: CirParams,
    v0: float,
    r: float,
    band_amplitude: float,
    band_exponent: float,
    seed: int,
    n_paths: int,
    t0: float = 0.0,
    truncation_m: int = DEFAULT_TRUNCATION,
    chunk_size: int = 1024,
) -> BatchResult:
    """Simulate ``n_paths`` independent trajectories, path i on substream i.

    Paths are processed in chunks of ``chunk_size`` to bound the memory of
    the pre-drawn uniform blocks.  Raises the same configuration and
    domain errors as the sequential engine.
    """
    if n_paths < 1:
        raise DomainError(f"n_paths must be >= 1, got {n_paths!r}")
    if v0 <= 0.0:
        raise DomainError(f"v0 must be > 0, got {v0!r}")
    sqrt_v0 = math.sqrt(v0)
    if sqrt_v0 < params.sigma * r:
        raise DomainError(
            f"sqrt(v0) = {sqrt_v0!r} below sigma*r = {params.sigma * r!r}"
        )
    check_band_entry(params, r, band_amplitude, band_exponent, sqrt_v0)

    t_end = t0 + params.horizon_t
    terminal_sqrt = np.empty(n_paths)
    n_steps = np.zeros(n_paths, dtype=np.int64)
    n_band = np.zeros(n_paths, dtype=np.int64)
    bound = np.empty(n_paths)
    min_sqrt = np.empty(n_paths)

    for lo in range(0, n_paths, chunk_size):
        hi = min(lo + chunk_size, n_paths)
        _run_chunk(
            params, sqrt_v0, r, band_amplitude, band_exponent, seed, lo, hi, t0,
            t_end, truncation_m,
            terminal_sqrt, n_steps, n_band, bound, min_sqrt,
        )

    return BatchResult(
        params=params,
        r=r,
        band_amplitude=band_amplitude,
        band_exponent=band_exponent,
        t0=t0,
        t_end=t_end,
        seed=seed,
        truncation_m=truncation_m,
        terminal_sqrt=terminal_sqrt,
        terminal_value=terminal_sqrt**2,
        n_steps=n_steps,
        n_band=n_band,
        error_bound=bound,
        min_sqrt=min_sqrt,
    )


def _run_chunk(
    params: CirParams,
    sqrt_v0: float,
    r: float,
    band_amplitude: float,
    band_exponent: float,
    seed: int,
    lo: int,
    hi: int,
    t0: float,
    t_end: float,
    truncation_m: int,
    out_sqrt: np.ndarray,
    out_steps: np.ndarray,
    out_band: np.ndarray,
    out_bound: np.ndarray,
    out_min: np.ndarray,
) -> None:
    n = hi - lo
    gens = [
        np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(i,))))
        for i in range(lo, hi)
    ]
    steps_est = params.horizon_t / (r * r)
    block_len = 2 * (int(steps_est * 1.15) + 64)
    blocks = np.empty((n, block_len))
    for j, g in enumerate(gens):
        blocks[j] = g.random(block_len)
    ptr = np.zeros(n, dtype=np.int64)

    t = np.full(n, float(t0))
    y = np.full(n, sqrt_v0)
    alive = np.ones(n, dtype=bool)
    cum = np.zeros(n)
    extra = np.zeros(n)
    steps = np.zeros(n, dtype=np.int64)
    bandc = np.zeros(n, dtype=np.int64)
    miny = np.full(n, sqrt_v0)

    threshold = 0.5 * band_amplitude * r**band_exponent
    sqrt_handoff = math.sqrt(band_level(band_amplitude, band_exponent, r))
    q_level = 2.0 * params.alpha / params.k
    ar_ok = params.alpha > 0.0 and r < (2.0 / 3.0) * math.sqrt(
        2.0 * params.alpha / (params.k * params.sigma**2)
    )
    floor = params.sigma * r * (1.0 - 1e-12)
    table = None

    def grow_blocks() -> None:
        nonlocal blocks, block_len
        add = max(block_len // 2, 128)
        extension = np.empty((n, add))
        live = np.flatnonzero(alive)
        for j in live:
            extension[j] = gens[j].random(add)
        blocks = np.concatenate([blocks, extension], axis=1)
        block_len += add

    def resolve_band(i: int) -> None:
        nonlocal table
        if not params.near_zero_capable:
            raise NearZeroUnavailableError(
                "trajectory entered the near-zero band but the transformed "
                "drift coefficient is zero"
            )
        if table is None:
            table = _cached_table(params, r, band_amplitude, band_exponent, truncation_m)
        if ptr[i] + 1 > block_len:
            grow_blocks()
        u = blocks[i, ptr[i]]
        ptr[i] += 1
        if u <= 0.0:
            u = 2.0**-53
        duration = sample_exit_time(table, float(y[i]) ** 2, float(u))
        bandc[i] += 1
        t_exit = t[i] + duration
        if t_exit >= t_end:
            frac = (t_end - t[i]) / duration
            y[i] = y[i] + (sqrt_handoff - y[i]) * frac
            t[i] = t_end
            alive[i] = False
        else:
            t[i] = t_exit
            y[i] = sqrt_handoff
        miny[i] = min(miny[i], y[i])

    iters = 0
    while True:
        iters += 1
        if iters > _MAX_ITERS_HARD_CAP:
            raise ConvergenceError("batch engine exceeded its iteration cap")
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        below = idx[y[idx] < threshold]
        for i in below:
            resolve_band(int(i))
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        if np.any(ptr[idx] + 2 > block_len):
            grow_blocks()
        u_sign = blocks[idx, ptr[idx]]
        u_theta = blocks[idx, ptr[idx] + 1]
        ptr[idx] += 2
        xi = np.where(u_sign < 0.5, 1.0, -1.0)
        theta = r * r * fpt_inverse(np.maximum(u_theta, 2.0**-53))
        t_prop = t[idx] + theta
        final = t_prop >= t_end
        t_new = np.where(final, t_end, t_prop)
        dt = t_new - t[idx]
        y_old = y[idx]
        decay = np.exp(-params.k * dt)
        y_flow = np.sqrt(y_old * y_old * decay + q_level * (1.0 - decay))
        y_new = y_flow + np.where(final, 0.0, 0.5 * params.sigma * r * xi)
        if ar_ok:
            assert np.all(y_new >= floor)
        cum[idx] += (params.d1 + params.d2 / (y_old * y_old)) * dt
        steps[idx] += 1
        t[idx] = t_new
        y[idx] = y_new
        miny[idx] = np.minimum(miny[idx], y_new)
        died = idx[final]
        extra[died] = params.sigma * r
        alive[died] = False

    out_sqrt[lo:hi] = y
    out_steps[lo:hi] = steps
    out_band[lo:hi] = bandc
    out_bound[lo:hi] = r * cum + extra
    out_min[lo:hi] = miny

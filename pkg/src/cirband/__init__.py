"""Pathwise simulation of the mean-reverting square-root diffusion with a
certified almost-sure uniform error band.

The public surface re-exports the parameter/model layer, the driver
exit-time law, the path stepper with its dense evaluator and error ledger,
the near-zero eigen-expansion with its excursion sampler, the vectorised
batch engine and the exact transition law used for validation.
"""

from __future__ import annotations

from . import errors
from .batch import BatchResult, simulate_batch
from .fpt import (
    BRANCH_SPLIT_T,
    CDF_SUP_ERROR,
    DENSITY_SUP_ERROR,
    FptLaw,
    fpt_cdf,
    fpt_density,
    fpt_inverse,
    sample_sign,
    sample_theta,
)
from .model import (
    CirParams,
    OdeState,
    ds_reconstruct,
    envelopes,
    ode_exact,
    r0_for_floor,
    step_error_coeff,
    validate_params,
)
from .nearzero import (
    FourierBesselTable,
    band_excursion,
    bessel_j,
    bessel_zero,
    build_minus_table_at_level,
    build_table,
    build_table_at_level,
    sample_exit_time,
    u_minus,
    u_normalized,
    u_value,
)
from .rng import GENERATOR_ID, RngStream
from .stepper import (
    BandDecision,
    BoundReport,
    ErrorLedger,
    PathSkeleton,
    Regime,
    SkeletonPoint,
    bound_report,
    check_band_entry,
    dense_eval,
    error_bound,
    simulate_path,
    step_regular,
    verify_skeleton,
)
from .transition import transition_cdf, transition_mean, transition_variance

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "errors",
    # model
    "CirParams",
    "OdeState",
    "validate_params",
    "ode_exact",
    "ds_reconstruct",
    "envelopes",
    "step_error_coeff",
    "r0_for_floor",
    # driver exit-time law
    "BRANCH_SPLIT_T",
    "DENSITY_SUP_ERROR",
    "CDF_SUP_ERROR",
    "FptLaw",
    "fpt_density",
    "fpt_cdf",
    "fpt_inverse",
    "sample_theta",
    "sample_sign",
    "RngStream",
    "GENERATOR_ID",
    # stepper
    "Regime",
    "SkeletonPoint",
    "ErrorLedger",
    "PathSkeleton",
    "BandDecision",
    "BoundReport",
    "step_regular",
    "check_band_entry",
    "simulate_path",
    "dense_eval",
    "error_bound",
    "bound_report",
    "verify_skeleton",
    # batch engine
    "BatchResult",
    "simulate_batch",
    # near-zero band
    "FourierBesselTable",
    "bessel_j",
    "bessel_zero",
    "build_table",
    "build_table_at_level",
    "build_minus_table_at_level",
    "u_value",
    "u_normalized",
    "u_minus",
    "sample_exit_time",
    "band_excursion",
    # exact transition law
    "transition_cdf",
    "transition_mean",
    "transition_variance",
]

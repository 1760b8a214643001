"""Exception hierarchy shared across the package.

Every error raised deliberately by this library derives from
:class:`CirbandError`, so callers can catch one type at an API boundary.
The subclasses mirror the distinct failure modes of the numerical layers:
bad model parameters, arguments outside a function's domain, root finders
running out of budget, and the square-root scheme being asked to operate
where its preconditions do not hold.
"""

from __future__ import annotations


class CirbandError(Exception):
    """Base class for all library errors."""


class NonPositiveParameterError(CirbandError, ValueError):
    """A model parameter that must be strictly positive is not."""


class NegativeAlphaError(CirbandError, ValueError):
    """The transformed drift coefficient (4*k*lam - sigma**2)/8 is negative.

    The square-root scheme requires this coefficient to be >= 0; the
    near-zero machinery additionally requires it to be > 0.
    """


class DomainError(CirbandError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConvergenceError(CirbandError, RuntimeError):
    """An iterative solver exhausted its budget before reaching tolerance."""


class BandRequiredError(CirbandError, RuntimeError):
    """A regular step was attempted below the near-zero hand-off level."""


class ConfigError(CirbandError, ValueError):
    """A run configuration violates a structural constraint."""


class NearZeroUnavailableError(CirbandError, RuntimeError):
    """A trajectory entered the near-zero band but the transformed drift
    coefficient is zero, so no exit-time law is available."""

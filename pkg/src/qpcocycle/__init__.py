"""Lyapunov spectra of random products of quasi-periodic cocycles.

The package estimates exponents by Monte Carlo along random orbits, extracts
projective contraction constants, and evaluates the holomorphic extension of
the top exponent in the transition weights through a weighted transfer
operator.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    CapExceeded,
    CocycleError,
    ConfigError,
    DomainError,
    InvarianceError,
    NoContractionFound,
    RankCollapseError,
    SingularFiberError,
)

"""Exact simulation of one-dimensional diffusions by retrospective rejection sampling."""

from .errors import DomainError, NumericError, ResourceCapExceeded
from .exact_engine import (
    BESSEL_EA1,
    EA1,
    EA2,
    EA3,
    PathStats,
    Skeleton,
    fill_in,
    run,
    run_bessel_ea1,
    run_ea1,
    run_ea2,
    run_ea3_two_boundary,
)
from .rng import CountingRNG, make_stream

__version__ = "0.1.0"

"""Brownian bridge points, extrema, time of the extremum and the bridge given its minimum."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate

from .bessel_numerics import BesselOrder, bessel_bridge_point
from .errors import DomainError
from .rng import CountingRNG

BES3 = BesselOrder(3.0)


@dataclass(frozen=True)
class BridgeSpec:
    y: float
    z: float
    T: float

    def __post_init__(self):
        if not self.T > 0:
            raise DomainError("bridge duration must be positive")

    def reflected(self) -> "BridgeSpec":
        return BridgeSpec(-self.y, -self.z, self.T)

    @property
    def low(self) -> float:
        return min(self.y, self.z)

    @property
    def high(self) -> float:
        return max(self.y, self.z)


@dataclass(frozen=True)
class MinRecord:
    m: float
    tau: float


@dataclass(frozen=True)
class MaxRecord:
    M: float
    tau: float


def _check_inside(spec: BridgeSpec, t: float):
    if not (0.0 < t < spec.T):
        raise DomainError(f"t={t} must lie strictly inside (0, {spec.T})")


def bridge_point(spec: BridgeSpec, t: float, rng: CountingRNG, size=None):
    """Time-``t`` value of a Brownian bridge from ``y`` to ``z``."""
    _check_inside(spec, t)
    mean = spec.y + (t / spec.T) * (spec.z - spec.y)
    sd = math.sqrt(t * (spec.T - t) / spec.T)
    return mean + sd * rng.normal(size)


# -- minimum ------------------------------------------------------------------------
def bridge_min_cdf(spec: BridgeSpec, a):
    """P(min <= a) for ``a <= min(y, z)``."""
    a = np.asarray(a, dtype=float)
    if np.any(a > spec.low):
        raise DomainError("bridge_min_cdf needs a <= min(y, z)")
    out = np.exp(-2.0 * (a - spec.y) * (a - spec.z) / spec.T)
    return out if out.ndim else float(out)


def bridge_max_cdf(spec: BridgeSpec, b):
    """P(max < b) for ``b >= max(y, z)``."""
    b = np.asarray(b, dtype=float)
    if np.any(b < spec.high):
        raise DomainError("bridge_max_cdf needs b >= max(y, z)")
    out = -np.expm1(-2.0 * (b - spec.y) * (b - spec.z) / spec.T)
    return out if out.ndim else float(out)


def _log_min_tail(spec: BridgeSpec, a: float) -> float:
    # log P(min <= a)
    return -2.0 * (a - spec.y) * (a - spec.z) / spec.T


def _min_from_log_prob(spec: BridgeSpec, log_p: float) -> float:
    # solve (a - y)(a - z) = -T log_p / 2 on the branch a <= min(y, z)
    d = spec.y - spec.z
    return 0.5 * ((spec.y + spec.z) - math.sqrt(d * d - 2.0 * spec.T * log_p))


def sample_min_value(spec: BridgeSpec, rng: CountingRNG, lower: Optional[float] = None,
                     upper: Optional[float] = None) -> float:
    """Minimum of the bridge, optionally restricted to ``(lower, upper]``.

    Restrictions are imposed by inverting the renormalised CDF, so no draws
    are wasted however small the target band is.
    """
    if lower is None and upper is None:
        return _min_from_log_prob(spec, -rng.exponential())
    top = spec.low if upper is None else min(upper, spec.low)
    log_hi = _log_min_tail(spec, top)  # log P(min <= top)
    if lower is None:
        # log P(min <= a) = log_hi + log U
        return _min_from_log_prob(spec, log_hi - rng.exponential())
    if lower >= top:
        raise DomainError("the band for the minimum has zero probability")
    log_lo = _log_min_tail(spec, lower)
    # P(min <= a) = F(lower) + U (F(top) - F(lower)), done in log space
    u = rng.uniform()
    gap = -math.expm1(log_lo - log_hi)  # 1 - F(lower)/F(top)
    if gap <= 0.0:
        raise DomainError("the band for the minimum has zero probability")
    log_p = log_hi + math.log1p(-(1.0 - u) * gap)
    m = _min_from_log_prob(spec, log_p)
    return min(max(m, math.nextafter(lower, math.inf)), top)


# -- time of the minimum --------------------------------------------------------------
def time_of_min_density(theta1: float, theta2: float, T: float, t):
    """Density of the time of the minimum given its depth below each endpoint."""
    t = np.asarray(t, dtype=float)
    s = T - t
    th = theta1 + theta2
    log_f = (math.log(theta1) + math.log(theta2) - 1.5 * np.log(t) - 1.5 * np.log(s)
             - theta1 ** 2 / (2 * t) - theta2 ** 2 / (2 * s))
    # normaliser: first-passage density of level theta1 + theta2 at time T
    log_norm = math.log(th) - 1.5 * math.log(T) - th * th / (2 * T) - 0.5 * math.log(2 * math.pi)
    return np.exp(log_f - log_norm - math.log(2 * math.pi))


def time_of_min_cdf(theta1: float, theta2: float, T: float, t: float) -> float:
    """CDF of the time of the minimum by adaptive quadrature (test oracle)."""
    val, _ = integrate.quad(lambda s: time_of_min_density(theta1, theta2, T, s), 0.0, t,
                            epsabs=1e-13, epsrel=1e-11, limit=400)
    return val


def sample_time_of_min(theta1: float, theta2: float, T: float, rng: CountingRNG) -> float:
    """Exact draw of the time of the minimum.

    With ``V = (T - tau)/tau`` the density of ``V`` is a two-component mixture:
    an inverse Gaussian with mean ``theta2/theta1`` and shape ``theta2^2/T``,
    weight ``theta1/(theta1 + theta2)``, and the reciprocal of an inverse
    Gaussian with the roles of ``theta1`` and ``theta2`` swapped.
    """
    if theta1 <= 0 or theta2 <= 0:
        raise DomainError("the minimum must lie strictly below both endpoints")
    if rng.uniform() * (theta1 + theta2) < theta1:
        v = rng.wald(theta2 / theta1, theta2 * theta2 / T)
    else:
        v = 1.0 / rng.wald(theta1 / theta2, theta1 * theta1 / T)
    tau = T / (1.0 + v)
    return min(max(tau, math.ulp(0.0)), math.nextafter(T, 0.0))


def sample_min(spec: BridgeSpec, rng: CountingRNG, lower: Optional[float] = None,
               upper: Optional[float] = None) -> MinRecord:
    """Minimum and its time, with the minimum optionally restricted to ``(lower, upper]``."""
    m = sample_min_value(spec, rng, lower, upper)
    theta1, theta2 = spec.y - m, spec.z - m
    if theta1 <= 0 or theta2 <= 0:
        # m rounded onto an endpoint; nudge it strictly below
        m = math.nextafter(spec.low, -math.inf)
        theta1, theta2 = spec.y - m, spec.z - m
    tau = sample_time_of_min(theta1, theta2, spec.T, rng)
    return MinRecord(m, tau)


def sample_max(spec: BridgeSpec, rng: CountingRNG, lower: Optional[float] = None,
               upper: Optional[float] = None) -> MaxRecord:
    """Maximum and its time, with the maximum optionally restricted to ``[lower, upper)``."""
    rec = sample_min(spec.reflected(), rng,
                     None if upper is None else -upper,
                     None if lower is None else -lower)
    return MaxRecord(-rec.m, rec.tau)


# -- path given the minimum -------------------------------------------------------------
def bridge_given_min(spec: BridgeSpec, rec: MinRecord, t: float, rng: CountingRNG, size=None):
    """Value at ``t`` of a Brownian bridge conditioned on its minimum ``rec``.

    Either side of ``tau`` the excess over the minimum is a three-dimensional
    Bessel bridge ending (or starting) at zero.
    """
    if not (0.0 <= t <= spec.T):
        raise DomainError(f"t={t} outside [0, {spec.T}]")
    if t == rec.tau:
        return rec.m if size is None else np.full(size, rec.m)
    if t == 0.0 or t == spec.T:
        v = spec.y if t == 0.0 else spec.z
        return v if size is None else np.full(size, v)
    if t < rec.tau:
        r = bessel_bridge_point(BES3, spec.y - rec.m, 0.0, rec.tau, t, rng, size)
    else:
        r = bessel_bridge_point(BES3, 0.0, spec.z - rec.m, spec.T - rec.tau, t - rec.tau, rng, size)
    return rec.m + r


def bridge_given_max(spec: BridgeSpec, rec: MaxRecord, t: float, rng: CountingRNG, size=None):
    return -bridge_given_min(spec.reflected(), MinRecord(-rec.M, rec.tau), t, rng, size)

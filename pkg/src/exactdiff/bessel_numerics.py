"""Bessel special functions, the Bessel(nu, x) law and Bessel bridge samplers."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError
from .rng import CountingRNG

log = logging.getLogger(__name__)

SERIES_MAX_X = 50.0
_CDF_CAP = 1.0 - 1e-15


@dataclass(frozen=True)
class BesselOrder:
    delta: float

    def __post_init__(self):
        if self.delta < 0:
            raise DomainError("Bessel dimension must be >= 0")

    @property
    def nu(self) -> float:
        return (self.delta - 2.0) / 2.0

    @classmethod
    def from_nu(cls, nu: float) -> "BesselOrder":
        return cls(2.0 * nu + 2.0)


@dataclass(frozen=True)
class BesselDiscrete:
    """Law on {0, 1, ...} with weights proportional to the series terms of I_nu(x)."""

    nu: float
    x: float

    def __post_init__(self):
        if self.nu < -1:
            raise DomainError("Bessel(nu, x) needs nu >= -1")
        if self.x < 0:
            raise DomainError("Bessel(nu, x) needs x >= 0")

    @property
    def mean(self) -> float:
        if self.x == 0:
            return 0.0
        return 0.5 * self.x * float(special.ive(self.nu + 1, self.x) / special.ive(self.nu, self.x))


def _log_series_terms(nu, x, n):
    # log of (x/2)^(2n+nu) / (n! Gamma(nu+n+1)); -inf where 1/Gamma vanishes
    with np.errstate(divide="ignore"):
        lx = np.log(0.5 * x)
    # 1/Gamma vanishes at nu + n + 1 = 0, which only happens for nu = -1, n = 0
    g = np.where(nu + n + 1 <= 0, np.inf, special.gammaln(np.maximum(nu + n + 1, 1e-300)))
    return (2 * n + nu) * lx - special.gammaln(n + 1) - g


def modified_bessel_I_scaled(nu, x):
    """``exp(-x) I_nu(x)`` for ``nu >= -1``, ``x >= 0``.

    A positive-term power series (no cancellation) up to ``x = 50``; beyond
    that scipy's ``ive``.
    """
    nu_a = np.asarray(nu, dtype=float)
    x_a = np.asarray(x, dtype=float)
    if np.any(nu_a < -1):
        raise DomainError("modified Bessel I needs nu >= -1")
    if np.any(x_a < 0):
        raise DomainError("modified Bessel I needs x >= 0")
    nu_b, x_b = np.broadcast_arrays(nu_a, x_a)
    out = np.empty(nu_b.shape, dtype=float)
    big = x_b > SERIES_MAX_X
    if np.any(big):
        out[big] = special.ive(nu_b[big], x_b[big])
    small = ~big & (x_b > 0)
    if np.any(small):
        xs, ns = x_b[small], nu_b[small]
        nterms = int(xs.max() / 2 + 12 * math.sqrt(xs.max() + 1) + 40)
        n = np.arange(nterms, dtype=float)[:, None]
        logs = _log_series_terms(ns[None, :], xs[None, :], n) - xs[None, :]
        out[small] = np.exp(special.logsumexp(logs, axis=0))
    zero = x_b == 0
    if np.any(zero):
        nz = nu_b[zero]
        out[zero] = np.where(nz == 0, 1.0, np.where((nz > 0) | (nz == -1), 0.0, np.inf))
    return out if out.ndim else float(out)


def _ive_scalar(nu: float, x: float) -> float:
    return float(modified_bessel_I_scaled(nu, x))


def log_bessel_I(nu: float, x: float) -> float:
    return math.log(_ive_scalar(nu, x)) + x


def bessel_pmf(dist: BesselDiscrete, n):
    """P(W = n) for W ~ Bessel(nu, x)."""
    n = np.asarray(n)
    if dist.x == 0:
        out = np.where(n == 0, 1.0, 0.0)
    else:
        out = np.exp(_log_series_terms(dist.nu, dist.x, n.astype(float)) - log_bessel_I(dist.nu, dist.x))
        out = np.where(n < 0, 0.0, out)
    return out if out.ndim else float(out)


def bessel_pmf_recurrence(dist: BesselDiscrete, nmax: int) -> np.ndarray:
    """pmf(0..nmax) built from pmf(0) with the ratio recurrence."""
    p = np.empty(nmax + 1)
    p[0] = bessel_pmf(dist, 0)
    q = (0.5 * dist.x) ** 2
    for k in range(nmax):
        p[k + 1] = p[k] * q / ((k + 1) * (dist.nu + k + 1))
    return p


def _bessel_window(nu: float, x: float, mu: float):
    spread = 12.0 * math.sqrt(mu + 1.0) + 8.0
    lo = max(0, int(mu - spread))
    hi = int(mu + spread) + 1
    lI = log_bessel_I(nu, x)
    while True:
        n = np.arange(lo, hi + 1, dtype=float)
        p = np.exp(_log_series_terms(nu, x, n) - lI)
        # log-concave weights: the window edges bound the mass outside
        if p[-1] < 1e-30 and (lo == 0 or p[0] < 1e-30):
            return lo, p
        lo = max(0, lo - int(spread))
        hi += int(spread)


def bessel_discrete_sample(dist: BesselDiscrete, rng: CountingRNG) -> int:
    """Inverse-CDF draw from Bessel(nu, x); one uniform."""
    u = rng.uniform()
    nu, x = dist.nu, dist.x
    if x == 0.0:
        return 0
    mu = dist.mean
    if mu < 50.0:
        p = float(bessel_pmf(dist, 0))
        c = p
        n = 0
        q = 0.25 * x * x
        while u > c:
            if c > _CDF_CAP:
                log.warning("Bessel(%g, %g) inversion hit the CDF cap at n=%d", nu, x, n)
                break
            n += 1
            p *= q / (n * (nu + n))
            c += p
        return n
    lo, p = _bessel_window(nu, x, mu)
    k = int(np.searchsorted(np.cumsum(p), u, side="left"))
    return lo + min(k, p.size - 1)


def bessel_discrete_sample_array(dist: BesselDiscrete, rng: CountingRNG, size: int) -> np.ndarray:
    """Vectorised inverse-CDF draws (one uniform each)."""
    u = rng.uniform(size)
    if dist.x == 0.0:
        return np.zeros(size, dtype=np.int64)
    lo, p = _bessel_window(dist.nu, dist.x, dist.mean) if dist.mean >= 50 else (0, None)
    if p is None:
        nmax = int(dist.mean + 40 * math.sqrt(dist.mean + 1) + 60)
        p = bessel_pmf_recurrence(dist, nmax)
    k = np.searchsorted(np.cumsum(p), u, side="left")
    return lo + np.minimum(k, p.size - 1)


# -- transition densities -----------------------------------------------------------
def bessel_log_transition_density(order: BesselOrder, t: float, y, z):
    if t <= 0:
        raise DomainError("transition time must be positive")
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise DomainError("transition density needs z > 0")
    nu = order.nu
    y_b, z_b = np.broadcast_arrays(y, z)
    out = np.empty(y_b.shape)
    pos = y_b > 0
    if np.any(pos):
        yy, zz = y_b[pos], z_b[pos]
        arg = yy * zz / t
        ive = np.asarray(modified_bessel_I_scaled(nu, arg), dtype=float)
        out[pos] = (-math.log(t) + (nu + 1) * np.log(zz) - nu * np.log(yy)
                    - (yy - zz) ** 2 / (2 * t) + np.log(ive))
    if np.any(~pos):
        if order.delta <= 0:
            raise DomainError("the y = 0 branch needs delta > 0")
        zz = z_b[~pos]
        out[~pos] = ((2 * nu + 1) * np.log(zz) - zz * zz / (2 * t)
                     - nu * math.log(2.0) - (nu + 1) * math.log(t) - special.gammaln(nu + 1))
    return out if out.ndim else float(out)


def bessel_transition_density(order: BesselOrder, t: float, y, z):
    """Density of a Bessel(delta) process at ``z`` after time ``t`` from ``y``."""
    out = np.exp(bessel_log_transition_density(order, t, y, z))
    return out if np.ndim(out) else float(out)


def bessel_bridge_density(order: BesselOrder, y: float, z: float, T: float, t: float, b):
    """Density at ``b`` of the time-``t`` marginal of a Bessel bridge y -> z on [0, T]."""
    b = np.asarray(b, dtype=float)
    return np.exp(bessel_log_transition_density(order, t, y, b)
                  + bessel_log_transition_density(order, T - t, b, z)
                  - bessel_log_transition_density(order, T, y, z))


# -- bridge samplers ----------------------------------------------------------------------
def _check_times(T: float, t: float):
    if not (0.0 < t < T):
        raise DomainError(f"bridge time t={t} must lie strictly inside (0, {T})")


def squared_bessel_bridge_point(order: BesselOrder, y: float, z: float, T: float, t: float,
                                rng: CountingRNG, size=None):
    """Time-``t`` value of a squared Bessel bridge from ``y`` to ``z`` over [0, T].

    Gamma mixture with a Bessel-discrete and a Poisson shape component; three
    logical variates per draw.
    """
    if order.delta <= 0:
        raise DomainError("squared Bessel bridge sampler needs delta > 0")
    _check_times(T, t)
    if y < 0 or z < 0:
        raise DomainError("squared bridge endpoints must be >= 0")
    nu = order.nu
    dist = BesselDiscrete(nu, math.sqrt(y * z) / T)
    lam = 0.5 * (y * (T - t) / (t * T) + z * t / (T * (T - t)))
    scale = 2.0 * t * (T - t) / T
    if size is None:
        w = bessel_discrete_sample(dist, rng)
        v = rng.poisson(lam)
        return float(rng.gamma(v + 2 * w + nu + 1.0, scale))
    w = bessel_discrete_sample_array(dist, rng, size)
    v = rng.poisson(lam, size)
    return rng.gamma(v + 2 * w + nu + 1.0, scale)


def bessel_bridge_point(order: BesselOrder, y: float, z: float, T: float, t: float,
                        rng: CountingRNG, size=None):
    """Time-``t`` value of a Bessel bridge from ``y`` to ``z`` (not squared)."""
    return np.sqrt(squared_bessel_bridge_point(order, y * y, z * z, T, t, rng, size))

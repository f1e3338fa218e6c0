"""Target diffusions with unit diffusion coefficient.

A target is described by its drift ``alpha`` on an open interval together with
the data the exact algorithms need: the antiderivative used to bias the
endpoint, a lower bound for the bracket functional and, when available, an
upper bound for ``phi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize, special

from .errors import DomainError, NumericError

BROWNIAN = "brownian"
BESSEL = "bessel"


def _fd_derivative(f: Callable[[float], float], u: float) -> float:
    h = max(1e-6, 1e-8 * abs(u))
    return (f(u + h) - f(u - h)) / (2.0 * h)


@dataclass(frozen=True)
class UnitDiffusionSpec:
    """Drift specification for ``dY = alpha(Y) dt + dB``.

    ``phi_lower_bound`` bounds the *halved* bracket from below, so that
    ``phi = bracket - phi_lower_bound >= 0``.  ``phi_upper_bound`` is the
    supremum of ``phi`` (``None`` when unbounded); ``band_sup(lo, hi)`` returns
    an upper bound for ``phi`` on ``[lo, hi]``, which EA2/EA3 need.
    """

    drift: Callable
    antiderivative: Optional[Callable] = None
    drift_derivative: Optional[Callable] = None
    lower_boundary: float = -math.inf
    upper_boundary: float = math.inf
    candidate: str = BROWNIAN
    delta: Optional[float] = None
    phi_lower_bound: float = 0.0
    phi_upper_bound: Optional[float] = None
    band_sup: Optional[Callable[[float, float], float]] = None
    bracket_fn: Optional[Callable] = None
    name: str = "custom"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.candidate not in (BROWNIAN, BESSEL):
            raise DomainError(f"unknown candidate kind {self.candidate!r}")
        if self.candidate == BESSEL:
            if self.delta is None or self.delta < 2:
                raise DomainError("Bessel candidates need delta >= 2")
            if self.lower_boundary != 0.0:
                raise DomainError("Bessel candidates need the entrance boundary at 0")
        if self.lower_boundary >= self.upper_boundary:
            raise DomainError("empty state space")

    # -- pointwise quantities -------------------------------------------------
    def interior(self, u: float) -> bool:
        return self.lower_boundary < u < self.upper_boundary

    def alpha_prime(self, u):
        if self.drift_derivative is not None:
            return self.drift_derivative(u)
        return _fd_derivative(self.drift, u)

    def beta(self, u):
        return (self.delta - 1.0) / (2.0 * u)

    def bracket(self, u):
        """Half of ``alpha^2 + alpha'`` (Brownian) or of
        ``alpha^2 - beta^2 + alpha' - beta'`` (Bessel)."""
        if self.bracket_fn is not None:
            return self.bracket_fn(u)
        a = self.drift(u)
        val = a * a + self.alpha_prime(u)
        if self.candidate == BESSEL:
            c = (self.delta - 1.0) / 2.0
            # beta^2 + beta' = c(c - 1)/u^2
            val = val - c * (c - 1.0) / (u * u)
        return 0.5 * val

    def phi(self, u):
        return self.bracket(u) - self.phi_lower_bound

    def log_bias(self, u):
        """Exponent of the endpoint tilt: ``A(u)`` or ``A(u) - (delta-1)/2 log u``."""
        if self.antiderivative is None:
            raise DomainError(f"{self.name}: no antiderivative supplied")
        val = self.antiderivative(u)
        if self.candidate == BESSEL:
            val = val - 0.5 * (self.delta - 1.0) * np.log(u)
        return val

    def sup_phi(self, lo: float = -math.inf, hi: float = math.inf) -> float:
        """Upper bound for ``phi`` on ``[lo, hi]``."""
        if self.band_sup is not None:
            return float(self.band_sup(lo, hi))
        if self.phi_upper_bound is None:
            raise NumericError(f"{self.name}: phi has no finite bound on [{lo}, {hi}]")
        return float(self.phi_upper_bound)


def phi(spec: UnitDiffusionSpec, u: float) -> float:
    if not spec.interior(u):
        raise DomainError(f"u={u} is not in the open state space of {spec.name}")
    return float(spec.phi(u))


def check_lower_bound(spec: UnitDiffusionSpec, grid) -> float:
    """Smallest value of ``phi`` over ``grid``; negative means the bound is wrong."""
    grid = np.asarray(grid, dtype=float)
    vals = np.array([spec.phi(float(u)) for u in grid])
    return float(vals.min())


def grid_extrema(fn: Callable, lo: float, hi: float, n: int = 4000, log: bool = False):
    """Infimum and supremum of ``fn`` on ``[lo, hi]`` by dense grid plus local polish."""
    xs = np.geomspace(lo, hi, n) if log else np.linspace(lo, hi, n)
    vals = np.asarray(fn(xs), dtype=float)
    out = []
    for sign in (1.0, -1.0):
        k = int(np.argmin(sign * vals))
        a, b = xs[max(k - 1, 0)], xs[min(k + 1, n - 1)]
        best = sign * vals[k]
        if b > a:
            res = optimize.minimize_scalar(lambda x: sign * float(fn(np.array([x]))[0]),
                                           bounds=(a, b), method="bounded",
                                           options={"xatol": 1e-12 * max(1.0, abs(b))})
            best = min(best, res.fun)
        out.append(sign * best)
    return out[0], out[1]


# -- Lamperti transform ---------------------------------------------------------
def lamperti_transform(sigma: Callable[[float], float], xi: float, x: float,
                       closed_form: Optional[Callable[[float, float], float]] = None) -> float:
    """``eta(x) = int_xi^x du / sigma(u)``."""
    if closed_form is not None:
        return float(closed_form(xi, x))
    if x == xi:
        return 0.0
    lo, hi = min(xi, x), max(xi, x)
    probe = np.linspace(lo, hi, 65)
    if np.any(np.array([sigma(float(u)) for u in probe]) <= 0):
        raise DomainError("sigma must be strictly positive on the integration range")
    val, err = integrate.quad(lambda u: 1.0 / sigma(u), xi, x, epsabs=0.0, epsrel=1e-10, limit=200)
    if not np.isfinite(val) or err > 1e-8 * max(1.0, abs(val)):
        raise NumericError(f"Lamperti quadrature did not converge (err={err:g})")
    return float(val)


# -- conditioning on {T_b < T_0} ---------------------------------------------------
def _scale_increment(base: UnitDiffusionSpec, u: float) -> float:
    if base.antiderivative is None:
        raise DomainError("conditioning needs the antiderivative of the base drift")
    a0 = base.antiderivative(0.0)
    with np.errstate(over="raise"):
        try:
            val, err = integrate.quad(lambda z: math.exp(-2.0 * (base.antiderivative(z) - a0)),
                                      0.0, u, epsabs=0.0, epsrel=1e-12, limit=200)
        except (FloatingPointError, OverflowError) as exc:
            raise DomainError("scale function diverges at 0; conditioning is degenerate") from exc
    if not np.isfinite(val) or val <= 0:
        raise DomainError("scale function diverges at 0; conditioning is degenerate")
    return val, a0


def conditioned_drift(base: UnitDiffusionSpec, u: float) -> float:
    """Drift of ``base`` conditioned to reach high levels before 0."""
    if u <= 0:
        raise DomainError("conditioned drift is defined for u > 0")
    ds, a0 = _scale_increment(base, u)
    sprime = math.exp(-2.0 * (base.antiderivative(u) - a0))
    return float(base.drift(u)) + sprime / ds


def conditioned_spec(base: UnitDiffusionSpec) -> UnitDiffusionSpec:
    """Bessel(3)-candidate spec for the conditioned process.

    With delta = 3 the Bessel bracket of the conditioned drift equals the
    Brownian bracket of ``base``, so the bounds carry over unchanged.
    """
    def q(u):
        ds, a0 = _scale_increment(base, u)
        return math.exp(-2.0 * (base.antiderivative(u) - a0)) / ds

    def drift(u):
        return float(base.drift(u)) + q(u)

    def deriv(u):
        qq = q(u)
        a = float(base.drift(u))
        return float(base.alpha_prime(u)) - 2.0 * a * qq - qq * qq

    def anti(u):
        ds, a0 = _scale_increment(base, u)
        return float(base.antiderivative(u)) + math.log(ds)

    return UnitDiffusionSpec(
        drift=np.vectorize(drift, otypes=[float]),
        drift_derivative=np.vectorize(deriv, otypes=[float]),
        antiderivative=np.vectorize(anti, otypes=[float]),
        lower_boundary=0.0,
        candidate=BESSEL,
        delta=3.0,
        phi_lower_bound=base.phi_lower_bound,
        phi_upper_bound=base.phi_upper_bound,
        bracket_fn=base.bracket,
        name=f"conditioned({base.name})",
    )


# -- reference models -------------------------------------------------------------
def sine_spec() -> UnitDiffusionSpec:
    """``alpha(u) = sin u``; half bracket lies in [-1/2, 5/8]."""
    return UnitDiffusionSpec(
        drift=np.sin,
        drift_derivative=np.cos,
        antiderivative=lambda u: 1.0 - np.cos(u),
        phi_lower_bound=-0.5,
        phi_upper_bound=0.625 + 0.5,
        name="sine",
    )


def zero_drift_spec(lower: float = -math.inf, upper: float = math.inf) -> UnitDiffusionSpec:
    zero = lambda u: 0.0 * np.asarray(u, dtype=float)
    return UnitDiffusionSpec(drift=zero, drift_derivative=zero, antiderivative=zero,
                             lower_boundary=lower, upper_boundary=upper,
                             phi_lower_bound=0.0, phi_upper_bound=0.0,
                             band_sup=lambda lo, hi: 0.0, name="zero")


def wide_sense_bessel_drift(nu: float, rho: float, x):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("wide-sense Bessel drift needs x > 0")
    out = (2.0 * nu + 1.0) / (2.0 * x)
    if rho > 0:
        out = out + rho * special.ive(nu + 1.0, rho * x) / special.ive(nu, rho * x)
    return out if out.ndim else float(out)


def wide_sense_bessel_spec(nu: float, rho: float) -> UnitDiffusionSpec:
    """Wide-sense Bessel process with a Bessel(2 nu + 2) candidate.

    Its Bessel bracket is the constant ``rho^2 / 2``, so ``phi`` vanishes.
    """
    if nu < 0:
        raise DomainError("a Bessel candidate of dimension >= 2 needs nu >= 0")
    if rho < 0:
        raise DomainError("rho must be nonnegative")

    def deriv(x):
        x = np.asarray(x, dtype=float)
        out = -(2.0 * nu + 1.0) / (2.0 * x * x)
        if rho > 0:
            w = rho * x
            r = special.ive(nu + 1.0, w) / special.ive(nu, w)
            out = out + rho * rho * (1.0 - (2.0 * nu + 1.0) * r / w - r * r)
        return out

    def anti(x):
        # log_bias = log(x^-nu I_nu(rho x)) is the tilt; add back the candidate's (nu + 1/2) log x
        x = np.asarray(x, dtype=float)
        out = (nu + 0.5) * np.log(x)
        if rho > 0:
            out = out - nu * np.log(x) + np.log(special.ive(nu, rho * x)) + rho * x
        return out

    return UnitDiffusionSpec(
        drift=lambda x: wide_sense_bessel_drift(nu, rho, x),
        drift_derivative=deriv,
        antiderivative=anti,
        lower_boundary=0.0,
        candidate=BESSEL,
        delta=2.0 * nu + 2.0,
        phi_lower_bound=0.5 * rho * rho,
        phi_upper_bound=0.0,
        name=f"wide-sense-bessel(nu={nu:g}, rho={rho:g})",
    )


# -- population growth model --------------------------------------------------------
@dataclass(frozen=True)
class GrowthModelParams:
    """Generator ``kappa x d/dx + (tau x + omega x^2)/2 d^2/dx^2``."""

    kappa: float
    omega: float
    tau: float = 1.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise DomainError("growth model needs kappa > 0")
        if self.tau < 0 or self.omega < 0 or self.tau + self.omega <= 0:
            raise DomainError("need tau, omega >= 0 and tau + omega > 0")
        if not self.omega > 0:
            raise DomainError("the transformed growth model needs omega > 0")
        if self.tau == 0:
            raise DomainError("the transformed growth model needs tau > 0 (finite boundary)")
        if math.isclose(self.omega, 2.0 * self.kappa):
            raise DomainError("omega == 2 kappa is excluded")

    @property
    def shift(self) -> float:
        """Location of the entrance boundary in Lamperti coordinates."""
        return math.log(self.tau) / math.sqrt(self.omega)

    @property
    def power(self) -> float:
        return 4.0 * self.kappa / self.omega - 2.0


def _log_cosh(x):
    x = np.abs(x)
    small = x < 1.0
    return np.where(small, np.log1p(2.0 * np.sinh(0.5 * np.minimum(x, 1.0)) ** 2),
                    x + np.log1p(np.exp(-2.0 * np.maximum(x, 1.0))) - math.log(2.0))


def _check_positive(z):
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise DomainError("growth model is defined for z > 0 (shifted coordinate)")
    return z


def growth_drift(params: GrowthModelParams, z):
    """Drift of the conditioned, Lamperti-transformed growth model at ``z > 0``."""
    z = _check_positive(z)
    k, w = params.kappa, params.omega
    rw = math.sqrt(w)
    s = rw * z
    th = np.tanh(0.5 * s)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        one_minus = -np.expm1(params.power * _log_cosh(0.5 * s))
        third = np.where(np.isfinite(one_minus), th / one_minus, 0.0)
    out = (k / rw) * th - 0.5 * rw / np.tanh(s) + ((w - 2.0 * k) / rw) * third
    return out if out.ndim else float(out)


def growth_drift_derivative(params: GrowthModelParams, z):
    z = _check_positive(z)
    k, w = params.kappa, params.omega
    p = params.power
    rw = math.sqrt(w)
    s = rw * z
    th = np.tanh(0.5 * s)
    sech2 = 1.0 / np.cosh(0.5 * s) ** 2
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        cp = np.exp(p * _log_cosh(0.5 * s))
        q = -np.expm1(p * _log_cosh(0.5 * s))
        # d/ds [th / q]; the second piece is written as (c^p / q) (th^2 / q) to survive c^p -> inf
        ratio = np.where(np.isfinite(cp), cp / q, -1.0)
        dthird = 0.5 * sech2 / q + 0.5 * p * ratio * th * th / q
        dthird = np.where(np.isfinite(dthird), dthird, 0.0)
    out = 0.5 * k * sech2 + 0.5 * w / np.sinh(s) ** 2 + (w - 2.0 * k) * dthird
    return out if out.ndim else float(out)


def growth_log_bias(params: GrowthModelParams, z):
    """``A~(z)``: antiderivative of ``alpha - 3/(2z)``, up to a constant."""
    z = _check_positive(z)
    k, w = params.kappa, params.omega
    p = params.power
    s = math.sqrt(w) * z
    lc = _log_cosh(0.5 * s)
    log_sinh = np.where(s < 20.0, np.log(np.sinh(np.minimum(s, 20.0))),
                        s + np.log1p(-np.exp(-2.0 * np.maximum(s, 20.0))) - math.log(2.0))
    L = p * lc
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        if p > 0:
            log_abs = L + np.log(-np.expm1(-L))
        else:
            log_abs = np.log(-np.expm1(L))
    out = (2.0 - 2.0 * k / w) * lc - 0.5 * log_sinh + log_abs - 1.5 * np.log(z)
    return out if out.ndim else float(out)


def _inv_sinh2_minus_inv_x2(s):
    s = np.asarray(s, dtype=float)
    small = s < 1e-2
    ss = np.where(small, s, 1.0)
    s2 = np.where(small, s * s, 0.0)
    series = -1.0 / 3.0 + s2 / 15.0 - 2.0 * s2 * s2 / 189.0
    big = np.where(small, 1.0, s)
    with np.errstate(over="ignore"):
        direct = 1.0 / np.sinh(big) ** 2 - 1.0 / big ** 2
    del ss
    return np.where(small, series, direct)


def growth_bracket(params: GrowthModelParams, z):
    """Un-halved ``alpha^2 - beta^2 + alpha' - beta'`` for delta = 4, closed form.

    Uses ``(cosh s - 1) / sinh^2 s = sech^2(s/2) / 2`` and a series for the
    ``1/sinh^2 - 1/s^2`` cancellation near the boundary.
    """
    z = _check_positive(z)
    k, w = params.kappa, params.omega
    s = math.sqrt(w) * z
    c0 = (w - 2.0 * k) ** 2 / (4.0 * w)
    out = c0 + 0.75 * w * _inv_sinh2_minus_inv_x2(s) + k * (1.0 - k / w) / np.cosh(0.5 * s) ** 2
    return out if out.ndim else float(out)


def growth_bracket_printed(params: GrowthModelParams, z):
    """The bracket exactly as the four-term expression, for cross-checking."""
    z = _check_positive(z)
    k, w = params.kappa, params.omega
    s = math.sqrt(w) * z
    out = ((w - 2 * k) ** 2 / (4 * w)
           + (3 * w + 8 * k * (np.cosh(s) - 1)) / (4 * np.sinh(s) ** 2)
           - k ** 2 / (w * np.cosh(s / 2) ** 2)
           - 3.0 / (4 * z ** 2))
    return out if out.ndim else float(out)


def growth_phi_bounds(params: GrowthModelParams):
    """Analytic ``(lower, upper)`` bounds for the un-halved bracket on (0, inf)."""
    k, w = params.kappa, params.omega
    return -k, (w - 2.0 * k) ** 2 / (4.0 * w) + 2.0 * k


def growth_phi_bounds_tight(params: GrowthModelParams):
    """Infimum and supremum of the un-halved bracket.

    Limits are ``0`` at the boundary and ``(omega - 2 kappa)^2 / (4 omega)`` at
    infinity; interior extrema are located on a dense log grid.
    """
    k, w = params.kappa, params.omega
    c0 = (w - 2.0 * k) ** 2 / (4.0 * w)
    scale = 1.0 / math.sqrt(w)
    lo, hi = grid_extrema(lambda z: growth_bracket(params, z), 1e-4 * scale, 60.0 * scale, n=20000, log=True)
    return min(lo, 0.0, c0), max(hi, 0.0, c0)


GROWTH_BOUNDS = ("analytic", "tight", "mixed")


def growth_model_spec(params: GrowthModelParams, candidate: str = BESSEL,
                      bounds: Optional[str] = None) -> UnitDiffusionSpec:
    """Growth model in the shifted coordinate, boundary at 0.

    ``bounds`` selects the constants used for ``phi``: ``"analytic"`` uses the
    closed-form pair (-kappa, (omega-2kappa)^2/(4omega) + 2kappa); ``"tight"``
    uses numerically located extrema; ``"mixed"`` pairs the analytic upper
    bound with the located infimum.  The default is ``"mixed"`` for Bessel
    candidates and ``"tight"`` for Brownian ones.
    """
    if bounds is None:
        bounds = "mixed" if candidate == BESSEL else "tight"
    if bounds not in GROWTH_BOUNDS:
        raise DomainError(f"bounds must be one of {GROWTH_BOUNDS}")
    a_lo, a_hi = growth_phi_bounds(params)
    t_lo, t_hi = growth_phi_bounds_tight(params)
    g_lo = {"analytic": a_lo, "tight": t_lo, "mixed": t_lo}[bounds]
    g_hi = {"analytic": a_hi, "tight": t_hi, "mixed": a_hi}[bounds]
    # keep a hair of slack so rounding never pushes phi outside [0, r]
    g_lo -= 1e-9 * (1.0 + abs(g_lo))
    g_hi += 1e-9 * (1.0 + abs(g_hi))

    drift = lambda z: growth_drift(params, z)
    deriv = lambda z: growth_drift_derivative(params, z)
    name = f"growth(kappa={params.kappa:g}, omega={params.omega:g}, tau={params.tau:g})"
    meta = {"params": params, "bracket_bounds": (g_lo, g_hi), "bounds": bounds}

    if candidate == BESSEL:
        return UnitDiffusionSpec(
            drift=drift,
            drift_derivative=deriv,
            antiderivative=lambda z: growth_log_bias(params, z) + 1.5 * np.log(z),
            lower_boundary=0.0,
            candidate=BESSEL,
            delta=4.0,
            phi_lower_bound=0.5 * g_lo,
            phi_upper_bound=0.5 * (g_hi - g_lo),
            bracket_fn=lambda z: 0.5 * growth_bracket(params, z),
            name=name,
            meta=meta,
        )

    # Brownian candidate: alpha^2 + alpha' = bracket + 3/(4 z^2)
    def brown_bracket(z):
        z = np.asarray(z, dtype=float)
        return 0.5 * (growth_bracket(params, z) + 0.75 / (z * z))

    b_lo, _ = grid_extrema(brown_bracket, 1e-4, 60.0, n=20000, log=True)
    b_lo = min(b_lo, 0.5 * growth_bracket(params, 60.0)) - 1e-9 * (1.0 + abs(b_lo))
    b_lo = min(b_lo, 0.5 * g_lo)

    def band(lo, hi):
        if lo <= 0:
            raise NumericError("phi is unbounded near the boundary; condition the minimum to be positive")
        # bracket <= g_hi and 3/(4u^2) is decreasing
        return 0.5 * (g_hi + 0.75 / (lo * lo)) - b_lo

    return UnitDiffusionSpec(
        drift=drift,
        drift_derivative=deriv,
        antiderivative=lambda z: growth_log_bias(params, z) + 1.5 * np.log(z),
        lower_boundary=0.0,
        candidate=BROWNIAN,
        phi_lower_bound=b_lo,
        phi_upper_bound=None,
        band_sup=band,
        bracket_fn=brown_bracket,
        name=name,
        meta=meta,
    )


def jacobi_toy_spec(c: float = 2.0) -> UnitDiffusionSpec:
    """``alpha(u) = c (1/u - 1/(1-u))`` on (0, 1), both boundaries entrance.

    With ``v = u(1-u)`` the half bracket is ``((c^2-c)/v^2 - (4c^2-2c)/v) / 2``,
    decreasing in ``v`` once ``c >= 3/2``: its infimum ``-4c`` sits at ``u = 1/2``
    and its supremum over an interval sits at one of the interval's ends.
    """
    if c < 1.5:
        raise DomainError("the toy Jacobi drift needs c >= 3/2")

    def drift(u):
        u = np.asarray(u, dtype=float)
        return c * (1.0 / u - 1.0 / (1.0 - u))

    def deriv(u):
        u = np.asarray(u, dtype=float)
        return -c * (1.0 / u ** 2 + 1.0 / (1.0 - u) ** 2)

    def anti(u):
        u = np.asarray(u, dtype=float)
        return c * (np.log(u) + np.log1p(-u))

    def half_bracket(u):
        u = np.asarray(u, dtype=float)
        w = 1.0 / (u * (1.0 - u))
        return 0.5 * ((c * c - c) * w * w - (4.0 * c * c - 2.0 * c) * w)

    lo = -4.0 * c

    def band(a, b):
        if a <= 0.0 or b >= 1.0:
            raise NumericError("phi is unbounded at the boundaries")
        return float(max(half_bracket(a), half_bracket(b))) - lo

    return UnitDiffusionSpec(drift=drift, drift_derivative=deriv, antiderivative=anti,
                             lower_boundary=0.0, upper_boundary=1.0, phi_lower_bound=lo,
                             band_sup=band, bracket_fn=half_bracket, name=f"jacobi(c={c:g})")

"""Exact algorithms: biased endpoints, Poisson thinning and the rejection loops.

Every driver returns a :class:`Skeleton`, the finite set of simulated points
plus whatever conditioning information is needed to fill in the rest of the
path later from candidate bridge laws alone.
"""

from __future__ import annotations

import bisect
import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import legendre as L

from .bessel_numerics import BesselOrder, bessel_bridge_point, bessel_log_transition_density
from .brownian_bridge import BridgeSpec, MinRecord, sample_min
from .errors import DomainError, NumericError, ResourceCapExceeded
from .layered_bridge import (
    LayeredPath,
    LayerIndex,
    LayerSpec,
    accept_layer_path,
    propose_layer_path,
    sample_layer,
)
from .rng import CountingRNG
from .sde_model import BESSEL, BROWNIAN, UnitDiffusionSpec

EA1, EA2, BESSEL_EA1, EA3 = "ea1", "ea2", "bessel-ea1", "ea3"
BES3 = BesselOrder(3.0)
DEFAULT_MAX_VARIATES = 1_000_000
MAX_INNER = 100_000


# -- bookkeeping ------------------------------------------------------------------------
@dataclass
class PathStats:
    """Cost of producing one accepted path, summed over all its candidates."""

    attempts: int = 0
    poisson_points: int = 0
    skeleton_points: int = 0
    variates: int = 0
    uniforms: int = 0
    wall_time: float = 0.0


@dataclass
class Skeleton:
    times: List[float]
    values: List[float]
    kind: str
    conditioning: Dict = field(default_factory=dict)
    attempts: int = 1
    stats: Optional[PathStats] = None
    delta: Optional[float] = None
    _path: object = field(default=None, repr=False, compare=False)

    @property
    def T(self) -> float:
        return self.times[-1]

    def to_dict(self) -> Dict:
        cond = dict(self.conditioning)
        if self.delta is not None:
            cond.setdefault("delta", self.delta)
        return {"t": list(self.times), "y": list(self.values), "conditioning": cond,
                "attempts": self.attempts, "kind": self.kind}

    def to_json(self) -> str:
        return dump_json(self.to_dict())

    @classmethod
    def from_dict(cls, d: Dict) -> "Skeleton":
        cond = dict(d.get("conditioning", {}))
        return cls([float(t) for t in d["t"]], [float(v) for v in d["y"]], d["kind"], cond,
                   int(d.get("attempts", 1)), delta=cond.get("delta"))

    @classmethod
    def from_json(cls, text: str) -> "Skeleton":
        return cls.from_dict(json.loads(text))


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    s = format(x, ".17g")
    if "e" not in s and "." not in s and "n" not in s:
        s += ".0"
    return s


def dump_json(obj, indent: Optional[int] = None, _level: int = 0) -> str:
    """JSON with every float written to 17 significant digits."""
    pad = "" if indent is None else "\n" + " " * (indent * (_level + 1))
    end = "" if indent is None else "\n" + " " * (indent * _level)
    sep = ", " if indent is None else ","
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [pad + json.dumps(str(k)) + ": " + dump_json(v, indent, _level + 1) for k, v in obj.items()]
        return "{" + sep.join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if indent is not None and all(isinstance(v, (int, float, np.floating, np.integer)) for v in obj):
            return "[" + ", ".join(dump_json(v) for v in obj) + "]"
        return "[" + sep.join(pad + dump_json(v, indent, _level + 1) for v in obj) + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if obj is None:
        return "null"
    return json.dumps(obj)


# -- Poisson marks --------------------------------------------------------------------
@dataclass(frozen=True)
class PoissonMarks:
    chi: np.ndarray
    psi: np.ndarray
    rate: float

    def __len__(self) -> int:
        return int(self.chi.size)


def sample_marks(rate: float, T: float, rng: CountingRNG, max_variates: Optional[int] = None) -> PoissonMarks:
    """Unit-rate Poisson process on [0, T] x [0, rate]: one count plus two coordinates per mark.

    When the coordinates would take more than ``max_variates`` draws the cap
    is raised before anything is allocated.
    """
    if rate < 0 or not math.isfinite(rate):
        raise NumericError(f"invalid thinning rate {rate}")
    n = int(rng.poisson(rate * T))
    if max_variates is not None and 2 * n > max_variates:
        raise ResourceCapExceeded(f"{n} Poisson marks exceed the variate cap", 2 * n)
    return PoissonMarks(T * rng.uniform(n), rate * rng.uniform(n), rate)


def thinning_event(marks: PoissonMarks, phi_at: Callable[[float], float]) -> bool:
    """True when every mark lies on or above the graph of ``phi``; stops at the first that does not."""
    for chi, psi in zip(marks.chi, marks.psi):
        if psi < phi_at(float(chi)):
            return False
    return True


# -- biased endpoint ---------------------------------------------------------------------
_GL_X, _GL_W = L.leggauss(12)
_GL_INV = np.linalg.inv(L.legvander(_GL_X, 11))


class TableSampler:
    """Inverse-CDF sampler for a density given through its logarithm.

    The support is truncated where the density falls below ``exp(-46)`` of
    its peak and cut into cells.  In each cell the density is replaced by its
    degree-11 interpolant at the Gauss-Legendre nodes, whose integral equals
    the tabulated cell mass, so draws invert a piecewise polynomial CDF
    without further density evaluations.
    """

    def __init__(self, log_density: Callable[[np.ndarray], np.ndarray], lower: float, upper: float,
                 center: float, scale: float, n_cells: int = 1024, cut: float = 46.0):
        self.log_density = log_density
        a, b = self._support(lower, upper, center, scale, cut)
        self.edges = np.linspace(a, b, n_cells + 1)
        h = np.diff(self.edges)
        nodes = self.edges[:-1, None] + 0.5 * h[:, None] * (_GL_X[None, :] + 1.0)
        logs = self._logf(nodes)
        self.shift = float(np.max(logs))
        vals = np.exp(logs - self.shift)
        mass = 0.5 * h * (vals @ _GL_W)
        total = float(mass.sum())
        if not np.isfinite(total) or total <= 0:
            raise DomainError("endpoint density is not integrable")
        self.log_norm = self.shift + math.log(total)
        self.cdf = np.concatenate(([0.0], np.cumsum(mass) / total))
        self.node_density = vals / total

    def _logf(self, u):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            v = np.asarray(self.log_density(u), dtype=float)
        return np.where(np.isnan(v), -np.inf, v)

    def _support(self, lower, upper, center, scale, cut):
        eps = 1e-300
        lo_edge = lower if math.isfinite(lower) else -math.inf
        hi_edge = upper if math.isfinite(upper) else math.inf
        width = 40.0 * scale
        for _ in range(60):
            a = max(center - width, lo_edge)
            b = min(center + width, hi_edge)
            grid = np.linspace(a, b, 4001)
            if math.isfinite(lower):
                grid[0] = max(grid[0], lower + eps * max(1.0, abs(lower)))
            if math.isfinite(upper):
                grid[-1] = min(grid[-1], upper - 1e-16 * max(1.0, abs(upper)))
            vals = self._logf(grid)
            peak = float(np.max(vals))
            if not np.isfinite(peak):
                width *= 4.0
                continue
            left_ok = a == lo_edge or vals[0] < peak - cut
            right_ok = b == hi_edge or vals[-1] < peak - cut
            if left_ok and right_ok:
                keep = np.nonzero(vals >= peak - cut)[0]
                i0, i1 = max(keep[0] - 1, 0), min(keep[-1] + 1, grid.size - 1)
                return (a if i0 == 0 else grid[i0]), (b if i1 == grid.size - 1 else grid[i1])
            width *= 2.0
        raise DomainError("endpoint density is not integrable (support keeps growing)")

    def ppf(self, u: float) -> float:
        k = int(np.searchsorted(self.cdf, u, side="right")) - 1
        k = min(max(k, 0), self.edges.size - 2)
        a, b = float(self.edges[k]), float(self.edges[k + 1])
        half = 0.5 * (b - a)
        dens = L.legint(_GL_INV @ self.node_density[k], lbnd=-1.0)
        coef = dens * half
        deriv = L.legder(coef)
        target = u - self.cdf[k]
        fb = self.cdf[k + 1] - self.cdf[k]
        s = -1.0 + 2.0 * (target / fb if fb > 0 else 0.5)
        lo, hi = -1.0, 1.0
        for _ in range(60):
            g = float(L.legval(s, coef)) - target
            if g > 0:
                hi = s
            else:
                lo = s
            d = float(L.legval(s, deriv))
            ns = s - g / d if d > 0 else 0.5 * (lo + hi)
            if not lo < ns < hi:
                ns = 0.5 * (lo + hi)
            if abs(ns - s) <= 1e-15 or hi - lo <= 1e-15:
                s = ns
                break
            s = ns
        return a + half * (s + 1.0)

    def sample(self, rng: CountingRNG) -> float:
        return self.ppf(rng.uniform())


def endpoint_log_density(spec: UnitDiffusionSpec, y: float, T: float, positivity: bool = False):
    """Log of the unnormalised biased endpoint density."""
    if spec.candidate == BESSEL:
        order = BesselOrder(spec.delta)

        def logf(u):
            u = np.asarray(u, dtype=float)
            out = np.full(u.shape, -np.inf)
            ok = u > 0
            if np.any(ok):
                out[ok] = bessel_log_transition_density(order, T, y, u[ok]) + spec.log_bias(u[ok])
            return out
        return logf

    lower = spec.lower_boundary

    def logf(u):
        u = np.asarray(u, dtype=float)
        out = -(u - y) ** 2 / (2.0 * T) + spec.antiderivative(u)
        if positivity and math.isfinite(lower):
            out = out + np.log(-np.expm1(-2.0 * (y - lower) * np.maximum(u - lower, 0.0) / T))
        inside = (u > spec.lower_boundary) & (u < spec.upper_boundary)
        return np.where(inside, out, -np.inf)
    return logf


_SAMPLER_CACHE: Dict[Tuple, TableSampler] = {}


def endpoint_sampler(spec: UnitDiffusionSpec, y: float, T: float, positivity: bool = False) -> TableSampler:
    key = (spec, float(y), float(T), bool(positivity))
    sampler = _SAMPLER_CACHE.get(key)
    if sampler is None:
        logf = endpoint_log_density(spec, y, T, positivity)
        sampler = TableSampler(logf, spec.lower_boundary, spec.upper_boundary, y, math.sqrt(T))
        if len(_SAMPLER_CACHE) > 256:
            _SAMPLER_CACHE.clear()
        _SAMPLER_CACHE[key] = sampler
    return sampler


def sample_biased_endpoint(spec: UnitDiffusionSpec, y: float, T: float, rng: CountingRNG,
                           positivity: bool = False) -> float:
    """Draw from the endpoint density tilted by ``exp(A)`` (or ``exp(A~)`` for Bessel candidates)."""
    if spec.candidate == BESSEL and y <= 0:
        raise DomainError("Bessel candidates need a start y > 0")
    return float(endpoint_sampler(spec, y, T, positivity).sample(rng))


# -- candidate paths --------------------------------------------------------------------------
class _Knots:
    """Candidate path known at finitely many times; new times are simulated on demand."""

    def __init__(self, times: Sequence[float], values: Sequence[float]):
        self.times = list(times)
        self.values = list(values)

    def value_at(self, t: float):
        k = bisect.bisect_left(self.times, t)
        if k < len(self.times) and self.times[k] == t:
            return self.values[k]
        return None

    def insert(self, t: float, rng: CountingRNG) -> float:
        if not self.times[0] <= t <= self.times[-1]:
            raise DomainError(f"t={t} outside [{self.times[0]}, {self.times[-1]}]")
        v = self.value_at(t)
        if v is not None:
            return v
        k = bisect.bisect_left(self.times, t)
        v = self._between(self.times[k - 1], self.values[k - 1], self.times[k], self.values[k], t, rng)
        self.times.insert(k, t)
        self.values.insert(k, v)
        return v

    def _between(self, t0, v0, t1, v1, t, rng):
        raise NotImplementedError


class BrownianKnots(_Knots):
    def _between(self, t0, v0, t1, v1, t, rng):
        dt, s = t1 - t0, t - t0
        return v0 + (s / dt) * (v1 - v0) + math.sqrt(s * (dt - s) / dt) * rng.normal()


class MinKnots(_Knots):
    """Brownian bridge given its minimum ``m``: distances from ``m`` are Bessel(3) bridges."""

    def __init__(self, times, values, m: float):
        super().__init__(times, values)
        self.m = m

    def _between(self, t0, v0, t1, v1, t, rng):
        r = bessel_bridge_point(BES3, v0 - self.m, v1 - self.m, t1 - t0, t - t0, rng)
        return self.m + float(r)


class BesselKnots(_Knots):
    def __init__(self, times, values, delta: float):
        super().__init__(times, values)
        self.order = BesselOrder(delta)

    def _between(self, t0, v0, t1, v1, t, rng):
        return float(bessel_bridge_point(self.order, v0, v1, t1 - t0, t - t0, rng))


# -- drivers ---------------------------------------------------------------------------------
class _Budget:
    def __init__(self, rng: CountingRNG, max_variates: Optional[int]):
        self.rng = rng
        self.v0 = rng.variates
        self.u0 = rng.uniforms
        self.t0 = time.perf_counter()
        self.cap = max_variates
        self.stats = PathStats()

    def remaining(self) -> Optional[int]:
        return None if self.cap is None else self.cap - (self.rng.variates - self.v0)

    def check(self):
        used = self.rng.variates - self.v0
        if self.cap is not None and used > self.cap:
            raise ResourceCapExceeded(f"path used more than {self.cap} random variates", used)

    def finish(self) -> PathStats:
        self.stats.variates = self.rng.variates - self.v0
        self.stats.uniforms = self.rng.uniforms - self.u0
        self.stats.wall_time = time.perf_counter() - self.t0
        return self.stats


def _phi_checker(spec: UnitDiffusionSpec, knots: _Knots, rate: float, budget: _Budget, rng: CountingRNG):
    slack = 1e-9 * (1.0 + rate)

    def phi_at(t: float) -> float:
        n0 = len(knots.times)
        v = knots.insert(t, rng)
        budget.stats.skeleton_points += len(knots.times) - n0
        if not spec.interior(v):
            return math.inf
        val = float(spec.phi(v))
        if val > rate + slack or val < -slack:
            raise NumericError(f"phi({v})={val} outside [0, {rate}]: the bounds of {spec.name} are wrong")
        budget.check()
        return val
    return phi_at


def _endpoint(spec, y, T, rng, z, positivity=False):
    if z is not None:
        return float(z)
    return sample_biased_endpoint(spec, y, T, rng, positivity)


def _finish(knots: _Knots, kind: str, budget: _Budget, cond=None, delta=None) -> Skeleton:
    stats = budget.finish()
    return Skeleton(list(knots.times), list(knots.values), kind, cond or {}, stats.attempts,
                    stats, delta, _path=knots)


def run_ea1(spec: UnitDiffusionSpec, y: float, T: float, rng: CountingRNG, z: Optional[float] = None,
            max_variates: Optional[int] = DEFAULT_MAX_VARIATES) -> Skeleton:
    """EA1: Brownian candidates with a global bound on ``phi``."""
    if spec.candidate != BROWNIAN:
        raise DomainError("EA1 needs a Brownian candidate")
    rate = spec.sup_phi()
    budget = _Budget(rng, max_variates)
    while True:
        budget.stats.attempts += 1
        zz = _endpoint(spec, y, T, rng, z)
        marks = sample_marks(rate, T, rng, budget.remaining())
        budget.stats.poisson_points += len(marks)
        knots = BrownianKnots([0.0, T], [y, zz])
        if thinning_event(marks, _phi_checker(spec, knots, rate, budget, rng)):
            return _finish(knots, EA1, budget)
        budget.check()


def run_ea2(spec: UnitDiffusionSpec, y: float, T: float, rng: CountingRNG, z: Optional[float] = None,
            positivity: bool = False, max_variates: Optional[int] = DEFAULT_MAX_VARIATES) -> Skeleton:
    """EA2: the bound on ``phi`` depends on the simulated minimum of the candidate.

    With ``positivity`` the minimum is restricted to lie above the lower
    boundary, and a free endpoint is drawn with the matching extra factor
    P(min > boundary | endpoint) so the output law is unchanged.
    """
    if spec.candidate != BROWNIAN:
        raise DomainError("EA2 needs a Brownian candidate")
    lower = spec.lower_boundary if positivity else None
    if positivity and not math.isfinite(spec.lower_boundary):
        raise DomainError("positivity needs a finite lower boundary")
    budget = _Budget(rng, max_variates)
    while True:
        budget.stats.attempts += 1
        zz = _endpoint(spec, y, T, rng, z, positivity)
        rec = sample_min(BridgeSpec(y, zz, T), rng, lower=lower)
        rate = spec.sup_phi(rec.m, spec.upper_boundary)
        marks = sample_marks(rate, T, rng, budget.remaining())
        budget.stats.poisson_points += len(marks)
        budget.check()
        knots = MinKnots(*zip(*sorted([(0.0, y), (rec.tau, rec.m), (T, zz)])), m=rec.m)
        if thinning_event(marks, _phi_checker(spec, knots, rate, budget, rng)):
            cond = {"m": rec.m, "tau": rec.tau}
            return _finish(knots, EA2, budget, cond)
        budget.check()


def run_bessel_ea1(spec: UnitDiffusionSpec, y: float, T: float, rng: CountingRNG, z: Optional[float] = None,
                   max_variates: Optional[int] = DEFAULT_MAX_VARIATES) -> Skeleton:
    """Bessel-EA1: Bessel(delta) candidates with a global bound on ``phi``."""
    if spec.candidate != BESSEL:
        raise DomainError("Bessel-EA1 needs a Bessel candidate")
    if y <= 0:
        raise DomainError("Bessel-EA1 needs y > 0")
    if z is not None and z <= 0:
        raise DomainError("Bessel-EA1 needs z > 0")
    rate = spec.sup_phi()
    budget = _Budget(rng, max_variates)
    while True:
        budget.stats.attempts += 1
        zz = _endpoint(spec, y, T, rng, z)
        marks = sample_marks(rate, T, rng, budget.remaining())
        budget.stats.poisson_points += len(marks)
        knots = BesselKnots([0.0, T], [y, zz], spec.delta)
        if thinning_event(marks, _phi_checker(spec, knots, rate, budget, rng)):
            return _finish(knots, BESSEL_EA1, budget, {"delta": spec.delta}, spec.delta)
        budget.check()


def default_layers(bridge: BridgeSpec, lower: float, upper: float, first: float = 0.25) -> LayerSpec:
    return LayerSpec.for_bridge(bridge, lower, upper, first)


def run_ea3_two_boundary(spec: UnitDiffusionSpec, y: float, T: float, rng: CountingRNG,
                         z: Optional[float] = None, layers=None,
                         max_variates: Optional[int] = DEFAULT_MAX_VARIATES) -> Skeleton:
    """EA3 with layers converging to both boundaries.

    ``layers`` is a :class:`LayerSpec`, a callable mapping the candidate's
    :class:`BridgeSpec` to one, or ``None`` for the default converging layers.
    A candidate whose bridge leaves the state space is rejected.
    """
    if spec.candidate != BROWNIAN:
        raise DomainError("EA3 needs a Brownian candidate")
    lo_b, hi_b = spec.lower_boundary, spec.upper_boundary
    if not (math.isfinite(lo_b) and math.isfinite(hi_b)):
        raise DomainError("EA3 two-boundary driver needs two finite boundaries")
    if not lo_b < y < hi_b:
        raise DomainError("start must lie strictly inside the boundaries")
    budget = _Budget(rng, max_variates)
    while True:
        budget.stats.attempts += 1
        zz = _endpoint(spec, y, T, rng, z)
        bridge = BridgeSpec(y, zz, T)
        if layers is None:
            lay = default_layers(bridge, lo_b, hi_b)
        elif callable(layers):
            lay = layers(bridge)
        else:
            lay = layers
        lay.check(bridge, lo_b, hi_b)
        idx = sample_layer(bridge, lay, rng, lo_b, hi_b)
        if idx is None:
            budget.check()
            continue
        band_lo, band_hi = lay.band(bridge, idx.i)
        rate = spec.sup_phi(band_lo, band_hi)
        marks = sample_marks(rate, T, rng, budget.remaining())
        budget.stats.poisson_points += len(marks)
        budget.check()
        times = [float(c) for c in marks.chi]
        for _ in range(MAX_INNER):
            path = propose_layer_path(bridge, lay, idx, times, rng)
            if accept_layer_path(path, idx, lay, rng):
                break
            budget.check()
        else:
            raise NumericError("layered proposal did not accept within the iteration cap")
        budget.stats.skeleton_points += len(set(times))
        phi_at = lambda t: float(spec.phi(path.value_at(t)))
        if thinning_event(marks, phi_at):
            cond = {"layer": idx.i, "which": idx.which, "branch": path.branch,
                    "extremum": path.extremum, "tau": path.tau,
                    "labels": list(path.labels), "levels": list(path.levels)}
            stats = budget.finish()
            return Skeleton(list(path.times), list(path.values), EA3, cond, stats.attempts, stats,
                            _path=path)
        budget.check()


# -- fill-in -----------------------------------------------------------------------------------
def _rebuild(skel: Skeleton):
    c = skel.conditioning
    if skel.kind == EA1:
        return BrownianKnots(skel.times, skel.values)
    if skel.kind == EA2:
        return MinKnots(skel.times, skel.values, float(c["m"]))
    if skel.kind == BESSEL_EA1:
        return BesselKnots(skel.times, skel.values, float(skel.delta or c["delta"]))
    if skel.kind == EA3:
        T = skel.times[-1]
        path = LayeredPath(BridgeSpec(skel.values[0], skel.values[-1], T), c["branch"],
                           float(c["extremum"]), float(c["tau"]), list(skel.times), list(skel.values),
                           [int(v) for v in c["labels"]], tuple(float(v) for v in c["levels"]))
        return path
    raise DomainError(f"unknown skeleton kind {skel.kind!r}")


def fill_in(skel: Skeleton, times: Sequence[float], rng: CountingRNG, update: bool = True
            ) -> List[Tuple[float, float]]:
    """Values at ``times`` given the skeleton, from the candidate bridge laws only.

    Points are simulated in the order given, each conditioned on everything
    simulated before it.  With ``update`` the new points join the skeleton.
    """
    T = skel.times[-1]
    for t in times:
        if not 0.0 <= t <= T:
            raise DomainError(f"fill-in time {t} outside [0, {T}]")
    path = skel._path if (update and skel._path is not None) else _rebuild(skel)
    if skel.kind == EA3 and path.labels is None:
        raise DomainError("EA3 skeleton lacks its segment labels")
    out = [(float(t), float(path.insert(float(t), rng))) for t in times]
    if update:
        skel._path = path
        skel.times = list(path.times)
        skel.values = list(path.values)
        if skel.kind == EA3:
            skel.conditioning["labels"] = list(path.labels)
    return out


def run(kind: str, spec: UnitDiffusionSpec, y: float, T: float, rng: CountingRNG, z: Optional[float] = None,
        max_variates: Optional[int] = DEFAULT_MAX_VARIATES, **kw) -> Skeleton:
    drivers = {EA1: run_ea1, EA2: run_ea2, BESSEL_EA1: run_bessel_ea1, EA3: run_ea3_two_boundary}
    if kind not in drivers:
        raise DomainError(f"unknown algorithm {kind!r}")
    return drivers[kind](spec, y, T, rng, z=z, max_variates=max_variates, **kw)

"""Layered Brownian bridges with unequal layers towards the two boundaries.

The layer of a bridge from ``y`` to ``z`` is the index ``I`` such that the
path stays inside ``(ybar - a_I, zbar + b_I)`` but not inside the previous
band, where ``ybar = min(y, z)`` and ``zbar = max(y, z)``.  Candidates given
their layer come from a two-component mixture (maximum or minimum forced into
its band) followed by a rejection step driven by retrospective coins.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

import numpy as np

from .bessel_numerics import BesselOrder, bessel_bridge_point
from .brownian_bridge import BridgeSpec, sample_max, sample_min
from .errors import DomainError, NumericError
from .rng import CountingRNG

BES3 = BesselOrder(3.0)
MAX_TERMS = 10_000
MAX_LAYERS = 64


# -- interval confinement series ----------------------------------------------------
def _bes3_terms(x: float, y: float, w: float, t: float) -> Iterator[Tuple[float, bool]]:
    """Correction terms of P(BES3 bridge x -> y over t stays below w), 0 <= x <= y < w.

    Terms come in the order k = -1, 1, -2, 2, ... with alternating signs; the
    flag says whether the magnitudes are guaranteed non-increasing from there on.
    """
    d0, s = y - x, x + y
    root_t = math.sqrt(t)
    if x > 0:
        log_den = math.log(-math.expm1(-2.0 * x * y / t))
    j = 1
    while True:
        for k in (-j, j):
            c = y + 2 * k * w
            if x > 0:
                ck = 2.0 * x * abs(c) / t
                log_num = math.log(-math.expm1(-ck)) + (ck if k < 0 else 0.0)
                log_r = log_num - log_den
            else:
                log_r = math.log(abs(c) / y)
            mag = math.exp(-2.0 * k * w * (d0 + k * w) / t + log_r)
            left = d0 + 2 * k * w if k > 0 else 2 * j * w - s
            yield (mag if k > 0 else -mag), left >= root_t
        j += 1


def bes3_below_brackets(x: float, y: float, t: float, w: float) -> Iterator[Tuple[float, float]]:
    """Nested brackets for P(three-dimensional Bessel bridge x -> y over ``t`` stays below ``w``)."""
    if t <= 0:
        raise DomainError("bridge duration must be positive")
    if x < 0 or y < 0:
        raise DomainError("Bessel bridge endpoints must be >= 0")
    if max(x, y) >= w:
        yield 0.0, 0.0
        return
    if x > y:
        x, y = y, x
    if y == 0.0:
        raise DomainError("Bessel excursion (both endpoints at 0) is not supported")
    s_sum = 1.0
    lo, hi = -math.inf, math.inf
    for n, (term, certified) in enumerate(_bes3_terms(x, y, w, t)):
        if n > MAX_TERMS:
            raise NumericError("confinement series did not close")
        if certified:
            if term < 0:
                hi = min(hi, s_sum)
            else:
                lo = max(lo, s_sum)
            if term == 0.0:
                yield max(s_sum, 0.0), min(s_sum, 1.0)
                return
            if lo > -math.inf and hi < math.inf:
                yield max(lo, 0.0), min(hi, 1.0)
        s_sum += term


def confinement_brackets(x: float, y: float, t: float, lower: float, upper: float
                         ) -> Iterator[Tuple[float, float]]:
    """Nested brackets for P(Brownian bridge x -> y over ``t`` stays in (lower, upper))."""
    if not (lower < x < upper and lower < y < upper):
        yield 0.0, 0.0
        return
    xl, yl = x - lower, y - lower
    factor = -math.expm1(-2.0 * xl * yl / t)
    if upper == math.inf:
        yield factor, factor
        return
    for lo, hi in bes3_below_brackets(xl, yl, t, upper - lower):
        yield factor * lo, factor * hi


def _resolve(brackets: Iterator[Tuple[float, float]], tol: float = 0.0) -> float:
    lo = hi = 0.0
    for lo, hi in brackets:
        if hi - lo <= tol:
            break
    return 0.5 * (lo + hi)


def confinement_prob(x: float, y: float, t: float, lower: float, upper: float) -> float:
    if lower == -math.inf:
        if upper == math.inf:
            return 1.0
        return confinement_prob(-x, -y, t, -upper, math.inf)
    return _resolve(confinement_brackets(x, y, t, lower, upper), 1e-17)


def bes3_below_prob(x: float, y: float, t: float, w: float) -> float:
    return _resolve(bes3_below_brackets(x, y, t, w), 1e-17)


def coin_below(u: float, brackets: Iterator[Tuple[float, float]]) -> bool:
    """Decide ``u < p`` refining the brackets of ``p`` only as far as needed."""
    lo = hi = None
    for lo, hi in brackets:
        if u < lo:
            return True
        if u >= hi:
            return False
    # the series ran out of precision with u inside the final bracket
    return u < 0.5 * (lo + hi)


# -- layers ---------------------------------------------------------------------------
@dataclass(frozen=True)
class LayerSpec:
    """Offsets ``a`` (below ``ybar``) and ``b`` (above ``zbar``), ``a_0 = b_0 = 0`` implied."""

    a: Tuple[float, ...]
    b: Tuple[float, ...]
    max_index: int = MAX_LAYERS

    def __post_init__(self):
        if len(self.a) != len(self.b) or not self.a:
            raise DomainError("layer sequences must be non-empty and of equal length")
        for seq in (self.a, self.b):
            if seq[0] <= 0 or any(q <= p for p, q in zip(seq, seq[1:])):
                raise DomainError("layer offsets must be positive and strictly increasing")
        if self.max_index > len(self.a):
            object.__setattr__(self, "max_index", len(self.a))

    def a_at(self, i: int) -> float:
        return 0.0 if i == 0 else self.a[i - 1]

    def b_at(self, i: int) -> float:
        return 0.0 if i == 0 else self.b[i - 1]

    def band(self, bridge: BridgeSpec, i: int) -> Tuple[float, float]:
        return bridge.low - self.a_at(i), bridge.high + self.b_at(i)

    @classmethod
    def geometric(cls, ca: float, cb: float, n: int = MAX_LAYERS) -> "LayerSpec":
        """``a_i = ca (2^i - 1)``, ``b_i = cb (2^i - 1)``: for unbounded state spaces."""
        k = 2.0 ** np.arange(1, n + 1) - 1.0
        return cls(tuple(ca * k), tuple(cb * k), n)

    @classmethod
    def converging(cls, gap_a: float, gap_b: float, first: float = 0.25,
                   n: int = MAX_LAYERS) -> "LayerSpec":
        """Layers that approach a boundary at distance ``gap_a`` below and ``gap_b`` above.

        The first layer covers ``first`` of each gap and every further layer
        halves what is left.
        """
        if gap_a <= 0 or gap_b <= 0:
            raise DomainError("the endpoints must lie strictly inside the boundaries")
        rest = (1.0 - first) * 0.5 ** np.arange(n)
        a = gap_a * (1.0 - rest)
        b = gap_b * (1.0 - rest)
        # drop layers that round onto the boundary
        keep = (a < gap_a) & (b < gap_b) & np.concatenate(([True], (np.diff(a) > 0) & (np.diff(b) > 0)))
        n_keep = int(np.argmin(keep)) if not keep.all() else n
        return cls(tuple(a[:n_keep]), tuple(b[:n_keep]), n_keep)

    @classmethod
    def for_bridge(cls, bridge: BridgeSpec, lower: float, upper: float, first: float = 0.25,
                   scale_a: Optional[float] = None, scale_b: Optional[float] = None) -> "LayerSpec":
        if math.isfinite(lower) and math.isfinite(upper):
            return cls.converging(bridge.low - lower, upper - bridge.high, first)
        ca = scale_a or math.sqrt(bridge.T)
        cb = scale_b or math.sqrt(bridge.T)
        return cls.geometric(ca, cb)

    def check(self, bridge: BridgeSpec, lower: float = -math.inf, upper: float = math.inf) -> None:
        """Layers must not cross the boundaries."""
        if not (lower < bridge.low and bridge.high < upper):
            raise DomainError("bridge endpoints must lie strictly inside the boundaries")
        if self.a[-1] > bridge.low - lower or self.b[-1] > upper - bridge.high:
            raise DomainError("layers extend past a boundary")


@dataclass
class LayerIndex:
    i: int
    which: str = "undetermined"  # "U", "L", "both" once the rejection step has run


@dataclass(frozen=True)
class LayerProbs:
    p_upper_band: float  # W(max in [zbar + b_{i-1}, zbar + b_i))
    p_lower_band: float  # W(min in (ybar - a_i, ybar - a_{i-1}])
    p_layer: float       # W(D_i)
    p_upper: float       # W(U_i)
    p_lower: float       # W(L_i)


def layer_gamma(bridge: BridgeSpec, layers: LayerSpec, i: int) -> float:
    """P(path stays inside the band of layer ``i``); zero for ``i = 0``."""
    if i == 0:
        return 0.0
    lo, hi = layers.band(bridge, i)
    return confinement_prob(bridge.y, bridge.z, bridge.T, lo, hi)


def _max_band_prob(bridge: BridgeSpec, lo: float, hi: float) -> float:
    # W(max in [lo, hi)) for zbar <= lo < hi
    e = lambda b: -2.0 * (b - bridge.y) * (b - bridge.z) / bridge.T
    if hi == math.inf:
        return math.exp(e(lo))
    return math.exp(e(lo)) * -math.expm1(e(hi) - e(lo))


def upper_band_prob(bridge: BridgeSpec, layers: LayerSpec, i: int) -> float:
    return _max_band_prob(bridge, bridge.high + layers.b_at(i - 1), bridge.high + layers.b_at(i))


def lower_band_prob(bridge: BridgeSpec, layers: LayerSpec, i: int) -> float:
    r = bridge.reflected()
    return _max_band_prob(r, r.high + layers.a_at(i - 1), r.high + layers.a_at(i))


def layer_event_prob(bridge: BridgeSpec, layers: LayerSpec, i: int) -> LayerProbs:
    if not 1 <= i <= layers.max_index:
        raise DomainError(f"layer index {i} outside 1..{layers.max_index}")
    lo_i, hi_i = layers.band(bridge, i)
    lo_p, hi_p = layers.band(bridge, i - 1)
    y, z, T = bridge.y, bridge.z, bridge.T
    g_ii = confinement_prob(y, z, T, lo_i, hi_i)
    g_prev = 0.0 if i == 1 else confinement_prob(y, z, T, lo_p, hi_p)
    # U_i = max in its band and min above lo_i; L_i mirrored
    p_u = g_ii - confinement_prob(y, z, T, lo_i, hi_p)
    p_l = g_ii - confinement_prob(y, z, T, lo_p, hi_i)
    return LayerProbs(upper_band_prob(bridge, layers, i), lower_band_prob(bridge, layers, i),
                      g_ii - g_prev, p_u, p_l)


def layer_distribution(bridge: BridgeSpec, layers: LayerSpec, lower: float = -math.inf,
                       upper: float = math.inf) -> Tuple[np.ndarray, float]:
    """Layer probabilities given that the bridge stays inside (lower, upper).

    Returns the conditional probabilities of layers ``1..max_index`` and the
    unconditional probability of staying inside.
    """
    gam = np.array([layer_gamma(bridge, layers, i) for i in range(layers.max_index + 1)])
    inside = confinement_prob(bridge.y, bridge.z, bridge.T, lower, upper)
    return np.diff(gam) / inside, inside


def lambda_weight(bridge: BridgeSpec, layers: LayerSpec, i: int) -> float:
    """Mixture weight of the max-in-band component."""
    pu = upper_band_prob(bridge, layers, i)
    pl = lower_band_prob(bridge, layers, i)
    if pu + pl <= 0.0:
        raise DomainError("both extremum bands have zero probability")
    return pu / (pu + pl)


def sample_layer(bridge: BridgeSpec, layers: LayerSpec, rng: CountingRNG,
                 lower: float = -math.inf, upper: float = math.inf) -> Optional[LayerIndex]:
    """Layer of a fresh bridge, or ``None`` when the bridge leaves (lower, upper).

    One uniform is compared with the nested confinement probabilities,
    each refined only until the comparison is settled.
    """
    u = rng.uniform()
    y, z, T = bridge.y, bridge.z, bridge.T
    if math.isfinite(lower) or math.isfinite(upper):
        if math.isfinite(lower) and math.isfinite(upper):
            inside = confinement_brackets(y, z, T, lower, upper)
        else:
            inside = iter([(p, p) for p in (confinement_prob(y, z, T, lower, upper),)])
        if not coin_below(u, inside):
            return None
    for i in range(1, layers.max_index + 1):
        lo, hi = layers.band(bridge, i)
        if coin_below(u, confinement_brackets(y, z, T, lo, hi)):
            return LayerIndex(i)
    raise NumericError(f"layer index exceeded the cap of {layers.max_index}")


# -- layered candidate paths ---------------------------------------------------------------
MAX_BRANCH = "max"
MIN_BRANCH = "min"


@dataclass
class LayeredPath:
    """Bridge built around a simulated extremum.

    Distances from the extremum are three-dimensional Bessel bridges between
    neighbouring knots.  After the rejection step each segment carries a label
    saying in which band its own opposite-side extremum lies: 0 for inside the
    previous layer, 1 for the band of the current layer.
    """

    bridge: BridgeSpec
    branch: str
    extremum: float
    tau: float
    times: List[float] = field(default_factory=list)
    values: List[float] = field(default_factory=list)
    labels: Optional[List[int]] = None
    levels: Optional[Tuple[float, float]] = None  # (shallow, deep) in distance units

    def __post_init__(self):
        if not self.times:
            ts = sorted([(0.0, self.bridge.y), (self.tau, self.extremum), (self.bridge.T, self.bridge.z)])
            self.times = [t for t, _ in ts]
            self.values = [v for _, v in ts]

    def dist(self, v: float) -> float:
        return self.extremum - v if self.branch == MAX_BRANCH else v - self.extremum

    def from_dist(self, r: float) -> float:
        return self.extremum - r if self.branch == MAX_BRANCH else self.extremum + r

    def value_at(self, t: float) -> Optional[float]:
        k = bisect.bisect_left(self.times, t)
        if k < len(self.times) and self.times[k] == t:
            return self.values[k]
        return None

    def _propose(self, k: int, t: float, rng: CountingRNG) -> float:
        t0, t1 = self.times[k - 1], self.times[k]
        r0, r1 = self.dist(self.values[k - 1]), self.dist(self.values[k])
        return float(bessel_bridge_point(BES3, r0, r1, t1 - t0, t - t0, rng))

    def insert(self, t: float, rng: CountingRNG) -> float:
        """Simulate the path at ``t`` given all current knots."""
        if not 0.0 <= t <= self.bridge.T:
            raise DomainError(f"t={t} outside [0, {self.bridge.T}]")
        v = self.value_at(t)
        if v is not None:
            return v
        k = bisect.bisect_left(self.times, t)
        if self.labels is None:
            r = self._propose(k, t, rng)
        else:
            r = self._insert_labelled(k, t, rng)
        v = self.from_dist(r)
        self.times.insert(k, t)
        self.values.insert(k, v)
        return v

    def _insert_labelled(self, k: int, t: float, rng: CountingRNG) -> float:
        # propose from the free segment law, then accept when the labels of
        # the two halves reproduce the label of the whole segment
        parent = self.labels[k - 1]
        t0, t1 = self.times[k - 1], self.times[k]
        r0, r1 = self.dist(self.values[k - 1]), self.dist(self.values[k])
        for _ in range(100_000):
            r = self._propose(k, t, rng)
            left = segment_label(r0, r, t - t0, self.levels, rng)
            if left is None or (parent == 0 and left != 0):
                continue
            right = segment_label(r, r1, t1 - t, self.levels, rng)
            if right is None or (parent == 0 and right != 0):
                continue
            if parent == 1 and left == 0 and right == 0:
                continue
            self.labels[k - 1:k] = [left, right]
            return r
        raise NumericError("labelled fill-in did not accept within the iteration cap")

    def points(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.array(self.times), np.array(self.values)


def segment_label(r0: float, r1: float, dt: float, levels: Tuple[float, float],
                  rng: CountingRNG) -> Optional[int]:
    """Band of a segment's far excursion, or ``None`` if it crosses the deep level.

    ``levels = (shallow, deep)`` are distances from the extremum; label 0 means
    the segment stays below ``shallow``, 1 that it stays below ``deep`` only.
    """
    shallow, deep = levels
    u = rng.uniform()
    if coin_below(u, bes3_below_brackets(r0, r1, dt, shallow)):
        return 0
    if coin_below(u, bes3_below_brackets(r0, r1, dt, deep)):
        return 1
    return None


def propose_layer_path(bridge: BridgeSpec, layers: LayerSpec, idx: LayerIndex, times,
                       rng: CountingRNG, lam: Optional[float] = None) -> LayeredPath:
    """Candidate from the mixture: a Bernoulli(lambda) flip picks which extremum is
    forced into its band, then the requested times are simulated given it."""
    i = idx.i
    if lam is None:
        lam = lambda_weight(bridge, layers, i)
    if lam >= 1.0 or (lam > 0.0 and rng.uniform() < lam):
        rec = sample_max(bridge, rng, bridge.high + layers.b_at(i - 1), bridge.high + layers.b_at(i))
        path = LayeredPath(bridge, MAX_BRANCH, rec.M, rec.tau)
    else:
        rec = sample_min(bridge, rng, bridge.low - layers.a_at(i), bridge.low - layers.a_at(i - 1))
        path = LayeredPath(bridge, MIN_BRANCH, rec.m, rec.tau)
    for t in times:
        path.insert(float(t), rng)
    return path


def accept_layer_path(path: LayeredPath, idx: LayerIndex, layers: LayerSpec, rng: CountingRNG) -> bool:
    """Rejection step with ratio proportional to 1{D_I} / (1 + 1{U_I and L_I}).

    Each segment between knots gets a retrospective coin for the band of its
    opposite-side extremum; the labels are kept for later fill-in.  For the
    first layer both events coincide with D_1, so the ratio is constant on D_1
    and the halving coin is skipped.
    """
    i = idx.i
    br = path.bridge
    if path.branch == MAX_BRANCH:
        shallow = path.extremum - (br.low - layers.a_at(i - 1))
        deep = path.extremum - (br.low - layers.a_at(i))
    else:
        shallow = (br.high + layers.b_at(i - 1)) - path.extremum
        deep = (br.high + layers.b_at(i)) - path.extremum
    levels = (shallow, deep)
    labels = []
    for k in range(1, len(path.times)):
        dt = path.times[k] - path.times[k - 1]
        lab = segment_label(path.dist(path.values[k - 1]), path.dist(path.values[k]), dt, levels, rng)
        if lab is None:
            return False
        labels.append(lab)
    both = any(labels)
    if both and i > 1 and rng.uniform() >= 0.5:
        return False
    path.labels = labels
    path.levels = levels
    idx.which = "both" if both else ("U" if path.branch == MAX_BRANCH else "L")
    return True

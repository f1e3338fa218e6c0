import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from exactdiff.brownian_bridge import (
    BridgeSpec,
    MinRecord,
    bridge_given_max,
    bridge_given_min,
    bridge_max_cdf,
    bridge_min_cdf,
    bridge_point,
    sample_max,
    sample_min,
    sample_min_value,
    sample_time_of_min,
    time_of_min_cdf,
)
from exactdiff.errors import DomainError
from exactdiff.rng import CountingRNG
from exactdiff.validation import given_min_cdf


def test_bridge_point_standard_moments():
    spec = BridgeSpec(0.0, 0.0, 1.0)
    n = 1_000_000
    v = bridge_point(spec, 0.5, CountingRNG(1), size=n)
    assert abs(v.mean()) < 4 * math.sqrt(0.25 / n)
    assert abs(v.var() - 0.25) < 4 * 0.25 * math.sqrt(2 / n)


def test_bridge_point_closed_form():
    spec = BridgeSpec(1.0, 3.0, 2.0)
    v = bridge_point(spec, 0.5, CountingRNG(2), size=400_000)
    assert v.mean() == pytest.approx(1.5, abs=0.005)
    assert v.var() == pytest.approx(0.375, rel=0.01)


def test_bridge_point_near_end():
    v = bridge_point(BridgeSpec(0.0, 2.0, 1.0), 1 - 1e-6, CountingRNG(3), size=1000)
    assert v.std() < 0.01 and abs(v.mean() - 2.0) < 0.01


def test_min_cdf_values():
    spec = BridgeSpec(0.0, 0.0, 1.0)
    assert bridge_min_cdf(spec, 0.0) == 1.0
    assert bridge_min_cdf(spec, -50.0) == 0.0
    assert bridge_min_cdf(spec, -1.0) == pytest.approx(math.exp(-2.0))
    with pytest.raises(DomainError):
        bridge_min_cdf(spec, 0.5)


def test_min_cdf_against_euler_bridges():
    rng = np.random.default_rng(11)
    n, steps = 20_000, 2000
    t = np.linspace(0, 1, steps + 1)
    w = np.concatenate([np.zeros((n, 1)), np.cumsum(rng.standard_normal((n, steps)) / math.sqrt(steps), axis=1)], axis=1)
    mins = (w - t * w[:, -1:]).min(axis=1)
    # grid minima sit slightly above the continuous ones
    assert np.mean(mins <= -1.0) == pytest.approx(math.exp(-2.0), abs=0.012)


def test_min_empirical_cdf():
    spec = BridgeSpec(0.0, 0.0, 1.0)
    n = 1_000_000
    rng = CountingRNG(5)
    m = np.sort([sample_min_value(spec, rng) for _ in range(n)])
    grid = np.linspace(-2.0, 0.0, 20)
    emp = np.searchsorted(m, grid, side="right") / n
    assert np.max(np.abs(emp - bridge_min_cdf(spec, grid))) < 0.002


def test_constrained_min_support():
    spec = BridgeSpec(0.25, 0.25, 0.15)
    rng = CountingRNG(6)
    for _ in range(5000):
        rec = sample_min(spec, rng, lower=0.0)
        assert 0.0 < rec.m <= 0.25 and 0.0 < rec.tau < 0.15


def test_constrained_min_is_truncated_law():
    spec = BridgeSpec(0.4, 0.1, 1.0)
    lo, hi = -0.5, 0.0
    rng = CountingRNG(7)
    m = np.array([sample_min_value(spec, rng, lower=lo, upper=hi) for _ in range(50_000)])
    f = lambda a: bridge_min_cdf(spec, np.clip(a, lo, hi))
    cdf = lambda a: (f(a) - f(lo)) / (f(hi) - f(lo))
    assert stats.kstest(m, cdf).pvalue > 1e-3


def test_empty_band_raises():
    with pytest.raises(DomainError):
        sample_min_value(BridgeSpec(0.0, 0.0, 1.0), CountingRNG(0), lower=0.5)


def test_time_of_min_density_normalised():
    for th in ((0.3, 0.8), (0.01, 1.5), (2.0, 2.0)):
        assert time_of_min_cdf(*th, 1.0, 1.0) == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("theta", [(0.3, 0.8), (0.05, 0.6), (1.2, 0.02)])
def test_time_of_min_sampler_matches_density(theta):
    T = 1.0
    rng = CountingRNG(8)
    n = 20_000
    taus = np.sort([sample_time_of_min(*theta, T, rng) for _ in range(n)])
    # compare at sample quantiles so spikes near either end are resolved
    pts = taus[np.linspace(0, n - 1, 60).astype(int)]
    emp = np.searchsorted(taus, pts, side="right") / n
    exact = np.array([time_of_min_cdf(*theta, T, float(p)) for p in pts])
    assert np.max(np.abs(emp - exact)) < 0.015


def test_symmetric_time_of_min():
    spec = BridgeSpec(0.0, 0.0, 1.0)
    rng = CountingRNG(9)
    taus = np.array([sample_min(spec, rng).tau for _ in range(200_000)])
    assert stats.ks_2samp(taus, 1.0 - taus).statistic < 0.006


def test_max_is_reflected_min():
    spec = BridgeSpec(0.2, -0.4, 0.7)
    for i in range(200):
        a = sample_max(spec, CountingRNG(10, i))
        b = sample_min(spec.reflected(), CountingRNG(10, i))
        assert a.M == -b.m and a.tau == b.tau
        assert a.M >= spec.high


def test_max_empirical_cdf():
    spec = BridgeSpec(0.1, 0.3, 1.0)
    rng = CountingRNG(12)
    n = 200_000
    M = np.sort([sample_max(spec, rng).M for _ in range(n)])
    grid = np.linspace(0.3, 2.5, 30)
    emp = np.searchsorted(M, grid, side="left") / n
    assert np.max(np.abs(emp - bridge_max_cdf(spec, grid))) < 0.005


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.05, 3.0), st.integers(0, 10_000))
def test_given_min_stays_above(y, z, T, seed):
    spec = BridgeSpec(y, z, T)
    rng = CountingRNG(seed)
    rec = sample_min(spec, rng)
    for t in np.linspace(0, T, 9):
        v = bridge_given_min(spec, rec, float(t), rng)
        assert v >= rec.m
    assert bridge_given_min(spec, rec, rec.tau, rng) == rec.m
    assert bridge_given_min(spec, rec, 0.0, rng) == y


def test_given_min_concentrates_at_tau():
    spec = BridgeSpec(0.0, 0.0, 1.0)
    rec = MinRecord(-0.8, 0.4)
    v = bridge_given_min(spec, rec, 0.4 - 1e-7, CountingRNG(13), size=2000)
    assert np.all(v >= -0.8) and v.max() < -0.8 + 0.01


@pytest.mark.parametrize("t", [1 / 3, 0.7])
def test_given_min_marginal_analytic(t):
    spec = BridgeSpec(0.0, 0.0, 1.0)
    rec = MinRecord(-0.8, 0.4)
    v = bridge_given_min(spec, rec, t, CountingRNG(14), size=200_000)
    cdf = given_min_cdf(0.0, 0.0, 1.0, -0.8, 0.4, t)
    assert stats.kstest(v, cdf).statistic < 0.006


def test_given_max_mirrors():
    spec = BridgeSpec(0.3, 0.1, 1.0)
    rec = sample_max(spec, CountingRNG(15))
    v = bridge_given_max(spec, rec, 0.5, CountingRNG(16), size=1000)
    assert np.all(v <= rec.M)

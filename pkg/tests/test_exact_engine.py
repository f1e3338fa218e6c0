import math

import numpy as np
import pytest
from scipy import integrate, stats

from exactdiff import exact_engine as eng
from exactdiff.brownian_bridge import BridgeSpec
from exactdiff.errors import DomainError, ResourceCapExceeded
from exactdiff.layered_bridge import confinement_prob
from exactdiff.rng import CountingRNG
from exactdiff.sde_model import (
    BROWNIAN,
    GrowthModelParams,
    growth_model_spec,
    jacobi_toy_spec,
    sine_spec,
    wide_sense_bessel_spec,
    zero_drift_spec,
)
from exactdiff.validation import euler_paths

P1 = GrowthModelParams(1.0, 3.0, 1.0)


# -- thinning --------------------------------------------------------------------------------
def test_zero_rate_gives_no_marks():
    rng = CountingRNG(0)
    assert len(eng.sample_marks(0.0, 5.0, rng)) == 0
    assert rng.variates == 1


def test_marks_cover_the_rectangle():
    rng = CountingRNG(1)
    m = eng.sample_marks(3.0, 200.0, rng)
    assert abs(len(m) - 600) < 5 * math.sqrt(600)
    assert m.chi.min() >= 0 and m.chi.max() <= 200 and m.psi.max() <= 3.0
    assert rng.variates == 1 + 2 * len(m)


def test_marks_respect_cap_before_allocating():
    with pytest.raises(ResourceCapExceeded):
        eng.sample_marks(1e9, 1.0, CountingRNG(2), max_variates=1000)


def test_thinning_zero_phi_always_accepts():
    rng = CountingRNG(3)
    assert all(eng.thinning_event(eng.sample_marks(2.0, 1.0, rng), lambda t: 0.0) for _ in range(500))


def test_thinning_constant_phi_rate():
    c, r, T, n = 0.7, 2.0, 1.0, 40_000
    rng = CountingRNG(4)
    acc = np.mean([eng.thinning_event(eng.sample_marks(r, T, rng), lambda t: c) for _ in range(n)])
    p = math.exp(-c * T)
    assert abs(acc - p) < 4 * math.sqrt(p * (1 - p) / n)


def test_thinning_stops_at_first_failure():
    calls = []
    marks = eng.PoissonMarks(np.array([0.1, 0.2, 0.3]), np.array([0.0, 0.0, 0.0]), 1.0)
    assert not eng.thinning_event(marks, lambda t: calls.append(t) or 1.0)
    assert calls == [0.1]


# -- biased endpoint ---------------------------------------------------------------------------
def test_endpoint_without_tilt_is_normal():
    rng = CountingRNG(5)
    z = [eng.sample_biased_endpoint(zero_drift_spec(), 0.4, 2.0, rng) for _ in range(5000)]
    assert stats.kstest(z, stats.norm(0.4, math.sqrt(2.0)).cdf).pvalue > 1e-3


@pytest.mark.parametrize("positivity", [False, True])
def test_growth_endpoint_cdf_against_quadrature(positivity):
    spec = growth_model_spec(P1, BROWNIAN)
    y, T = 0.5, 0.15
    sampler = eng.endpoint_sampler(spec, y, T, positivity)
    logf = eng.endpoint_log_density(spec, y, T, positivity)
    f = lambda u: math.exp(float(logf(np.array([u]))[0]) - sampler.log_norm)
    total, _ = integrate.quad(f, 0, 5, points=[y], limit=200)
    assert total == pytest.approx(1.0, abs=1e-8)
    for u in (0.01, 0.3, 0.5, 0.8):
        part, _ = integrate.quad(f, 0, sampler.ppf(u), limit=200)
        assert part == pytest.approx(u, abs=1e-8)


@pytest.mark.parametrize("y", [0.05, 1.0, 10.0])
def test_bessel_endpoint_cdf_against_quadrature(y):
    spec = growth_model_spec(GrowthModelParams(10.0, 3.0, 1.0))
    T = 0.15
    sampler = eng.endpoint_sampler(spec, y, T)
    logf = eng.endpoint_log_density(spec, y, T)
    f = lambda u: math.exp(float(logf(np.array([u]))[0]) - sampler.log_norm)
    for u in (1e-4, 0.1, 0.5, 0.9, 0.9999):
        x = sampler.ppf(u)
        part, _ = integrate.quad(f, 0, x, points=[min(y, x / 2)], limit=400, epsabs=1e-13)
        assert part == pytest.approx(u, abs=1e-9)


def test_bessel_endpoint_needs_positive_start():
    spec = growth_model_spec(P1)
    with pytest.raises(DomainError):
        eng.sample_biased_endpoint(spec, 0.0, 1.0, CountingRNG(0))


# -- EA1 ----------------------------------------------------------------------------------------------
def test_ea1_zero_drift_accepts_first_candidate():
    rng = CountingRNG(6)
    for _ in range(100):
        sk = eng.run_ea1(zero_drift_spec(), 0.0, 1.0, rng)
        assert sk.attempts == 1 and sk.stats.poisson_points == 0 and len(sk.times) == 2


def test_ea1_rejects_bessel_candidate():
    with pytest.raises(DomainError):
        eng.run_ea1(growth_model_spec(P1), 1.0, 1.0, CountingRNG(0))


def test_ea1_sine_endpoint_against_euler():
    rng = CountingRNG(7)
    ends = np.array([eng.run_ea1(sine_spec(), 0.0, 1.0, rng).values[-1] for _ in range(4000)])
    ref = euler_paths(np.sin, 0.0, 1.0, 1e-3, 40_000, np.random.default_rng(8))[1.0]
    assert stats.ks_2samp(ends, ref).pvalue > 1e-3


def test_ea1_variate_accounting():
    rng = CountingRNG(9)
    for _ in range(300):
        before = rng.variates
        sk = eng.run_ea1(sine_spec(), 0.0, 1.0, rng)
        s = sk.stats
        # per attempt one endpoint uniform and one Poisson count, two per mark, one normal per bridge point
        assert s.variates == rng.variates - before
        assert s.variates == 2 * s.attempts + 2 * s.poisson_points + s.skeleton_points
        assert s.skeleton_points <= s.poisson_points
        assert len(sk.times) - 2 <= s.skeleton_points


def test_ea1_attempts_are_geometric():
    rng = CountingRNG(10)
    a = np.array([eng.run_ea1(sine_spec(), 0.0, 2.0, rng).attempts for _ in range(3000)])
    p = 1.0 / a.mean()
    for k in (1, 2, 3):
        q = p * (1 - p) ** (k - 1)
        assert abs(np.mean(a == k) - q) < 4 * math.sqrt(q * (1 - q) / a.size) + 4 * q / math.sqrt(a.size)


def test_same_seed_same_skeleton():
    a = eng.run_ea1(sine_spec(), 0.0, 1.0, CountingRNG(11, 3))
    b = eng.run_ea1(sine_spec(), 0.0, 1.0, CountingRNG(11, 3))
    assert a.times == b.times and a.values == b.values


# -- EA2 -----------------------------------------------------------------------------------------------
def test_ea2_positivity_keeps_path_positive():
    spec = growth_model_spec(P1, BROWNIAN)
    rng = CountingRNG(12)
    for _ in range(500):
        sk = eng.run_ea2(spec, 0.5, 0.15, rng, positivity=True)
        assert sk.conditioning["m"] > 0
        assert min(sk.values) > 0
        fill = eng.fill_in(sk, list(np.linspace(0, 0.15, 11)), rng)
        assert min(v for _, v in fill) >= sk.conditioning["m"]


def test_ea2_and_bessel_ea1_agree():
    # two exact algorithms for the same target
    y, T, n = 1.0, 0.15, 1500
    a_spec = growth_model_spec(P1, BROWNIAN)
    b_spec = growth_model_spec(P1)
    rng_a, rng_b = CountingRNG(13), CountingRNG(14)
    a = [eng.run_ea2(a_spec, y, T, rng_a, positivity=True).values[-1] for _ in range(n)]
    b = [eng.run_bessel_ea1(b_spec, y, T, rng_b).values[-1] for _ in range(n)]
    assert stats.ks_2samp(a, b).pvalue > 1e-3


def test_ea2_cap_raises():
    spec = growth_model_spec(P1, BROWNIAN)
    with pytest.raises(ResourceCapExceeded):
        for seed in range(200):
            eng.run_ea2(spec, 0.1, 0.15, CountingRNG(15, seed), positivity=True, max_variates=20)


def test_ea2_needs_finite_boundary_for_positivity():
    with pytest.raises(DomainError):
        eng.run_ea2(sine_spec(), 0.0, 1.0, CountingRNG(0), positivity=True)


# -- Bessel-EA1 --------------------------------------------------------------------------------------
def test_bessel_ea1_without_drift_term_accepts_first():
    spec = wide_sense_bessel_spec(0.5, 0.0)
    rng = CountingRNG(16)
    for _ in range(100):
        sk = eng.run_bessel_ea1(spec, 1.0, 1.0, rng)
        assert sk.attempts == 1
        fill = eng.fill_in(sk, list(np.linspace(0.0, 1.0, 21)), rng)
        assert all(v > 0 for t, v in fill if 0 < t)


def test_fill_in_at_skeleton_times_is_exact():
    rng = CountingRNG(17)
    sk = eng.run_bessel_ea1(growth_model_spec(P1), 1.0, 0.15, rng)
    before = dict(zip(sk.times, sk.values))
    out = eng.fill_in(sk, list(before), rng)
    assert all(v == before[t] for t, v in out)
    with pytest.raises(DomainError):
        eng.fill_in(sk, [0.2], rng)


def test_fill_in_update_flag():
    rng = CountingRNG(18)
    sk = eng.run_bessel_ea1(growth_model_spec(P1), 1.0, 0.15, rng)
    n0 = len(sk.times)
    eng.fill_in(sk, [0.01, 0.02], rng, update=False)
    assert len(sk.times) == n0
    (t, v), = eng.fill_in(sk, [0.05], rng)
    assert len(sk.times) == n0 + 1 and eng.fill_in(sk, [0.05], rng)[0][1] == v


def test_two_stage_fill_in_matches_one_stage():
    # filling t1 then t2 gives the same joint law as filling both at once
    t1, t2, n = 0.3, 0.6, 20_000
    base = lambda: eng.Skeleton([0.0, 1.0], [1.0, 1.3], "bessel-ea1", {"delta": 2.0}, delta=2.0)
    a, b = [], []
    for i in range(n):
        a.append(eng.fill_in(base(), [t1, t2], CountingRNG(19, i))[1][1])
        sk = base()
        eng.fill_in(sk, [t2], CountingRNG(20, i))
        eng.fill_in(sk, [t1], CountingRNG(21, i))
        b.append(dict(zip(sk.times, sk.values))[t2])
    assert stats.ks_2samp(a, b).pvalue > 1e-3


# -- EA3 -----------------------------------------------------------------------------------------------
def test_ea3_zero_drift_is_killed_brownian_motion():
    spec = zero_drift_spec(0.0, 1.0)
    y, T, n = 0.3, 0.1, 3000
    rng = CountingRNG(24)
    ends = np.array([eng.run_ea3_two_boundary(spec, y, T, rng).values[-1] for _ in range(n)])
    dens = lambda z: stats.norm.pdf(z, y, math.sqrt(T)) * confinement_prob(y, z, T, 0.0, 1.0)
    grid = np.linspace(1e-9, 1 - 1e-9, 4001)
    f = np.array([dens(z) for z in grid])
    cdf = np.concatenate(([0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(grid))))
    cdf /= cdf[-1]
    assert stats.kstest(ends, lambda x: np.interp(x, grid, cdf)).pvalue > 1e-3


def test_ea3_jacobi_against_euler():
    spec = jacobi_toy_spec(2.0)
    y, T = 0.5, 0.05
    rng = CountingRNG(25)
    ends = np.array([eng.run_ea3_two_boundary(spec, y, T, rng).values[-1] for _ in range(1500)])
    assert np.all((ends > 0) & (ends < 1))
    ref = euler_paths(spec.drift, y, T, 1e-5, 20_000, np.random.default_rng(26), lower=0.0)[T]
    ref = ref[np.isfinite(ref) & (ref < 1)]
    assert stats.ks_2samp(ends, ref).pvalue > 1e-3


def test_ea3_fill_in_stays_in_layer():
    spec = jacobi_toy_spec(2.0)
    rng = CountingRNG(27)
    for _ in range(50):
        sk = eng.run_ea3_two_boundary(spec, 0.5, 0.05, rng)
        vals = [v for _, v in eng.fill_in(sk, list(np.linspace(0, 0.05, 17)), rng)]
        assert 0 < min(vals) and max(vals) < 1
        assert len(sk.conditioning["labels"]) == len(sk.times) - 1


def test_ea3_needs_two_boundaries():
    with pytest.raises(DomainError):
        eng.run_ea3_two_boundary(sine_spec(), 0.0, 1.0, CountingRNG(0))


# -- skeleton serialisation ----------------------------------------------------------------------------
@pytest.mark.parametrize("kind", ["ea1", "ea2", "bessel-ea1", "ea3"])
def test_skeleton_json_round_trip(kind):
    specs = {"ea1": (sine_spec(), 0.0, {}), "ea2": (growth_model_spec(P1, BROWNIAN), 0.5, {"positivity": True}),
             "bessel-ea1": (growth_model_spec(P1), 0.5, {}), "ea3": (jacobi_toy_spec(2.0), 0.5, {})}
    spec, y, kw = specs[kind]
    rng = CountingRNG(28)
    sk = eng.run(kind, spec, y, 0.05, rng, **kw)
    eng.fill_in(sk, [0.0123456789, 0.04], rng)
    back = eng.Skeleton.from_json(sk.to_json())
    assert back.times == sk.times and back.values == sk.values and back.kind == sk.kind
    # the restored skeleton supports further fill-in
    assert len(eng.fill_in(back, [0.03], CountingRNG(29))) == 1


def test_dump_json_floats():
    assert eng.dump_json([0.1, 1.0, float("nan"), 2]) == "[0.10000000000000001, 1.0, NaN, 2]"


def test_run_rejects_unknown_kind():
    with pytest.raises(DomainError):
        eng.run("ea9", sine_spec(), 0.0, 1.0, CountingRNG(0))

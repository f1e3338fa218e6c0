import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize, special

from exactdiff.errors import DomainError
from exactdiff.sde_model import (
    BESSEL,
    BROWNIAN,
    GrowthModelParams,
    conditioned_drift,
    conditioned_spec,
    growth_bracket,
    growth_bracket_printed,
    growth_drift,
    growth_drift_derivative,
    growth_log_bias,
    growth_model_spec,
    growth_phi_bounds,
    growth_phi_bounds_tight,
    jacobi_toy_spec,
    lamperti_transform,
    phi,
    sine_spec,
    wide_sense_bessel_drift,
    wide_sense_bessel_spec,
    zero_drift_spec,
)
from exactdiff.validation import delta3_residual

P1 = GrowthModelParams(1.0, 3.0, 1.0)
P10 = GrowthModelParams(10.0, 3.0, 1.0)


# -- Lamperti transform -------------------------------------------------------------
def test_lamperti_identity_sigma():
    assert lamperti_transform(lambda u: 1.0, 0.0, 2.5) == pytest.approx(2.5, abs=1e-12)


def test_lamperti_geometric():
    assert lamperti_transform(lambda u: u, 1.0, math.e) == pytest.approx(1.0, abs=1e-10)


def test_lamperti_growth_matches_simpson():
    k, tau, w = 1.0, 1.0, 3.0
    sigma = lambda x: math.sqrt(tau * x + w * x * x)
    xi, x = 0.2, 1.0
    grid = np.linspace(xi, x, 200001)
    oracle = integrate.simpson(1.0 / np.sqrt(tau * grid + w * grid ** 2), x=grid)
    assert lamperti_transform(sigma, xi, x) == pytest.approx(oracle, abs=1e-8)


def test_lamperti_rejects_nonpositive_sigma():
    with pytest.raises(DomainError):
        lamperti_transform(lambda u: u, -1.0, 1.0)


# -- phi ------------------------------------------------------------------------------
def test_bessel_target_has_zero_phi():
    spec = wide_sense_bessel_spec(1.0, 0.0)
    for u in (0.01, 0.5, 3.0, 40.0):
        assert abs(phi(spec, u)) < 1e-9


def test_growth_phi_finite_near_boundary():
    spec = growth_model_spec(P1)
    vals = [phi(spec, u) for u in (1e-2, 1e-4, 1e-6)]
    assert all(np.isfinite(vals))
    assert abs(vals[1] - vals[2]) < 1e-6


def test_sine_phi_range():
    spec = sine_spec()
    g = lambda u: 0.5 * (math.sin(u) ** 2 + math.cos(u))
    res = optimize.minimize_scalar(g, bounds=(0, 2 * math.pi), method="bounded")
    assert spec.phi_lower_bound == pytest.approx(res.fun, abs=1e-8)
    us = np.random.default_rng(0).uniform(-20, 20, 2000)
    v = spec.phi(us)
    assert v.min() >= -1e-12 and v.max() <= spec.phi_upper_bound + 1e-12


def test_phi_outside_state_space():
    with pytest.raises(DomainError):
        phi(growth_model_spec(P1), -0.5)


# -- conditioned drift ------------------------------------------------------------------
def test_conditioned_brownian_motion_is_bes3():
    for u in (0.1, 1.0, 5.0):
        assert conditioned_drift(zero_drift_spec(), u) == pytest.approx(1.0 / u, rel=1e-10)


@pytest.mark.parametrize("u", [0.1, 1.0, 10.0])
def test_delta3_identity(u):
    assert delta3_residual(sine_spec(), u) < 1e-6


def test_conditioned_spec_carries_bounds():
    base = sine_spec()
    spec = conditioned_spec(base)
    assert spec.candidate == BESSEL and spec.delta == 3.0
    for u in (0.3, 2.0):
        assert spec.bracket(u) == base.bracket(u)


# -- growth model --------------------------------------------------------------------------
@pytest.mark.parametrize("params", [P1, P10, GrowthModelParams(0.5, 2.0)])
def test_growth_drift_boundary_asymptotics(params):
    assert abs(growth_drift(params, 1e-6) - 1.5e6) < 1e-3


def _growth_drift_mp(k, w, z):
    mp.mp.dps = 40
    k, w, z = mp.mpf(k), mp.mpf(w), mp.mpf(z)
    rw = mp.sqrt(w)
    s = rw * z
    p = 4 * k / w - 2
    return (k / rw * mp.tanh(s / 2) - rw / 2 * mp.coth(s)
            + (w - 2 * k) / rw * mp.tanh(s / 2) / (1 - mp.cosh(s / 2) ** p))


def test_growth_drift_high_precision():
    for z in (0.5, 0.01, 3.0):
        assert growth_drift(P1, z) == pytest.approx(float(_growth_drift_mp(1, 3, z)), rel=1e-12, abs=1e-12)
    assert growth_drift(P10, 0.7) == pytest.approx(float(_growth_drift_mp(10, 3, 0.7)), rel=1e-12)


def test_growth_drift_remainder_is_linear():
    r = [(growth_drift(P1, z) - 1.5 / z) / z for z in (1e-3, 1e-4)]
    assert abs(r[0] - r[1]) < 1e-3 * max(1.0, abs(r[1]))


def test_growth_derivative_and_antiderivative():
    for p in (P1, P10):
        for z in (0.05, 0.8, 4.0):
            h = 1e-5 * z
            fd = (growth_drift(p, z + h) - growth_drift(p, z - h)) / (2 * h)
            assert growth_drift_derivative(p, z) == pytest.approx(fd, rel=1e-6, abs=1e-6)
            fa = (growth_log_bias(p, z + h) - growth_log_bias(p, z - h)) / (2 * h)
            assert fa == pytest.approx(growth_drift(p, z) - 1.5 / z, rel=1e-6, abs=1e-6)


def test_growth_bracket_matches_printed_form():
    z = np.linspace(0.05, 8.0, 300)
    for p in (P1, P10):
        assert np.allclose(growth_bracket(p, z), growth_bracket_printed(p, z), rtol=1e-9, atol=1e-9)


def test_growth_bounds_values():
    assert growth_phi_bounds(P1) == pytest.approx((-1.0, 25.0 / 12.0))
    assert growth_phi_bounds(P10) == pytest.approx((-10.0, 289.0 / 12.0 + 20.0))


@pytest.mark.parametrize("params", [P1, P10])
def test_growth_bounds_on_grid(params):
    z = np.linspace(1e-6, 50.0, 10_000)
    lo, hi = growth_phi_bounds(params)
    g = growth_bracket(params, z)
    assert g.min() >= lo and g.max() <= hi
    t_lo, t_hi = growth_phi_bounds_tight(params)
    assert lo <= t_lo <= g.min() + 1e-12 and g.max() - 1e-12 <= t_hi <= hi


def test_growth_params_validation():
    with pytest.raises(DomainError):
        GrowthModelParams(1.5, 3.0)
    with pytest.raises(DomainError):
        GrowthModelParams(-1.0, 3.0)


def test_growth_spec_defaults():
    bes = growth_model_spec(P10)
    assert bes.meta["bounds"] == "mixed" and bes.delta == 4.0
    bro = growth_model_spec(P10, BROWNIAN)
    assert bro.meta["bounds"] == "tight"
    assert bro.sup_phi(0.5, math.inf) > bro.sup_phi(2.0, math.inf)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.3, 5.0), st.floats(1e-3, 30.0))
def test_growth_bessel_phi_within_rate(kappa, z):
    if abs(3.0 - 2 * kappa) < 1e-3:
        return
    spec = growth_model_spec(GrowthModelParams(kappa, 3.0))
    v = spec.phi(z)
    assert -1e-9 <= v <= spec.phi_upper_bound + 1e-9


# -- wide-sense Bessel -------------------------------------------------------------------------
def test_wide_sense_bessel_special_values():
    assert wide_sense_bessel_drift(1.0, 0.0, 2.0) == pytest.approx(0.75)
    closed = 2.0 / 2.0 + (1.0 / math.tanh(1.0) - 1.0)
    assert wide_sense_bessel_drift(0.5, 1.0, 1.0) == pytest.approx(closed, rel=1e-12)
    n = np.arange(60)
    i0 = np.sum(1.0 / special.factorial(n) ** 2)
    i1 = np.sum(1.0 / (special.factorial(n) * special.factorial(n + 1)))
    assert wide_sense_bessel_drift(0.0, 2.0, 1.0) == pytest.approx(0.5 + 2.0 * i1 / i0, abs=1e-10)


def test_wide_sense_bessel_phi_vanishes():
    spec = wide_sense_bessel_spec(0.5, 1.3)
    for u in (0.05, 1.0, 7.0):
        assert abs(spec.phi(u)) < 1e-6


# -- Jacobi toy -------------------------------------------------------------------------------
def test_jacobi_band_bounds_phi():
    spec = jacobi_toy_spec(2.0)
    u = np.linspace(0.2, 0.7, 501)
    assert spec.phi(u).min() >= -1e-12
    assert spec.phi(u).max() <= spec.sup_phi(0.2, 0.7) + 1e-12
    with pytest.raises(DomainError):
        jacobi_toy_spec(1.0)

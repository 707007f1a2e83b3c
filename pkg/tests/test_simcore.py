import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize, stats

from risklab.errors import ConfigError
from risklab.simcore import (
    REFERENCE_LAMBDA, SimParams, attenuation_to_distance, bag_infection_prob,
    distance_to_attenuation, f_dist, f_inf, hazard, infection_prob, infectiousness_mode,
    taylor_exp,
)

P = SimParams()
MODE = infectiousness_mode(P)


@pytest.mark.parametrize("d, expected", [(1.0, 1.0), (2.0, 0.25), (0.5, 1.0)])
def test_f_dist_examples(d, expected):
    assert f_dist(d, P) == expected


@pytest.mark.parametrize("d", [0.0, -1.0])
def test_f_dist_rejects_nonpositive(d):
    with pytest.raises(ValueError):
        f_dist(d, P)


def test_f_inf_peak_is_one_at_mode():
    assert f_inf(MODE, P) == pytest.approx(1.0, abs=1e-12)
    assert MODE == pytest.approx(-0.73, abs=0.01)


def test_mode_matches_numeric_maximum():
    # independent oracle: scipy's type-I generalized logistic density
    dens = lambda s: -stats.genlogistic.pdf(s, P.inf_shape, loc=P.inf_loc, scale=P.inf_scale)
    grid = np.linspace(-10, 10, 200001)
    assert grid[np.argmin(dens(grid))] == pytest.approx(MODE, abs=1e-3)
    res = optimize.minimize_scalar(dens, bounds=(-10, 10), method="bounded", options={"xatol": 1e-10})
    assert res.x == pytest.approx(MODE, abs=1e-6)


def test_f_inf_shape_matches_scipy_density():
    s = np.linspace(-10, 10, 41)
    pdf = stats.genlogistic.pdf(s, P.inf_shape, loc=P.inf_loc, scale=P.inf_scale)
    peak = stats.genlogistic.pdf(MODE, P.inf_shape, loc=P.inf_loc, scale=P.inf_scale)
    np.testing.assert_allclose(f_inf(s, P), pdf / peak, rtol=1e-12)


def test_f_inf_unimodal_and_before_onset_smaller():
    assert f_inf(-10, P) < f_inf(0, P)
    v = f_inf(np.linspace(-10, 10, 20001), P)
    interior = (v[1:-1] > v[:-2]) & (v[1:-1] > v[2:])
    assert interior.sum() == 1
    assert v.max() <= 1.0 + 1e-12


def test_inf_tau_does_not_change_profile():
    assert f_inf(2.0, P.with_(inf_tau=99.0)) == f_inf(2.0, P)


@pytest.mark.parametrize("tau, d, expected", [(0.0, 1.0, 0.0), (15.0, 1.0, 15.0), (30.0, 2.0, 7.5)])
def test_hazard_examples(tau, d, expected):
    assert hazard(tau, d, MODE, P) == pytest.approx(expected, rel=1e-12)


def test_hazard_rejects_negative_duration():
    with pytest.raises(ValueError):
        hazard(-1.0, 1.0, 0.0, P)


def test_infection_prob_examples():
    assert infection_prob(0.0, P) == 0.0
    assert infection_prob(15.0, P) == pytest.approx(-math.expm1(-4.65e-5), rel=1e-14)
    assert infection_prob(15.0, P) == pytest.approx(4.6499e-5, rel=1e-4)
    lam = SimParams(lam=0.5)
    assert infection_prob(1.0, lam.with_(taylor_terms=4)) == pytest.approx(
        1 - (1 - 0.5 + 0.125 - 0.5**3 / 6), abs=1e-15)
    assert infection_prob(1.0, lam.with_(taylor_terms=4)) == pytest.approx(0.3958333333, abs=1e-9)
    assert infection_prob(1.0, SimParams(lam=0.3, taylor_terms=2)) == pytest.approx(0.3, abs=1e-15)


def test_infection_prob_errors():
    with pytest.raises(ValueError):
        infection_prob(-1.0, P)
    with pytest.raises(ValueError):
        infection_prob(1.0, SimParams(lam=None))


def test_taylor_clamped_to_unit_interval():
    # two terms give p = lambda * s, which exceeds 1 for lambda * s > 1
    assert infection_prob(5.0, SimParams(lam=1.0, taylor_terms=2)) == 1.0
    # three terms: 1 - (1 - x + x^2/2) is negative for x > 2
    assert infection_prob(5.0, SimParams(lam=1.0, taylor_terms=3)) == 0.0


def test_taylor_converges_monotonically_in_terms():
    x = np.linspace(0.0, 1.0, 101)
    exact = -np.expm1(-x)
    errs = [np.abs(infection_prob(x, SimParams(lam=1.0, taylor_terms=t)) - exact).max()
            for t in (2, 4, 6, 8, 16)]
    assert all(a > b for a, b in zip(errs, errs[1:-1]))
    assert errs[-1] < 1e-13


def test_taylor_exp_partial_sums():
    assert taylor_exp(2.0, 1) == 1.0
    assert taylor_exp(2.0, 3) == 1 + 2 + 2


def test_bag_infection_prob_examples():
    assert bag_infection_prob([], P) == 0.0
    assert bag_infection_prob([], P.with_(p0=0.1)) == pytest.approx(0.1, abs=1e-15)
    assert bag_infection_prob([20.0], P) == pytest.approx(infection_prob(20.0, P), rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1e5), max_size=20), st.floats(0, 0.99), st.floats(1e-8, 1e-3))
def test_bag_prob_matches_closed_form(hazards, p0, lam):
    params = SimParams(lam=lam, p0=p0)
    with mpmath.workdps(50):
        log_escape = mpmath.log1p(-mpmath.mpf(p0)) - mpmath.mpf(lam) * mpmath.fsum(hazards)
        expected = float(-mpmath.expm1(log_escape))
    got = bag_infection_prob(hazards, params)
    assert got == pytest.approx(expected, rel=1e-12, abs=1e-300)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=10), st.integers(1, 10))
def test_bag_prob_taylor_is_product_of_escapes(hazards, t):
    params = SimParams(lam=0.1, taylor_terms=t)
    expected = 1 - np.prod([1 - infection_prob(h, params) for h in hazards])
    assert bag_infection_prob(hazards, params) == pytest.approx(expected, abs=1e-12)


def test_attenuation_examples():
    assert distance_to_attenuation(1.0, P) == pytest.approx(math.exp(3.92), rel=1e-15)
    assert distance_to_attenuation(1.0, P) == pytest.approx(50.40, abs=0.005)
    assert distance_to_attenuation(2.0, P) == pytest.approx(50.4004 * 2**0.21, rel=1e-5)
    assert distance_to_attenuation(2.0, P) == pytest.approx(58.30, abs=0.01)
    a = [distance_to_attenuation(d, P) for d in (0.5, 1.0, 5.0)]
    assert a[0] < a[1] < a[2]
    with pytest.raises(ValueError):
        distance_to_attenuation(0.0, P)


@given(st.floats(1e-3, 1e3))
def test_attenuation_round_trip(d):
    assert attenuation_to_distance(distance_to_attenuation(d, P), P) == pytest.approx(d, rel=1e-9)


@given(st.floats(1e-3, 100), st.floats(1e-3, 100))
def test_f_dist_non_increasing(d1, d2):
    lo, hi = sorted((d1, d2))
    assert f_dist(lo, P) >= f_dist(hi, P)
    if hi <= 1.0:
        assert f_dist(hi, P) == 1.0


@given(st.floats(0, 100), st.floats(0, 10), st.floats(0.1, 5), st.floats(-10, 10))
def test_hazard_linear_in_duration(c, tau, d, s):
    assert hazard(c * tau, d, s, P) == pytest.approx(c * hazard(tau, d, s, P), rel=1e-12, abs=1e-300)


@pytest.mark.parametrize("field, value", [("d_min_sq", 0.0), ("inf_scale", -1.0), ("inf_shape", 0.0),
                                          ("p0", 1.5), ("taylor_terms", 0), ("lam", -1.0)])
def test_sim_params_validation_names_field(field, value):
    with pytest.raises(ConfigError, match=field if field != "lam" else "lambda"):
        SimParams(**{field: value})


def test_reference_lambda_preset():
    assert REFERENCE_LAMBDA == 3.1e-6
    assert SimParams().lam == REFERENCE_LAMBDA

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saddlelab.errors import ConfigurationError, UnsupportedConfiguration
from saddlelab.risk import (
    RiskFunction,
    estimate_smoothness,
    finite_diff_gradient,
    finite_diff_hessian,
    linear_risk,
    logistic_net_risk,
    quadratic_saddle,
    weighted_risk,
)

from conftest import (
    LOGISTIC_COUPLING,
    LOGISTIC_GRADSQ_AT_INIT,
    LOGISTIC_J_AT_INIT,
    LOGISTIC_MIN_VALUE,
    LOGISTIC_MINIMIZER,
)

coords = st.floats(-2.5, 2.5, allow_nan=False)


def test_quadratic_saddle_closed_form():
    q = quadratic_saddle([2.0, -0.5], tilt=[1.0, 0.0])
    w = np.array([1.0, 2.0])
    assert q.value(w) == pytest.approx(0.5 * (2.0 - 0.5 * 4.0) + 1.0)
    np.testing.assert_allclose(q.gradient(w), [3.0, -1.0])
    np.testing.assert_allclose(q.hessian(w), np.diag([2.0, -0.5]))
    assert q.lambda_min(w) == pytest.approx(-0.5)


def test_quadratic_rejects_zero_eigenvalue():
    with pytest.raises(ConfigurationError):
        quadratic_saddle([1.0, 0.0])


def test_quadratic_sample_gradients_are_unbiased(rng):
    q = quadratic_saddle([1.0, -1.0], noise_std=0.5)
    w = np.array([0.3, -0.2])
    g = q.sample_gradients(np.tile(w, (200_000, 1)), q.sample(rng, 200_000))
    se = g.std(axis=0) / math.sqrt(len(g))
    assert np.all(np.abs(g.mean(axis=0) - q.gradient(w)) < 4 * se)


def test_linear_risk_has_constant_gradient():
    r = linear_risk([1.0, -2.0])
    np.testing.assert_allclose(r.gradient(np.array([5.0, 5.0])), [1.0, -2.0])
    np.testing.assert_allclose(r.hessian(np.zeros(2)), np.zeros((2, 2)))


def test_logistic_reference_values(logistic):
    assert logistic.value(np.zeros(2)) == pytest.approx(math.log(2), abs=1e-12)
    assert logistic.params["coupling"] == pytest.approx(LOGISTIC_COUPLING, rel=1e-9)
    assert logistic.value(np.array([0.8, -0.8])) == pytest.approx(LOGISTIC_J_AT_INIT, rel=1e-9)
    g = logistic.gradient(np.array([0.8, -0.8]))
    assert g @ g == pytest.approx(LOGISTIC_GRADSQ_AT_INIT, rel=1e-6)
    assert logistic.value(LOGISTIC_MINIMIZER) == pytest.approx(LOGISTIC_MIN_VALUE, abs=1e-10)


def test_logistic_hessian_at_origin(logistic):
    c = LOGISTIC_COUPLING
    np.testing.assert_allclose(logistic.hessian(np.zeros(2)), [[0.1, -c], [-c, 0.1]], atol=1e-10)
    assert logistic.lambda_min(np.zeros(2)) == pytest.approx(0.1 - c, abs=1e-10)


def test_logistic_minimizers_are_symmetric(logistic):
    for w in (LOGISTIC_MINIMIZER, -LOGISTIC_MINIMIZER):
        assert np.linalg.norm(logistic.gradient(w)) < 1e-6
        assert logistic.lambda_min(w) > 0


def test_logistic_per_sample_gradients_average_to_gradient(logistic, rng):
    w = np.array([0.8, -0.8])
    n = 400_000
    g = logistic.sample_gradients(w, logistic.sample(rng, n))
    se = g.std(axis=0) / math.sqrt(n)
    assert np.all(np.abs(g.mean(axis=0) - logistic.gradient(w)) < 4 * se)


def test_logistic_sample_losses_average_to_value(logistic, rng):
    w = np.array([0.5, 1.2])
    losses = logistic.sample_losses(w, logistic.sample(rng, 400_000))
    assert abs(losses.mean() - logistic.value(w)) < 4 * losses.std() / math.sqrt(len(losses))


def test_logistic_rejects_wider_networks():
    with pytest.raises(UnsupportedConfiguration):
        logistic_net_risk(features=3)
    with pytest.raises(UnsupportedConfiguration):
        logistic_net_risk(hidden=2)


def test_no_sampler_raises():
    base = linear_risk([1.0])
    r = RiskFunction(dimension=1, value=base.value, gradient=base.gradient, hessian=base.hessian)
    assert not r.has_sampler
    with pytest.raises(UnsupportedConfiguration):
        r.sample(np.random.default_rng(0), 3)


@settings(max_examples=60, deadline=None)
@given(coords, coords)
def test_logistic_gradient_matches_finite_differences(w1, w2):
    risk = logistic_net_risk()
    w = np.array([w1, w2])
    g = risk.gradient(w)
    fd = finite_diff_gradient(risk.value, w)
    assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(g))


@settings(max_examples=60, deadline=None)
@given(coords, coords)
def test_logistic_hessian_matches_finite_differences(w1, w2):
    risk = logistic_net_risk()
    w = np.array([w1, w2])
    H = risk.hessian(w)
    fd = finite_diff_hessian(risk.gradient, w)
    assert np.linalg.norm(H - fd) <= 1e-4 * max(1.0, np.linalg.norm(H))


def test_smoothness_estimates_for_quadratic():
    q = quadratic_saddle([3.0, -1.0])
    s = estimate_smoothness(q, [-1, -1], [1, 1], points=11, pairs=50)
    assert s.delta == pytest.approx(3.0)
    assert s.rho_hess == pytest.approx(0.0, abs=1e-9)
    assert s.hetero_G == 0.0


def test_smoothness_heterogeneity_between_tilted_quadratics():
    a = quadratic_saddle([1.0, 1.0], tilt=[0.0, 0.0])
    b = quadratic_saddle([1.0, 1.0], tilt=[0.5, 0.0])
    s = estimate_smoothness([a, b], [-1, -1], [1, 1], points=5, pairs=10)
    assert s.hetero_G == pytest.approx(0.5)


def test_weighted_risk_mixes_values():
    a = quadratic_saddle([1.0, 1.0])
    b = linear_risk([1.0, 0.0])
    mix = weighted_risk([a, b], [0.25, 0.75])
    w = np.array([2.0, 0.0])
    assert mix.value(w) == pytest.approx(0.25 * a.value(w) + 0.75 * b.value(w))
    np.testing.assert_allclose(mix.gradient(w), 0.25 * a.gradient(w) + 0.75 * b.gradient(w))
    assert weighted_risk([a, a], [0.5, 0.5]) is a

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saddlelab.errors import ConfigurationError, UnsupportedConfiguration
from saddlelab.oracle import (
    FederatedOracle,
    cb_constant,
    covariance_lipschitz_probe,
    estimate_noise_stats,
    exact_oracle,
    federated_noise_constants,
    federated_oracle,
    fit_noise_bounds,
    minibatch_oracle,
    negative_curvature_noise,
    perturbed_oracle,
    sample_participants,
    sgd_oracle,
)
from saddlelab.risk import RiskFunction, linear_risk, quadratic_saddle

W = np.array([0.8, -0.8])


def test_cb_constant_values():
    assert cb_constant(1) == 1.0
    assert cb_constant(2) == 2.0
    assert cb_constant(10**6) == pytest.approx(3.0, abs=1e-5)
    with pytest.raises(ConfigurationError):
        cb_constant(0)


def test_federated_constants_formula():
    K, L, B, b4, s4, G = 50, 10, 2, 0.3, 0.7, 0.5
    cb = 3 - 2 / B
    beta4 = 64 * (K / L) ** 3 * cb * b4 / B**2 + 128 * (K - L) / K
    sigma4 = beta4 * G**4 + 8 * (K / L) ** 3 * cb * s4 / B**2
    assert federated_noise_constants(K, L, B, b4, s4, G) == pytest.approx((beta4, sigma4))


def test_federated_constants_shrink_with_participation_and_batch():
    b = [federated_noise_constants(50, L, 1, 1.0, 1.0, 0.1)[1] for L in (5, 10, 25, 50)]
    assert all(x > y for x, y in zip(b, b[1:]))
    c = [federated_noise_constants(50, 10, B, 1.0, 1.0, 0.1)[1] for B in (1, 2, 8)]
    assert all(x > y for x, y in zip(c, c[1:]))
    assert federated_noise_constants(50, 50, 1, 1.0, 1.0, 0.1)[0] == pytest.approx(64.0)


def test_exact_oracle_is_noise_free(logistic):
    st_ = estimate_noise_stats(exact_oracle(logistic), W, 100, np.random.default_rng(0))
    assert np.all(st_.mean == 0) and np.all(st_.covariance == 0)


def test_sgd_requires_sampler():
    base = linear_risk([1.0])
    bare = RiskFunction(dimension=1, value=base.value, gradient=base.gradient, hessian=base.hessian)
    with pytest.raises(UnsupportedConfiguration):
        sgd_oracle(bare)
    with pytest.raises(UnsupportedConfiguration):
        minibatch_oracle(bare, 4)


@pytest.mark.parametrize("kind", ["sgd", "minibatch", "perturbed", "federated"])
def test_oracles_are_unbiased(logistic, kind):
    sgd = sgd_oracle(logistic)
    oracle = {
        "sgd": sgd,
        "minibatch": minibatch_oracle(logistic, 5),
        "perturbed": perturbed_oracle(sgd, np.diag([1.0, 0.5])),
        "federated": federated_oracle([logistic] * 20, 5, 2),
    }[kind]
    st_ = estimate_noise_stats(oracle, W, 100_000, np.random.default_rng(7))
    assert np.all(np.abs(st_.mean) <= 4 * st_.stderr)


def test_heterogeneous_federated_oracle_is_unbiased_for_weighted_risk():
    agents = [quadratic_saddle([1.0, 2.0], noise_std=0.3, tilt=[k * 0.1, -k * 0.05]) for k in range(8)]
    p = np.linspace(1, 2, 8)
    p /= p.sum()
    oracle = federated_oracle(agents, 3, 2, p)
    w = np.array([0.4, -0.1])
    want = sum(pk * a.gradient(w) for pk, a in zip(p, agents))
    np.testing.assert_allclose(oracle.target.gradient(w), want)
    draws = oracle.draw_batch(np.tile(w, (100_000, 1)), np.random.default_rng(3))
    se = draws.std(axis=0) / math.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - want) <= 4 * se)


@pytest.mark.parametrize("B", [2, 10, 50])
def test_minibatch_covariance_scales_as_one_over_B(logistic, B):
    rng = np.random.default_rng(B)
    r1 = estimate_noise_stats(sgd_oracle(logistic), W, 100_000, rng).covariance
    rB = estimate_noise_stats(minibatch_oracle(logistic, B), W, 100_000, rng).covariance
    assert B * np.trace(rB) / np.trace(r1) == pytest.approx(1.0, rel=0.2)


def test_perturbed_covariance_is_additive(logistic):
    rng = np.random.default_rng(11)
    Rv = np.array([[1.0, 0.3], [0.3, 0.5]])
    base = sgd_oracle(logistic)
    rb = estimate_noise_stats(base, W, 100_000, rng).covariance
    rp = estimate_noise_stats(perturbed_oracle(base, Rv), W, 100_000, rng).covariance
    assert np.linalg.norm(rp - (rb + Rv)) / np.linalg.norm(rb + Rv) <= 0.05


def test_perturbed_oracle_validates_covariance(logistic):
    base = sgd_oracle(logistic)
    with pytest.raises(ConfigurationError):
        perturbed_oracle(base, np.eye(3))
    with pytest.raises(ConfigurationError):
        perturbed_oracle(base, np.array([[1.0, 0.2], [0.0, 1.0]]))
    with pytest.raises(ConfigurationError):
        perturbed_oracle(base, np.zeros((2, 2)))


def test_federated_validation(logistic):
    with pytest.raises(ConfigurationError):
        FederatedOracle([logistic] * 4, 5)
    with pytest.raises(ConfigurationError):
        FederatedOracle([logistic] * 4, 0)
    with pytest.raises(ConfigurationError):
        FederatedOracle([logistic] * 4, 2, B=0)
    with pytest.raises(ConfigurationError):
        FederatedOracle([logistic] * 4, 2, p=[0.5, 0.5, 0.0, 0.0])
    with pytest.raises(ConfigurationError):
        FederatedOracle([logistic] * 4, 2, p=[0.3, 0.3, 0.3, 0.3])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.data())
def test_sample_participants_are_distinct(K, data):
    L = data.draw(st.integers(1, K))
    rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
    one = sample_participants(K, L, rng)
    assert len(set(one.tolist())) == L and one.min() >= 0 and one.max() < K
    many = sample_participants(K, L, rng, rounds=20)
    assert many.shape == (20, L)
    assert all(len(set(row.tolist())) == L for row in many)


def test_sample_participants_inclusion_is_uniform():
    K, L, n = 12, 4, 60_000
    idx = sample_participants(K, L, np.random.default_rng(5), rounds=n)
    counts = np.bincount(idx.ravel(), minlength=K)
    p = L / K
    se = math.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) <= 4 * se)


def test_negative_curvature_noise_projects_onto_unstable_space():
    q = quadratic_saddle([1.0, -2.0])
    cov = np.array([[5.0, 0.0], [0.0, 0.25]])
    assert negative_curvature_noise(q, np.zeros(2), cov) == pytest.approx(0.25)
    assert negative_curvature_noise(quadratic_saddle([1.0, 1.0]), np.zeros(2), cov) == 0.0


def test_fit_noise_bounds_envelope_holds_at_probes(logistic):
    rng = np.random.default_rng(2)
    pts = np.array([[0.0, 0.0], [0.8, -0.8], [1.5, 1.0], [-1.0, 0.5]])
    oracle = perturbed_oracle(sgd_oracle(logistic), np.eye(2))
    fit = fit_noise_bounds(oracle, pts, 20_000, rng)
    assert fit["sigma_sq"] >= 2.0 * 0.9  # the perturbation alone contributes trace(I) = 2
    for w in pts:
        st_ = estimate_noise_stats(oracle, w, 20_000, rng)
        g = logistic.gradient(w)
        assert st_.second_moment <= fit["beta_sq"] * (g @ g) + fit["sigma_sq"] + 0.1


def test_covariance_lipschitz_probe_on_constant_noise():
    q = quadratic_saddle([1.0, -1.0], noise_std=1.0)
    pairs = [(np.zeros(2), np.ones(2)), (np.array([1.0, 0.0]), np.array([0.0, 2.0]))]
    assert covariance_lipschitz_probe(sgd_oracle(q), pairs, 50_000, np.random.default_rng(0)) < 0.05


def test_minibatch_of_oracle_averages_independent_draws():
    q = quadratic_saddle([1.0, -1.0])
    agent = perturbed_oracle(exact_oracle(q), np.eye(2))
    avg = minibatch_oracle(agent, 25)
    cov = estimate_noise_stats(avg, np.zeros(2), 50_000, np.random.default_rng(4)).covariance
    np.testing.assert_allclose(cov, np.eye(2) / 25, atol=4e-3)

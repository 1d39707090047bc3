import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saddlelab.errors import ConfigurationError
from saddlelab.landscape import (
    ClassifierConfig,
    arrival_budget,
    classify,
    escape_time_bound,
    g_threshold,
    symmetric_eigen,
)
from saddlelab.risk import quadratic_saddle


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 16), st.integers(0, 2**32 - 1))
def test_jacobi_reconstructs_random_symmetric(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, n))
    H = X + X.T
    vals, V = symmetric_eigen(H)
    assert np.all(np.diff(vals) >= 0)
    np.testing.assert_allclose(V.T @ V, np.eye(n), atol=1e-10)
    assert np.max(np.abs(V @ np.diag(vals) @ V.T - H)) <= 1e-10
    # cross-check against LAPACK
    np.testing.assert_allclose(vals, np.linalg.eigvalsh(H), atol=1e-10)


def test_jacobi_handles_degenerate_and_trivial_inputs():
    vals, V = symmetric_eigen(np.eye(4) * 2.0)
    np.testing.assert_allclose(vals, 2.0)
    vals, _ = symmetric_eigen(np.zeros((3, 3)))
    np.testing.assert_allclose(vals, 0.0)
    vals, _ = symmetric_eigen([[5.0]])
    assert vals[0] == 5.0


def test_jacobi_rejects_bad_input():
    with pytest.raises(ConfigurationError):
        symmetric_eigen(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ConfigurationError):
        symmetric_eigen(np.zeros((2, 3)))
    with pytest.raises(ConfigurationError):
        symmetric_eigen(np.eye(65))


def test_threshold_and_constants():
    cfg = ClassifierConfig(mu=0.05, tau=0.1, pi=0.1, delta=2.0, beta_sq=0.5, sigma_sq=3.0)
    c1 = 1 - 0.05 * 2.0 / 2 * 1.5
    c2 = 2.0 / 2 * 3.0
    assert cfg.c1 == pytest.approx(c1)
    assert cfg.c2 == pytest.approx(c2)
    assert cfg.threshold == pytest.approx(0.05 * c2 / c1 * 11)
    assert g_threshold(0.05, c1, c2, 0.1) == pytest.approx(cfg.threshold)
    dec = ClassifierConfig(mu=0.05, delta=2.0, sigma_sq=3.0, regime="decentralized")
    assert dec.c1 == pytest.approx(0.5 * (1 - 2 * 0.05 * 2.0))


def test_step_size_preconditions_name_the_inequality():
    with pytest.raises(ConfigurationError, match=r"mu <= 2/\(delta\(1\+beta\^2\)\)"):
        ClassifierConfig(mu=1.5, delta=1.0, beta_sq=0.5)
    with pytest.raises(ConfigurationError, match=r"mu < 1/\(2 delta\)"):
        ClassifierConfig(mu=0.5, delta=1.0, regime="decentralized")
    with pytest.raises(ConfigurationError):
        ClassifierConfig(mu=0.1, pi=1.0)
    with pytest.raises(ConfigurationError):
        ClassifierConfig(mu=0.1, regime="ring")


def test_with_mu_keeps_constants():
    cfg = ClassifierConfig(mu=0.1, delta=1.3, sigma_sq=0.4, provenance={"delta": "analytic"})
    small = cfg.with_mu(0.01)
    assert small.mu == 0.01 and small.delta == 1.3 and small.provenance == {"delta": "analytic"}
    assert small.threshold < cfg.threshold


def test_threshold_boundary_is_inclusive_for_G():
    q = quadratic_saddle([1.0, 1.0])
    cfg = ClassifierConfig(mu=0.1, delta=1.0, sigma_sq=1.0)
    r = math.sqrt(cfg.threshold)
    assert classify(q, np.array([r, 0.0]), cfg).label == "G"
    assert classify(q, np.array([r * (1 - 1e-9), 0.0]), cfg).label == "M"


def test_origin_of_saddle_is_H_and_bowl_has_no_H():
    cfg = ClassifierConfig(mu=0.1, tau=0.5, delta=1.0, sigma_sq=1.0)
    lab = classify(quadratic_saddle([1.0, -1.0]), np.zeros(2), cfg)
    assert lab.label == "H" and lab.lambda_min == pytest.approx(-1.0)
    bowl = quadratic_saddle([1.0, 2.0])
    pts = np.random.default_rng(1).uniform(-3, 3, (500, 2))
    assert all(classify(bowl, w, cfg).label != "H" for w in pts)


def test_tau_boundary_is_inclusive_for_H():
    cfg = ClassifierConfig(mu=0.1, tau=0.5, delta=1.0, sigma_sq=1.0)
    assert classify(quadratic_saddle([1.0, -0.5]), np.zeros(2), cfg).label == "H"
    assert classify(quadratic_saddle([1.0, -0.4999]), np.zeros(2), cfg).label == "M"


def test_escape_time_bound_formula():
    got = escape_time_bound(2, 2.0, 1.0, 0.01, 0.5)
    assert got == pytest.approx(math.log(9.0) / math.log(1.01))


def test_escape_time_bound_requires_noise_floor():
    with pytest.raises(ConfigurationError, match="sigma_l"):
        escape_time_bound(2, 2.0, 0.0, 0.01, 0.5)


def test_escape_time_grows_as_mu_shrinks():
    times = [escape_time_bound(2, 2.0, 1.0, mu, 0.5) for mu in (0.02, 0.01, 0.005)]
    assert times[0] < times[1] < times[2]


def test_arrival_budget_formula():
    cfg = ClassifierConfig(mu=0.05, tau=0.1, pi=0.1, delta=1.0, sigma_sq=2.0)
    assert arrival_budget(1.0, 0.5, cfg, 100.0) == pytest.approx(0.5 / (0.0025 * 1.0 * 0.1) * 100.0)
    with pytest.raises(ConfigurationError):
        arrival_budget(0.1, 0.5, cfg, 100.0)

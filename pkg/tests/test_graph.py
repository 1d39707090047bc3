import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saddlelab.errors import ConfigurationError
from saddlelab.graph import (
    combination_matrix,
    hastings_matrix,
    mixing_rate,
    perron_vector,
    random_connected_graph,
    random_geometric_graph,
    read_edge_list,
    ring_graph,
    strongly_connected_components,
    tuned_geometric_graph,
    uniform_neighbor_matrix,
    write_edge_list,
)


def random_column_stochastic(K, rng, density=0.15):
    """Directed cycle plus random arcs and self-loops, random positive weights."""
    S = rng.random((K, K)) < density
    for k in range(K):
        S[(k + 1) % K, k] = True
    S[np.arange(K), np.arange(K)] |= rng.random(K) < 0.5
    S[0, 0] = True
    A = np.where(S, rng.uniform(0.05, 1.0, (K, K)), 0.0)
    return A / A.sum(axis=0)


def eig_oracle_rate(A, p):
    # independent reference: LAPACK spectrum of the deflated matrix
    return float(np.max(np.abs(np.linalg.eigvals(A - np.outer(p, np.ones(len(p)))))))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 50), st.integers(0, 2**31))
def test_perron_relation_on_random_directed_networks(K, seed):
    A = random_column_stochastic(K, np.random.default_rng(seed))
    cm = combination_matrix(A)
    p = cm.perron
    assert np.linalg.norm(A @ p - p) <= 1e-10
    assert abs(p.sum() - 1) <= 1e-12
    assert p.min() > 0


def test_perron_matches_dominant_eigenvector():
    A = random_column_stochastic(20, np.random.default_rng(3))
    vals, vecs = np.linalg.eig(A)
    v = np.real(vecs[:, np.argmax(np.real(vals))])
    v /= v.sum()
    np.testing.assert_allclose(perron_vector(A), v, atol=1e-10)


def test_doubly_stochastic_gives_uniform_perron():
    adj = random_connected_graph(30, np.random.default_rng(2), 0.2)
    cm = hastings_matrix(adj, np.full(30, 1 / 30))
    assert cm.doubly_stochastic
    assert np.max(np.abs(cm.perron - 1 / 30)) <= 1e-12


def test_hastings_rule_hits_target_perron_vector():
    rng = np.random.default_rng(8)
    adj = random_geometric_graph(25, 0.35, rng)
    p = rng.uniform(0.5, 2.0, 25)
    p /= p.sum()
    cm = hastings_matrix(adj, p)
    np.testing.assert_allclose(cm.perron, p, atol=1e-10)
    assert np.all(cm.A >= 0)


def test_uniform_matrix_columns_and_neighborhoods():
    cm = uniform_neighbor_matrix(ring_graph(6))
    np.testing.assert_allclose(cm.A.sum(axis=0), 1.0)
    assert cm.neighborhoods[0] == (0, 1, 5)
    assert np.all(cm.A[[0, 1, 5], 0] == pytest.approx(1 / 3))


@pytest.mark.parametrize("seed", range(5))
def test_mixing_rate_matches_eigenvalue_oracle(seed):
    rng = np.random.default_rng(seed)
    A = random_column_stochastic(15, rng, 0.25)
    cm = combination_matrix(A)
    assert mixing_rate(cm) == pytest.approx(eig_oracle_rate(cm.A, cm.perron), abs=1e-6)


def test_mixing_rate_of_symmetric_graph():
    cm = uniform_neighbor_matrix(random_connected_graph(20, np.random.default_rng(4), 0.1))
    assert mixing_rate(cm) == pytest.approx(eig_oracle_rate(cm.A, cm.perron), abs=1e-6)


def test_complete_uniform_graph_mixes_in_one_step():
    K = 7
    cm = uniform_neighbor_matrix(np.ones((K, K), bool))
    assert mixing_rate(cm) == pytest.approx(0.0, abs=1e-12)


def test_tuned_graph_hits_target_rate():
    adj, cm, rate, (seed, radius) = tuned_geometric_graph(50)
    assert cm.K == 50
    assert abs(rate - 0.956) <= 0.01
    assert rate == pytest.approx(eig_oracle_rate(cm.A, cm.perron), abs=1e-6)


def test_rejects_invalid_matrices():
    with pytest.raises(ConfigurationError, match="not strongly connected"):
        combination_matrix(np.eye(3))
    with pytest.raises(ConfigurationError, match="columns must sum"):
        combination_matrix(np.full((3, 3), 0.3))
    with pytest.raises(ConfigurationError, match="non-negative"):
        combination_matrix(np.array([[1.5, 0.5], [-0.5, 0.5]]))
    with pytest.raises(ConfigurationError, match="self-loop"):
        combination_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))


def test_disconnected_graph_lists_components():
    adj = np.zeros((4, 4), bool)
    adj[0, 1] = adj[1, 0] = adj[2, 3] = adj[3, 2] = True
    with pytest.raises(ConfigurationError, match=r"components"):
        uniform_neighbor_matrix(adj)


def test_strongly_connected_components_directed():
    S = np.zeros((4, 4))
    S[1, 0] = S[0, 1] = 1  # 0 <-> 1
    S[2, 1] = 1  # 1 -> 2 only
    S[3, 2] = S[2, 3] = 1  # 2 <-> 3
    comps = sorted(sorted(c) for c in strongly_connected_components(S))
    assert comps == [[0, 1], [2, 3]]


def test_edge_list_round_trip(tmp_path):
    adj = random_connected_graph(12, np.random.default_rng(1), 0.3)
    path = tmp_path / "g.txt"
    write_edge_list(adj, path)
    back = read_edge_list(path)
    np.testing.assert_array_equal(back, adj | adj.T)


def test_edge_list_errors(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("3\n0 1\n")
    with pytest.raises(ConfigurationError):
        read_edge_list(bad)
    bad.write_text("K 3\n0 7\n")
    with pytest.raises(ConfigurationError, match="out of range"):
        read_edge_list(bad)

"""Left-stochastic combination matrices over strongly connected graphs."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ConvergenceError

__all__ = [
    "CombinationMatrix",
    "combination_matrix",
    "uniform_neighbor_matrix",
    "hastings_matrix",
    "perron_vector",
    "mixing_rate",
    "strongly_connected_components",
    "random_geometric_graph",
    "random_connected_graph",
    "ring_graph",
    "tuned_geometric_graph",
    "read_edge_list",
    "write_edge_list",
]

PERRON_TOL = 1e-10


def _as_adjacency(adjacency) -> np.ndarray:
    adj = np.asarray(adjacency, dtype=bool)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ConfigurationError(f"adjacency must be square, got shape {adj.shape}")
    return adj


def strongly_connected_components(support) -> list[list[int]]:
    """Tarjan's algorithm on the directed graph with an edge ``l -> k`` wherever
    ``support[l, k]`` is nonzero (information flows from ``l`` into ``k``)."""
    S = np.asarray(support) != 0
    K = S.shape[0]
    succ = [np.flatnonzero(S[v]).tolist() for v in range(K)]
    index = [-1] * K
    low = [0] * K
    on_stack = [False] * K
    stack: list[int] = []
    comps: list[list[int]] = []
    counter = 0
    for root in range(K):
        if index[root] >= 0:
            continue
        # iterative DFS; each frame is (node, next successor position)
        work = [(root, 0)]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        while work:
            v, i = work[-1]
            if i < len(succ[v]):
                work[-1] = (v, i + 1)
                u = succ[v][i]
                if index[u] < 0:
                    index[u] = low[u] = counter
                    counter += 1
                    stack.append(u)
                    on_stack[u] = True
                    work.append((u, 0))
                elif on_stack[u]:
                    low[v] = min(low[v], index[u])
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    u = stack.pop()
                    on_stack[u] = False
                    comp.append(u)
                    if u == v:
                        break
                comps.append(sorted(comp))
    return comps


@dataclass(frozen=True, eq=False)
class CombinationMatrix:
    """Column-stochastic ``A = [a_lk]``; column ``k`` holds the weights agent
    ``k`` assigns to its neighbors ``l``."""

    A: np.ndarray
    neighborhoods: tuple
    perron: np.ndarray

    @property
    def K(self) -> int:
        return self.A.shape[0]

    @property
    def doubly_stochastic(self) -> bool:
        return bool(np.allclose(self.A.sum(axis=1), 1.0, atol=1e-14, rtol=0))

    def check(self, tol: float = PERRON_TOL) -> None:
        _validate(self.A)
        p = self.perron
        if np.max(np.abs(self.A @ p - p)) > tol or abs(p.sum() - 1.0) > 1e-12 or p.min() <= 0:
            raise ConfigurationError("Perron relation Ap = p, 1^T p = 1, p > 0 does not hold")


def _validate(A: np.ndarray) -> None:
    K = A.shape[0]
    if A.shape != (K, K):
        raise ConfigurationError("combination matrix must be square")
    if np.any(A < 0):
        raise ConfigurationError("combination weights must be non-negative")
    cols = A.sum(axis=0)
    if np.max(np.abs(cols - 1.0)) > 1e-12:
        raise ConfigurationError(f"columns must sum to one (worst deviation {np.max(np.abs(cols - 1.0)):.3g})")
    if not np.any(np.diag(A) > 0):
        raise ConfigurationError("at least one agent needs a self-loop a_kk > 0")
    comps = strongly_connected_components(A)
    if len(comps) > 1:
        raise ConfigurationError(f"weighted graph is not strongly connected; components: {comps}")


def combination_matrix(A) -> CombinationMatrix:
    """Validate ``A`` and attach neighborhoods and its Perron vector."""
    A = np.array(A, dtype=float)
    if A.ndim != 2:
        raise ConfigurationError("combination matrix must be two-dimensional")
    _validate(A)
    nbhd = tuple(tuple(np.flatnonzero(A[:, k]).tolist()) for k in range(A.shape[0]))
    A.setflags(write=False)
    p = perron_vector(A)
    p.setflags(write=False)
    cm = CombinationMatrix(A=A, neighborhoods=nbhd, perron=p)
    cm.check()
    return cm


def _neighborhoods(adj: np.ndarray, self_loops: bool) -> list[np.ndarray]:
    K = adj.shape[0]
    sym = adj | adj.T
    out = []
    for k in range(K):
        nb = sym[:, k].copy()
        if self_loops:
            nb[k] = True
        out.append(np.flatnonzero(nb))
    return out


def _require_connected(adj: np.ndarray) -> None:
    sym = (adj | adj.T).astype(float)
    np.fill_diagonal(sym, 1.0)
    comps = strongly_connected_components(sym)
    if len(comps) > 1:
        raise ConfigurationError(f"graph is disconnected; components: {comps}")


def uniform_neighbor_matrix(adjacency, self_loops: bool = True) -> CombinationMatrix:
    """Equal weight ``1/|N_k|`` on every member of each neighborhood."""
    adj = _as_adjacency(adjacency)
    _require_connected(adj)
    K = adj.shape[0]
    A = np.zeros((K, K))
    for k, nb in enumerate(_neighborhoods(adj, self_loops)):
        if len(nb) == 0:
            raise ConfigurationError(f"agent {k} has an empty neighborhood")
        A[nb, k] = 1.0 / len(nb)
    return combination_matrix(A)


def hastings_matrix(adjacency, p) -> CombinationMatrix:
    """Combination matrix with prescribed Perron vector ``p``.

    For neighbors ``l != k``: ``a_lk = min(1/|N_k|, p_l / (p_k |N_l|))``; the
    remainder of column ``k`` goes to the self-loop ``a_kk``. Neighborhoods
    include the agent itself.
    """
    adj = _as_adjacency(adjacency)
    _require_connected(adj)
    p = np.asarray(p, dtype=float)
    K = adj.shape[0]
    if p.shape != (K,) or np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ConfigurationError("p must hold K positive entries summing to one")
    nbs = _neighborhoods(adj, True)
    size = np.array([len(nb) for nb in nbs], dtype=float)
    A = np.zeros((K, K))
    for k, nb in enumerate(nbs):
        for l in nb:
            if l != k:
                A[l, k] = min(1.0 / size[k], p[l] / (p[k] * size[l]))
        A[k, k] = 1.0 - A[:, k].sum()
    return combination_matrix(A)


def perron_vector(A, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Power iteration from the uniform vector, renormalized to unit 1-norm,
    then polished by a least-squares solve of ``(A - I) p = 0, 1^T p = 1``."""
    A = A.A if isinstance(A, CombinationMatrix) else np.asarray(A, dtype=float)
    K = A.shape[0]
    p = np.full(K, 1.0 / K)
    for _ in range(max_iter):
        nxt = A @ p
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - p)) < tol:
            p = nxt
            break
        p = nxt
    else:
        raise ConvergenceError(
            f"Perron power iteration did not converge in {max_iter} iterations; "
            "the spectral gap of A is suspiciously small (or A is periodic)"
        )
    residual = np.max(np.abs(A @ p - p))
    # one least-squares polish: the power-iteration stopping rule leaves a
    # residual near tol, which the centroid identity would accumulate per step
    M = np.vstack([A - np.eye(K), np.ones((1, K))])
    rhs = np.zeros(K + 1)
    rhs[-1] = 1.0
    q = np.linalg.lstsq(M, rhs, rcond=None)[0]
    q_res = np.max(np.abs(A @ q - q))
    if np.all(q > 0) and q_res < residual:
        p, residual = q / q.sum(), q_res
    if residual > PERRON_TOL:
        raise ConvergenceError(f"Perron residual {residual:.3g} exceeds {PERRON_TOL}")
    return p


def mixing_rate(
    A,
    restarts: int = 200,
    rng: np.random.Generator | None = None,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> float:
    """Spectral radius of the deflated matrix ``A - p 1^T``.

    Subspace iteration on ``min(restarts, K)`` random start vectors with a
    Rayleigh-Ritz step, so complex or sign-alternating dominant eigenvalues
    (common on directed graphs) are resolved rather than oscillating.
    """
    cm = A if isinstance(A, CombinationMatrix) else combination_matrix(A)
    K = cm.K
    D = cm.A - np.outer(cm.perron, np.ones(K))
    if K == 1:
        return 0.0
    rng = np.random.default_rng(0) if rng is None else rng
    X, _ = np.linalg.qr(rng.standard_normal((K, min(restarts, K))))
    prev = None
    stable = 0
    for _ in range(max_iter):
        Y = D @ X
        est = float(np.max(np.abs(np.linalg.eigvals(X.T @ Y))))
        if est < 1e-150:
            return 0.0
        X, _ = np.linalg.qr(Y)
        if prev is not None and abs(est - prev) <= tol * max(est, 1e-300):
            stable += 1
            if stable >= 5:
                return est
        else:
            stable = 0
        prev = est
    raise ConvergenceError(f"mixing-rate subspace iteration did not settle in {max_iter} iterations")


def ring_graph(K: int) -> np.ndarray:
    adj = np.zeros((K, K), dtype=bool)
    for k in range(K):
        adj[k, (k + 1) % K] = adj[(k + 1) % K, k] = True
    np.fill_diagonal(adj, False)
    return adj


def random_geometric_graph(K: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    """Nodes uniform in the unit square, edges between nodes within ``radius``."""
    pts = rng.random((K, 2))
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    adj = d <= radius
    np.fill_diagonal(adj, False)
    return adj


def random_connected_graph(K: int, rng: np.random.Generator, extra_edge_prob: float = 0.1) -> np.ndarray:
    """Random spanning tree plus independent extra edges; always connected."""
    adj = np.zeros((K, K), dtype=bool)
    order = rng.permutation(K)
    for i in range(1, K):
        j = order[rng.integers(0, i)]
        adj[order[i], j] = adj[j, order[i]] = True
    extra = np.triu(rng.random((K, K)) < extra_edge_prob, 1)
    adj |= extra | extra.T
    np.fill_diagonal(adj, False)
    return adj


def _is_connected(adj: np.ndarray) -> bool:
    sym = (adj | adj.T).astype(float)
    np.fill_diagonal(sym, 1.0)
    return len(strongly_connected_components(sym)) == 1


def tuned_geometric_graph(
    K: int = 50,
    target: float = 0.956,
    band: float = 0.01,
    seed: int = 0,
    radii=None,
    max_seeds: int = 200,
):
    """Search seeds and radii of a random geometric graph until the uniform
    neighbor matrix has mixing rate within ``target +- band``.

    Returns ``(adjacency, combination_matrix, rate, (seed, radius))``.
    """
    radii = np.linspace(0.15, 0.5, 36) if radii is None else radii
    for s in range(seed, seed + max_seeds):
        for r in radii:
            adj = random_geometric_graph(K, float(r), np.random.default_rng(s))
            if not _is_connected(adj):
                continue
            cm = uniform_neighbor_matrix(adj)
            rate = mixing_rate(cm, restarts=20)
            if abs(rate - target) <= band:
                return adj, cm, rate, (s, float(r))
    raise ConvergenceError(f"no geometric graph with mixing rate {target} +- {band} found")


def read_edge_list(path) -> np.ndarray:
    """Read ``K <count>`` followed by zero-indexed ``u v`` lines."""
    lines = [ln.split("#", 1)[0].strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines or lines[0].split()[0] != "K":
        raise ConfigurationError(f"{path}: first line must be 'K <count>'")
    try:
        K = int(lines[0].split()[1])
    except (IndexError, ValueError):
        raise ConfigurationError(f"{path}: malformed header {lines[0]!r}") from None
    adj = np.zeros((K, K), dtype=bool)
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 2:
            raise ConfigurationError(f"{path}: malformed edge line {ln!r}")
        u, v = int(parts[0]), int(parts[1])
        if not (0 <= u < K and 0 <= v < K):
            raise ConfigurationError(f"{path}: edge {u} {v} out of range for K={K}")
        if u != v:
            adj[u, v] = adj[v, u] = True
    return adj


def write_edge_list(adjacency, path) -> None:
    adj = _as_adjacency(adjacency)
    K = adj.shape[0]
    sym = adj | adj.T
    rows = [f"K {K}"]
    for u in range(K):
        for v in range(u + 1, K):
            if sym[u, v]:
                rows.append(f"{u} {v}")
    Path(path).write_text("\n".join(rows) + "\n")

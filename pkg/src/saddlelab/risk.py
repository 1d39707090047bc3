"""Risk functions with exact derivatives and data samplers.

A :class:`RiskFunction` bundles the expected risk ``J(w)``, its gradient and
Hessian, and optionally a data sampler together with the per-sample loss
gradient ``grad Q(w; x)`` whose expectation over the sampler is ``grad J``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .errors import ConfigurationError, UnsupportedConfiguration

__all__ = [
    "RiskFunction",
    "SmoothnessConstants",
    "quadratic_saddle",
    "linear_risk",
    "logistic_net_risk",
    "finite_diff_gradient",
    "finite_diff_hessian",
    "estimate_smoothness",
    "default_fd_step",
    "weighted_risk",
]

QUADRATURE_NODES = 101


@dataclass(frozen=True, eq=False)
class RiskFunction:
    """Value/gradient/Hessian oracle for a risk ``J: R^M -> R``.

    ``sampler(rng, n)`` draws ``n`` i.i.d. data realizations and
    ``sample_gradients(W, data)`` returns the per-sample loss gradients, one
    row per realization. ``W`` is either a single parameter vector (shared by
    all samples) or an ``(n, M)`` array with one parameter vector per sample.
    """

    dimension: int
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    sampler: Callable[[np.random.Generator, int], Any] | None = None
    sample_gradients: Callable[[np.ndarray, Any], np.ndarray] | None = None
    sample_losses: Callable[[np.ndarray, Any], np.ndarray] | None = None
    name: str = "risk"
    params: dict = field(default_factory=dict)

    @property
    def has_sampler(self) -> bool:
        return self.sampler is not None and self.sample_gradients is not None

    def sample(self, rng: np.random.Generator, n: int = 1):
        if not self.has_sampler:
            raise UnsupportedConfiguration(f"{self.name} has no data sampler")
        return self.sampler(rng, n)

    def lambda_min(self, w) -> float:
        from .landscape import symmetric_eigen

        vals, _ = symmetric_eigen(self.hessian(np.asarray(w, dtype=float)))
        return float(vals[0])


@dataclass(frozen=True)
class SmoothnessConstants:
    delta: float
    rho_hess: float
    hetero_G: float = 0.0
    provenance: str = "estimated"


def quadratic_saddle(spectrum: Sequence[float], noise_std: float = 0.0, tilt=None) -> RiskFunction:
    """``J(w) = 1/2 sum_m spectrum_m w_m^2 (+ tilt^T w)``.

    With ``noise_std`` the sampler draws ``x ~ N(0, noise_std^2 I)`` and the
    per-sample gradient is ``spectrum * w + tilt + x``; ``noise_std=0`` gives a
    zero-variance sampler.
    """
    lam = np.asarray(spectrum, dtype=float).ravel()
    M = lam.size
    if M < 1:
        raise ConfigurationError("spectrum must have at least one entry")
    if not np.all(np.isfinite(lam)):
        raise ConfigurationError("spectrum entries must be finite")
    if np.any(lam == 0.0):
        raise ConfigurationError("zero curvature entry: degenerate stationarity is not supported")
    if noise_std < 0:
        raise ConfigurationError("noise_std must be non-negative")
    b = np.zeros(M) if tilt is None else np.asarray(tilt, dtype=float).ravel()
    if b.shape != (M,):
        raise ConfigurationError("tilt must have the same length as spectrum")
    H = np.diag(lam)

    def value(w):
        w = np.asarray(w, dtype=float)
        return float(0.5 * np.dot(lam * w, w) + np.dot(b, w))

    def gradient(w):
        return lam * np.asarray(w, dtype=float) + b

    def hessian(w):
        return H.copy()

    def sampler(rng, n):
        if noise_std == 0.0:
            return np.zeros((n, M))
        return noise_std * rng.standard_normal((n, M))

    def sample_gradients(W, data):
        return lam * np.asarray(W, dtype=float) + b + data

    def sample_losses(W, data):
        W = np.atleast_2d(np.asarray(W, dtype=float))
        return 0.5 * np.sum(lam * W * W, axis=1) + W @ b + np.sum(W * data, axis=1)

    return RiskFunction(
        dimension=M,
        value=value,
        gradient=gradient,
        hessian=hessian,
        sampler=sampler,
        sample_gradients=sample_gradients,
        sample_losses=sample_losses,
        name="quadratic",
        params={"spectrum": lam.tolist(), "noise_std": float(noise_std), "tilt": b.tolist()},
    )


def linear_risk(slope: Sequence[float]) -> RiskFunction:
    """``Q(w; x) = slope^T w`` for every ``x``: a constant-gradient loss."""
    c = np.asarray(slope, dtype=float).ravel()
    M = c.size

    def sample_gradients(W, data):
        n = len(data)
        return np.broadcast_to(c, (n, M)).copy()

    return RiskFunction(
        dimension=M,
        value=lambda w: float(np.dot(c, w)),
        gradient=lambda w: c.copy(),
        hessian=lambda w: np.zeros((M, M)),
        sampler=lambda rng, n: np.zeros((n, 0)),
        sample_gradients=sample_gradients,
        name="linear",
        params={"slope": c.tolist()},
    )


def _sigmoid(z):
    # tanh form cannot overflow for large |z|.
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def default_label_rule(h):
    """``P(gamma = 1 | h) = sigmoid(2 h)``."""
    return _sigmoid(2.0 * np.asarray(h, dtype=float))


def logistic_net_risk(
    feature_mean: float = 0.0,
    feature_std: float = 1.0,
    label_rule: Callable[[np.ndarray], np.ndarray] | None = None,
    reg: float = 0.1,
    features: int = 1,
    hidden: int = 1,
    nodes: int = QUADRATURE_NODES,
) -> RiskFunction:
    """Regularized cross-entropy risk of a one-hidden-unit linear/logistic net.

    The prediction is ``sigmoid(w1 * w2 * h)`` for a scalar Gaussian feature
    ``h ~ N(feature_mean, feature_std^2)`` and Bernoulli label with
    ``P(gamma = 1 | h) = label_rule(h)``. The parameter vector is
    ``w = (w1, w2)`` and the risk is

        J(w) = E[softplus(z) - gamma z] + reg/2 ||w||^2,   z = w1 w2 h.

    The expectation is evaluated by Gauss-Hermite quadrature so ``J`` and its
    derivatives are deterministic and mutually consistent.
    """
    if features != 1 or hidden != 1:
        raise UnsupportedConfiguration(
            f"only the scalar network (features=1, hidden=1) is provided, got features={features}, hidden={hidden}"
        )
    if not np.isfinite(reg) or reg < 0:
        raise ConfigurationError("reg must be finite and non-negative")
    if feature_std <= 0:
        raise ConfigurationError("feature_std must be positive")
    rule = default_label_rule if label_rule is None else label_rule

    x, wts = hermegauss(nodes)
    wts = wts / wts.sum()
    hq = feature_mean + feature_std * x
    qq = np.asarray(rule(hq), dtype=float)
    if np.any((qq < 0) | (qq > 1)):
        raise ConfigurationError("label_rule must return probabilities in [0, 1]")
    coupling = float(np.sum(wts * (qq - 0.5) * hq))

    def value(w):
        w1, w2 = np.asarray(w, dtype=float)
        z = w1 * w2 * hq
        return float(np.sum(wts * (np.logaddexp(0.0, z) - qq * z)) + 0.5 * reg * (w1 * w1 + w2 * w2))

    def gradient(w):
        w1, w2 = np.asarray(w, dtype=float)
        r = wts * (_sigmoid(w1 * w2 * hq) - qq) * hq
        s = np.sum(r)
        return np.array([s * w2 + reg * w1, s * w1 + reg * w2])

    def hessian(w):
        w1, w2 = np.asarray(w, dtype=float)
        sg = _sigmoid(w1 * w2 * hq)
        curv = np.sum(wts * sg * (1.0 - sg) * hq * hq)
        s = np.sum(wts * (sg - qq) * hq)
        off = curv * w1 * w2 + s
        return np.array([[curv * w2 * w2 + reg, off], [off, curv * w1 * w1 + reg]])

    def sampler(rng, n):
        h = feature_mean + feature_std * rng.standard_normal(n)
        gamma = (rng.random(n) < rule(h)).astype(float)
        return np.stack([h, gamma], axis=1)

    def sample_gradients(W, data):
        W = np.asarray(W, dtype=float)
        h, gamma = data[:, 0], data[:, 1]
        w1, w2 = W[..., 0], W[..., 1]
        r = (_sigmoid(w1 * w2 * h) - gamma) * h
        return np.stack([r * w2 + reg * w1, r * w1 + reg * w2], axis=-1)

    def sample_losses(W, data):
        W = np.asarray(W, dtype=float)
        h, gamma = data[:, 0], data[:, 1]
        w1, w2 = W[..., 0], W[..., 1]
        z = w1 * w2 * h
        return np.logaddexp(0.0, z) - gamma * z + 0.5 * reg * (w1 * w1 + w2 * w2)

    return RiskFunction(
        dimension=2,
        value=value,
        gradient=gradient,
        hessian=hessian,
        sampler=sampler,
        sample_gradients=sample_gradients,
        sample_losses=sample_losses,
        name="logistic_net",
        params={
            "feature_mean": float(feature_mean),
            "feature_std": float(feature_std),
            "reg": float(reg),
            "nodes": int(nodes),
            # E[(gamma - 1/2) h]; the Hessian at the origin is [[reg, -c], [-c, reg]].
            "coupling": coupling,
        },
    )


def default_fd_step(w) -> float:
    return 1e-5 * (1.0 + float(np.linalg.norm(w)))


def finite_diff_gradient(f, w, h: float | None = None) -> np.ndarray:
    """Central-difference gradient of ``f`` (a RiskFunction or a callable)."""
    fun = f.value if isinstance(f, RiskFunction) else f
    w = np.asarray(w, dtype=float)
    h = default_fd_step(w) if h is None else h
    if h <= 0:
        raise ConfigurationError("finite-difference step must be positive")
    g = np.empty(w.size)
    for m in range(w.size):
        e = np.zeros(w.size)
        e[m] = h
        g[m] = (fun(w + e) - fun(w - e)) / (2.0 * h)
    return g


def finite_diff_hessian(f, w, h: float | None = None) -> np.ndarray:
    """Central differences of the analytic gradient, symmetrized."""
    grad = f.gradient if isinstance(f, RiskFunction) else f
    w = np.asarray(w, dtype=float)
    h = default_fd_step(w) if h is None else h
    cols = []
    for m in range(w.size):
        e = np.zeros(w.size)
        e[m] = h
        cols.append((grad(w + e) - grad(w - e)) / (2.0 * h))
    H = np.array(cols)
    return 0.5 * (H + H.T)


def estimate_smoothness(
    risks,
    lower,
    upper,
    points: int = 41,
    pairs: int = 2000,
    rng: np.random.Generator | None = None,
) -> SmoothnessConstants:
    """Empirical Lipschitz constants of the gradient and Hessian over a box.

    ``delta`` is the largest Hessian spectral norm over a tensor grid of the
    box (a Lipschitz constant for the gradient on the convex hull when the grid
    resolves the maximum). ``rho_hess`` is the largest difference quotient of
    Hessians over random pairs. ``hetero_G`` is the largest gradient
    disagreement between agents over the grid, zero for a single risk.
    """
    if isinstance(risks, RiskFunction):
        risks = [risks]
    rng = np.random.default_rng(0) if rng is None else rng
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    M = risks[0].dimension
    axes = [np.linspace(lower[m], upper[m], points) for m in range(M)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, M)

    pooled = _pooled(risks)
    delta = 0.0
    G = 0.0
    for w in grid:
        delta = max(delta, float(np.linalg.norm(pooled.hessian(w), 2)))
        if len(risks) > 1:
            grads = np.array([r.gradient(w) for r in risks])
            diffs = grads[:, None, :] - grads[None, :, :]
            G = max(G, float(np.max(np.linalg.norm(diffs, axis=-1))))
    rho = 0.0
    for _ in range(pairs):
        x = rng.uniform(lower, upper)
        y = x + 1e-2 * rng.standard_normal(M)
        d = np.linalg.norm(x - y)
        rho = max(rho, float(np.linalg.norm(pooled.hessian(x) - pooled.hessian(y), 2) / d))
    return SmoothnessConstants(delta=delta, rho_hess=rho, hetero_G=G)


def _pooled(risks):
    if len(risks) == 1:
        return risks[0]
    K = len(risks)
    return RiskFunction(
        dimension=risks[0].dimension,
        value=lambda w: sum(r.value(w) for r in risks) / K,
        gradient=lambda w: sum(r.gradient(w) for r in risks) / K,
        hessian=lambda w: sum(r.hessian(w) for r in risks) / K,
        name="pooled",
    )


def weighted_risk(risks: Sequence[RiskFunction], p) -> RiskFunction:
    """``J(w) = sum_k p_k J_k(w)`` without a sampler (agents sample locally)."""
    p = np.asarray(p, dtype=float)
    if len(p) != len(risks):
        raise ConfigurationError("one weight per agent risk is required")
    if len(risks) == 1:
        return risks[0]
    if all(r is risks[0] for r in risks) and abs(p.sum() - 1.0) < 1e-12:
        return risks[0]
    return RiskFunction(
        dimension=risks[0].dimension,
        value=lambda w: float(sum(pk * r.value(w) for pk, r in zip(p, risks))),
        gradient=lambda w: sum(pk * r.gradient(w) for pk, r in zip(p, risks)),
        hessian=lambda w: sum(pk * r.hessian(w) for pk, r in zip(p, risks)),
        name="weighted",
    )

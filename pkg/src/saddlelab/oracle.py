"""Stochastic gradient approximations and their gradient-noise statistics.

Every oracle exposes ``draw(w, rng)`` (one approximate gradient) and
``draw_batch(W, rng)`` (independent draws, one per row of ``W``). The gradient
noise is ``s = grad J(w) - draw(w)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, UnsupportedConfiguration
from .landscape import symmetric_eigen
from .risk import RiskFunction, weighted_risk

__all__ = [
    "GradientOracle",
    "ExactOracle",
    "SGDOracle",
    "MiniBatchOracle",
    "PerturbedOracle",
    "FederatedOracle",
    "NoiseStats",
    "exact_oracle",
    "sgd_oracle",
    "minibatch_oracle",
    "perturbed_oracle",
    "federated_oracle",
    "cb_constant",
    "federated_noise_constants",
    "estimate_noise_stats",
    "negative_curvature_noise",
    "fit_noise_bounds",
    "covariance_lipschitz_probe",
    "sample_participants",
]


class GradientOracle:
    kind = "abstract"

    def __init__(self, target: RiskFunction):
        self.target = target
        self.dimension = target.dimension

    def draw(self, w, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def draw_batch(self, W, rng: np.random.Generator) -> np.ndarray:
        W = np.atleast_2d(np.asarray(W, dtype=float))
        return np.array([self.draw(w, rng) for w in W])

    def __repr__(self):
        return f"{type(self).__name__}({self.target.name})"


class ExactOracle(GradientOracle):
    """Noise-free oracle returning the true gradient."""

    kind = "exact"

    def draw(self, w, rng=None):
        return self.target.gradient(np.asarray(w, dtype=float))

    def draw_batch(self, W, rng=None):
        W = np.atleast_2d(np.asarray(W, dtype=float))
        if np.all(W == W[0]):
            return np.tile(self.target.gradient(W[0]), (len(W), 1))
        return np.array([self.target.gradient(w) for w in W])


class SGDOracle(GradientOracle):
    kind = "sgd"

    def __init__(self, risk: RiskFunction):
        if not risk.has_sampler:
            raise UnsupportedConfiguration(f"{risk.name} has no data sampler; SGD needs one")
        super().__init__(risk)

    def draw(self, w, rng):
        data = self.target.sampler(rng, 1)
        return self.target.sample_gradients(np.asarray(w, dtype=float), data)[0]

    def draw_batch(self, W, rng):
        W = np.atleast_2d(np.asarray(W, dtype=float))
        data = self.target.sampler(rng, len(W))
        return self.target.sample_gradients(W, data)


class MiniBatchOracle(GradientOracle):
    """Average of ``B`` independent draws of a base oracle (SGD by default)."""

    kind = "minibatch"

    def __init__(self, base, B: int):
        if int(B) != B or B < 1:
            raise ConfigurationError(f"batch size must be a positive integer, got {B}")
        if isinstance(base, RiskFunction):
            if not base.has_sampler:
                raise UnsupportedConfiguration(f"{base.name} has no data sampler; mini-batch SGD needs one")
            base = SGDOracle(base)
        super().__init__(base.target)
        self.base = base
        self.B = int(B)

    def draw(self, w, rng):
        w = np.asarray(w, dtype=float)
        return self.base.draw_batch(np.broadcast_to(w, (self.B, w.size)), rng).mean(axis=0)

    def draw_batch(self, W, rng):
        W = np.atleast_2d(np.asarray(W, dtype=float))
        n, M = W.shape
        g = self.base.draw_batch(np.repeat(W, self.B, axis=0), rng)
        return g.reshape(n, self.B, M).mean(axis=1)


class PerturbedOracle(GradientOracle):
    """Base draw plus an independent ``N(0, R_v)`` perturbation."""

    kind = "perturbed"

    def __init__(self, base: GradientOracle, R_v):
        R_v = np.atleast_2d(np.asarray(R_v, dtype=float))
        M = base.dimension
        if R_v.shape != (M, M):
            raise ConfigurationError(f"R_v must be {M}x{M}, got {R_v.shape}")
        if np.max(np.abs(R_v - R_v.T)) > 1e-12 * max(1.0, np.abs(R_v).max()):
            raise ConfigurationError("R_v must be symmetric")
        vals, _ = symmetric_eigen(R_v)
        if vals[0] <= 0:
            raise ConfigurationError(f"R_v must be positive definite (smallest eigenvalue {vals[0]:.3g})")
        super().__init__(base.target)
        self.base = base
        self.R_v = R_v
        self._chol = np.linalg.cholesky(R_v)

    def draw(self, w, rng):
        g = self.base.draw(w, rng)
        return g + self._chol @ rng.standard_normal(self.dimension)

    def draw_batch(self, W, rng):
        g = self.base.draw_batch(W, rng)
        return g + rng.standard_normal(g.shape) @ self._chol.T


def sample_participants(K: int, L: int, rng: np.random.Generator, rounds: int | None = None) -> np.ndarray:
    """``L`` of ``K`` indices uniformly without replacement (partial Fisher-Yates).

    With ``rounds`` returns an ``(rounds, L)`` array of independent selections.
    """
    if rounds is None:
        u = rng.random(L)
        perm = list(range(K))
        for t in range(L):
            j = t + min(int(u[t] * (K - t)), K - t - 1)
            perm[t], perm[j] = perm[j], perm[t]
        return np.array(perm[:L])
    n = rounds
    u = rng.random((n, L))
    perm = np.tile(np.arange(K), (n, 1))
    rows = np.arange(n)
    for t in range(L):
        j = t + np.minimum((u[:, t] * (K - t)).astype(np.int64), K - t - 1)
        tmp = perm[rows, t].copy()
        perm[rows, t] = perm[rows, j]
        perm[rows, j] = tmp
    return perm[:, :L]


class FederatedOracle(GradientOracle):
    """Federated averaging with partial participation as a gradient oracle.

    Each round samples ``L`` of ``K`` agents; each participant averages ``B``
    draws of its local oracle, and the aggregate is
    ``K/L * sum_{k in round} p_k * local_k``.
    """

    kind = "federated"

    def __init__(self, agents: Sequence, L: int, B: int = 1, p=None):
        locals_ = [sgd_oracle(a) if isinstance(a, RiskFunction) else a for a in agents]
        K = len(locals_)
        if K < 1:
            raise ConfigurationError("at least one agent is required")
        if int(L) != L or not 1 <= L <= K:
            raise ConfigurationError(f"participants L must satisfy 1 <= L <= K={K}, got {L}")
        if int(B) != B or B < 1:
            raise ConfigurationError(f"local batch B must be a positive integer, got {B}")
        p = np.full(K, 1.0 / K) if p is None else np.asarray(p, dtype=float)
        if p.shape != (K,) or np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ConfigurationError("p must hold K positive weights summing to one")
        dims = {o.dimension for o in locals_}
        if len(dims) != 1:
            raise ConfigurationError("all agents must share the parameter dimension")
        super().__init__(weighted_risk([o.target for o in locals_], p))
        self.agents = locals_
        self.K, self.L, self.B = K, int(L), int(B)
        self.p = p
        self.homogeneous = all(o is locals_[0] for o in locals_)

    def sample_round(self, w, rng):
        """One round: participant indices and their local mini-batch gradients."""
        w = np.asarray(w, dtype=float)
        idx = sample_participants(self.K, self.L, rng)
        if self.homogeneous:
            g = self.agents[0].draw_batch(np.broadcast_to(w, (self.L * self.B, w.size)), rng)
            local = g.reshape(self.L, self.B, w.size).mean(axis=1)
        else:
            local = np.array(
                [
                    self.agents[k].draw_batch(np.broadcast_to(w, (self.B, w.size)), rng).mean(axis=0)
                    for k in idx
                ]
            )
        return idx, local

    def aggregate(self, idx, local) -> np.ndarray:
        return (self.K / self.L) * (self.p[idx] @ local)

    def draw(self, w, rng):
        idx, local = self.sample_round(w, rng)
        return self.aggregate(idx, local)

    def draw_batch(self, W, rng):
        W = np.atleast_2d(np.asarray(W, dtype=float))
        n, M = W.shape
        idx = sample_participants(self.K, self.L, rng, rounds=n)
        if self.homogeneous:
            Wrep = np.repeat(W, self.L * self.B, axis=0)
            g = self.agents[0].draw_batch(Wrep, rng).reshape(n, self.L, self.B, M).mean(axis=2)
        else:
            # group the (round, slot) pairs by agent so each agent draws once
            g = np.empty((n, self.L, M))
            rows = np.repeat(np.arange(n), self.L)
            flat = idx.ravel()
            for k in np.unique(flat):
                sel = np.flatnonzero(flat == k)
                Wk = np.repeat(W[rows[sel]], self.B, axis=0)
                gk = self.agents[k].draw_batch(Wk, rng).reshape(len(sel), self.B, M).mean(axis=1)
                g.reshape(n * self.L, M)[sel] = gk
        return (self.K / self.L) * np.einsum("nl,nlm->nm", self.p[idx], g)


def exact_oracle(risk: RiskFunction) -> ExactOracle:
    return ExactOracle(risk)


def sgd_oracle(risk: RiskFunction) -> SGDOracle:
    return SGDOracle(risk)


def minibatch_oracle(risk, B: int) -> MiniBatchOracle:
    """Mini-batch of ``B`` per-sample gradients of ``risk`` (or draws of an oracle)."""
    return MiniBatchOracle(risk, B)


def perturbed_oracle(base: GradientOracle, R_v) -> PerturbedOracle:
    return PerturbedOracle(base, R_v)


def federated_oracle(agents, L: int, B: int = 1, p=None) -> FederatedOracle:
    return FederatedOracle(agents, L, B, p)


def cb_constant(B: int) -> float:
    """Fourth-moment mini-batch constant ``3 - 2/B``."""
    if B < 1:
        raise ConfigurationError("B must be at least 1")
    return 3.0 - 2.0 / B


def federated_noise_constants(K, L, B, beta_sgd4, sigma_sgd4, G):
    """Fourth-moment constants ``(beta_Fed^4, sigma_Fed^4)`` of federated averaging.

    These are upper-bound constants, reported as diagnostics.
    """
    cb = cb_constant(B)
    ratio = (K / L) ** 3
    beta4 = 64.0 * ratio * cb * beta_sgd4 / B**2 + 128.0 * (K - L) / K
    sigma4 = beta4 * G**4 + 8.0 * ratio * cb * sigma_sgd4 / B**2
    return beta4, sigma4


@dataclass(frozen=True)
class NoiseStats:
    mean: np.ndarray
    covariance: np.ndarray
    fourth_moment: float
    second_moment: float
    stderr: np.ndarray
    sample_count: int


def estimate_noise_stats(oracle: GradientOracle, w, N: int, rng: np.random.Generator) -> NoiseStats:
    """Sample mean, unbiased covariance and moments of ``s = grad J(w) - draw``."""
    if N < 2:
        raise ConfigurationError("at least two samples are needed")
    w = np.asarray(w, dtype=float)
    draws = oracle.draw_batch(np.broadcast_to(w, (N, w.size)), rng)
    s = oracle.target.gradient(w) - draws
    mean = s.mean(axis=0)
    centered = s - mean
    cov = centered.T @ centered / (N - 1)
    cov = 0.5 * (cov + cov.T)
    sq = np.sum(s * s, axis=1)
    return NoiseStats(
        mean=mean,
        covariance=cov,
        fourth_moment=float(np.mean(sq * sq)),
        second_moment=float(np.mean(sq)),
        stderr=centered.std(axis=0, ddof=1) / np.sqrt(N),
        sample_count=N,
    )


def negative_curvature_noise(risk: RiskFunction, w, covariance) -> float:
    """Smallest eigenvalue of the noise covariance restricted to the
    negative-curvature eigenspace of the Hessian at ``w`` (0 if there is none)."""
    vals, vecs = symmetric_eigen(risk.hessian(np.asarray(w, dtype=float)))
    V_neg = vecs[:, vals < 0]
    if V_neg.shape[1] == 0:
        return 0.0
    proj = V_neg.T @ np.asarray(covariance) @ V_neg
    return float(symmetric_eigen(0.5 * (proj + proj.T))[0][0])


def fit_noise_bounds(oracle: GradientOracle, points, N: int, rng: np.random.Generator) -> dict:
    """Empirical envelopes ``E||s||^2 <= beta^2 ||grad J||^2 + sigma^2`` and the
    fourth-moment analogue over a set of probe points.

    The slope is a least-squares fit clipped at zero; the intercept is then
    raised until every probe point satisfies the bound.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    g2, m2, m4 = [], [], []
    for w in pts:
        st = estimate_noise_stats(oracle, w, N, rng)
        gn = oracle.target.gradient(w)
        g2.append(float(gn @ gn))
        m2.append(st.second_moment)
        m4.append(st.fourth_moment)
    g2, m2, m4 = map(np.asarray, (g2, m2, m4))

    def envelope(x, y):
        if len(x) > 1 and np.ptp(x) > 0:
            slope = max(float(np.polyfit(x, y, 1)[0]), 0.0)
        else:
            slope = 0.0
        return slope, float(np.max(y - slope * x))

    beta_sq, sigma_sq = envelope(g2, m2)
    beta4, sigma4 = envelope(g2 * g2, m4)
    return {"beta_sq": beta_sq, "sigma_sq": max(sigma_sq, 0.0), "beta4": beta4, "sigma4": max(sigma4, 0.0)}


def covariance_lipschitz_probe(oracle: GradientOracle, pairs, N: int, rng: np.random.Generator) -> float:
    """Largest ``||R_s(x) - R_s(y)|| / ||x - y||`` over the given point pairs."""
    worst = 0.0
    for x, y in pairs:
        rx = estimate_noise_stats(oracle, x, N, rng).covariance
        ry = estimate_noise_stats(oracle, y, N, rng).covariance
        d = float(np.linalg.norm(np.asarray(x, float) - np.asarray(y, float)))
        worst = max(worst, float(np.linalg.norm(rx - ry, 2)) / d)
    return worst

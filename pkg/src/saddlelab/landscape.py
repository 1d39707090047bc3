"""Large-gradient / strict-saddle / second-order-stationary classification."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ConvergenceError

__all__ = [
    "ClassifierConfig",
    "SetLabel",
    "symmetric_eigen",
    "g_threshold",
    "classify",
    "escape_time_bound",
    "arrival_budget",
]

CENTRALIZED = "centralized"
DECENTRALIZED = "decentralized"
MAX_EIGEN_DIM = 64


def symmetric_eigen(H, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns eigenvalues in ascending order and the matching orthonormal
    eigenvectors as columns. Sweeps stop once the off-diagonal Frobenius mass
    falls below ``tol * ||H||_F``.
    """
    A = np.array(H, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigurationError(f"expected a square matrix, got shape {A.shape}")
    n = A.shape[0]
    if n > MAX_EIGEN_DIM:
        raise ConfigurationError(f"dimension {n} exceeds the supported maximum {MAX_EIGEN_DIM}")
    scale = float(np.linalg.norm(A))
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-10 * max(1.0, scale):
        raise ConfigurationError("matrix is not symmetric")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    if n == 1 or scale == 0.0:
        return np.diag(A).copy(), V

    target = tol * scale
    for _ in range(max_sweeps):
        # summed directly: total minus diagonal mass cancels catastrophically
        off = math.sqrt(2.0 * float(np.sum(np.triu(A, 1) ** 2)))
        if off <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                g = 100.0 * abs(apq)
                if abs(A[p, p]) + g == abs(A[p, p]) and abs(A[q, q]) + g == abs(A[q, q]):
                    # negligible next to both diagonal entries
                    A[p, q] = A[q, p] = 0.0
                    continue
                h = A[q, q] - A[p, p]
                if abs(h) + g == abs(h):
                    t = apq / h
                else:
                    theta = 0.5 * h / apq
                    t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                    if theta < 0:
                        t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p = A[:, p].copy()
                col_q = A[:, q].copy()
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                row_p = A[p, :].copy()
                row_q = A[q, :].copy()
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                A[p, q] = A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        raise ConvergenceError(f"Jacobi sweeps did not converge in {max_sweeps} sweeps")

    vals = np.diag(A).copy()
    order = np.argsort(vals, kind="stable")
    return vals[order], V[:, order]


def g_threshold(mu: float, c1: float, c2: float, pi: float) -> float:
    """Squared-gradient threshold ``mu * c2 / c1 * (1 + 1/pi)`` separating G."""
    return mu * c2 / c1 * (1.0 + 1.0 / pi)


@dataclass(frozen=True)
class ClassifierConfig:
    """Step size, thresholds and problem constants for the set decomposition.

    ``provenance`` records where ``delta``/``sigma_sq``/``beta_sq`` came from
    (e.g. ``{"delta": "analytic", "sigma_sq": "estimated"}``).
    """

    mu: float
    tau: float = 0.1
    pi: float = 0.1
    delta: float = 1.0
    beta_sq: float = 0.0
    sigma_sq: float = 1.0
    regime: str = CENTRALIZED
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.regime not in (CENTRALIZED, DECENTRALIZED):
            raise ConfigurationError(f"regime must be {CENTRALIZED!r} or {DECENTRALIZED!r}")
        if not self.mu > 0:
            raise ConfigurationError("mu must be positive")
        if not self.tau > 0:
            raise ConfigurationError("tau must be positive")
        if not 0 < self.pi < 1:
            raise ConfigurationError("pi must lie in (0, 1)")
        if not self.delta > 0:
            raise ConfigurationError("delta must be positive")
        if self.beta_sq < 0 or self.sigma_sq < 0:
            raise ConfigurationError("beta_sq and sigma_sq must be non-negative")
        if self.regime == CENTRALIZED:
            bound = 2.0 / (self.delta * (1.0 + self.beta_sq))
            if self.mu > bound or self.c1 <= 0:
                raise ConfigurationError(
                    f"step-size precondition violated: mu={self.mu} must satisfy "
                    f"mu <= 2/(delta(1+beta^2)) = {bound} with c1 > 0"
                )
        else:
            bound = 1.0 / (2.0 * self.delta)
            if not self.mu < bound:
                raise ConfigurationError(
                    f"step-size precondition violated: mu={self.mu} must satisfy mu < 1/(2 delta) = {bound}"
                )

    @property
    def c1(self) -> float:
        if self.regime == CENTRALIZED:
            return 1.0 - self.mu * self.delta / 2.0 * (1.0 + self.beta_sq)
        return 0.5 * (1.0 - 2.0 * self.mu * self.delta)

    @property
    def c2(self) -> float:
        return self.delta / 2.0 * self.sigma_sq

    @property
    def threshold(self) -> float:
        return g_threshold(self.mu, self.c1, self.c2, self.pi)

    def with_mu(self, mu: float) -> "ClassifierConfig":
        return ClassifierConfig(
            mu=mu,
            tau=self.tau,
            pi=self.pi,
            delta=self.delta,
            beta_sq=self.beta_sq,
            sigma_sq=self.sigma_sq,
            regime=self.regime,
            provenance=dict(self.provenance),
        )


@dataclass(frozen=True)
class SetLabel:
    label: str
    grad_norm_sq: float
    lambda_min: float
    threshold: float
    metadata: dict = field(default_factory=dict, compare=False)


def classify(risk, w, cfg: ClassifierConfig) -> SetLabel:
    """Assign ``w`` to exactly one of G, H, M.

    G when the squared gradient norm reaches the threshold (inclusive), else
    H when the smallest Hessian eigenvalue is at most ``-tau``, else M.
    """
    w = np.asarray(w, dtype=float)
    g = risk.gradient(w)
    gn2 = float(np.dot(g, g))
    lam = float(symmetric_eigen(risk.hessian(w))[0][0])
    thr = cfg.threshold
    if gn2 >= thr:
        label = "G"
    elif lam <= -cfg.tau:
        label = "H"
    else:
        label = "M"
    return SetLabel(label, gn2, lam, thr, metadata=dict(cfg.provenance))


def escape_time_bound(M: int, sigma_sq: float, sigma_l_sq: float, mu: float, tau: float) -> float:
    """Iterations needed to descend from a strict saddle,
    ``log(2 M sigma^2 / sigma_l^2 + 1) / log(1 + 2 mu tau)``."""
    if sigma_l_sq <= 0:
        raise ConfigurationError(
            "sigma_l^2 must be positive: gradient noise needs a floor along negative-curvature directions"
        )
    if M < 1 or sigma_sq <= 0 or mu <= 0 or tau <= 0:
        raise ConfigurationError("M, sigma^2, mu and tau must be positive")
    return math.log(2.0 * M * sigma_sq / sigma_l_sq + 1.0) / math.log1p(2.0 * mu * tau)


def arrival_budget(J0: float, J_opt: float, cfg: ClassifierConfig, escape_time: float) -> float:
    """Upper bound on iterations to reach M: ``(J0 - J^o) / (mu^2 c2 pi) * i^s``."""
    if J0 < J_opt:
        raise ConfigurationError("J(w0) is below the stated lower bound J^o")
    return (J0 - J_opt) / (cfg.mu**2 * cfg.c2 * cfg.pi) * escape_time

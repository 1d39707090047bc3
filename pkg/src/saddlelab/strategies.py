"""Iteration drivers: centralized SGD, federated averaging, diffusion (ATC)."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, DivergenceError
from .graph import CombinationMatrix, combination_matrix
from .landscape import ClassifierConfig, symmetric_eigen
from .oracle import FederatedOracle, GradientOracle, sgd_oracle
from .risk import RiskFunction, weighted_risk

__all__ = [
    "TrajectoryRecord",
    "run_centralized",
    "run_federated",
    "run_diffusion",
    "centroid_recursion_check",
    "disagreement",
    "detect_burn_in",
    "write_trajectory_csv",
    "write_iterates_csv",
    "CSV_HEADER",
]

DIVERGENCE_NORM = 1e6
CSV_HEADER = ["iter", "strategy", "seed", "agent", "risk", "grad_norm_sq", "lambda_min", "set_label", "disagreement_ms"]


@dataclass
class TrajectoryRecord:
    """Per-iteration history of one run.

    ``iterates`` has shape ``(T+1, M)`` for single-model strategies and
    ``(T+1, K, M)`` for diffusion. ``risk``, ``grad_norm_sq`` and the labels
    refer to the centroid (the global model for centralized/federated runs).
    ``lambda_min`` is NaN between evaluation strides and ``labels`` holds
    ``""`` there.
    """

    strategy: str
    mu: float
    seed: int | None
    iterates: np.ndarray
    centroid: np.ndarray
    risk: np.ndarray
    grad_norm_sq: np.ndarray
    lambda_min: np.ndarray
    labels: list
    disagreement_ms: np.ndarray | None = None
    perron: np.ndarray | None = None
    gradient_draws: np.ndarray | None = None
    halted: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return len(self.risk) - 1


class _Recorder:
    def __init__(self, risk, cfg, eval_stride, steps, shape, log_shape, strategy, mu, seed):
        self.risk = risk
        self.threshold = None if cfg is None else cfg.threshold
        self.tau = None if cfg is None else cfg.tau
        self.stride = eval_stride
        n = steps + 1
        self.iterates = np.empty((n,) + shape)
        self.centroid = np.empty((n, shape[-1]))
        self.J = np.empty(n)
        self.g2 = np.empty(n)
        self.lam = np.full(n, np.nan)
        self.labels = [""] * n
        self.dis = np.empty(n) if len(shape) == 2 else None
        self.draws = None if log_shape is None else np.empty((steps,) + log_shape)
        self.strategy, self.mu, self.seed = strategy, mu, seed
        self.last = 0

    def record(self, i, W, wc, dis=None):
        self.iterates[i] = W
        self.centroid[i] = wc
        self.J[i] = self.risk.value(wc)
        g = self.risk.gradient(wc)
        self.g2[i] = g @ g
        if dis is not None:
            self.dis[i] = dis
        self.last = i
        if self.stride and i % self.stride == 0:
            lam = float(symmetric_eigen(self.risk.hessian(wc))[0][0])
            self.lam[i] = lam
            if self.threshold is not None:
                if self.g2[i] >= self.threshold:
                    self.labels[i] = "G"
                elif lam <= -self.tau:
                    self.labels[i] = "H"
                else:
                    self.labels[i] = "M"
        return self.labels[i]

    def finish(self, halted="", perron=None, meta=None):
        n = self.last + 1
        return TrajectoryRecord(
            strategy=self.strategy,
            mu=self.mu,
            seed=self.seed,
            iterates=self.iterates[:n],
            centroid=self.centroid[:n],
            risk=self.J[:n],
            grad_norm_sq=self.g2[:n],
            lambda_min=self.lam[:n],
            labels=self.labels[:n],
            disagreement_ms=None if self.dis is None else self.dis[:n],
            perron=perron,
            gradient_draws=None if self.draws is None else self.draws[: n - 1],
            halted=halted,
            meta=meta or {},
        )


def _diverged(W) -> bool:
    return not np.all(np.isfinite(W)) or np.max(np.abs(W)) > DIVERGENCE_NORM


def _check_common(mu, steps):
    if mu < 0:
        raise ConfigurationError("mu must be non-negative")
    if int(steps) != steps or steps < 1:
        raise ConfigurationError("steps must be a positive integer")


StopRule = Callable[[int, np.ndarray, str], bool]


def run_centralized(
    risk: RiskFunction,
    oracle: GradientOracle,
    mu: float,
    steps: int,
    rng: np.random.Generator,
    w0,
    cfg: ClassifierConfig | None = None,
    eval_stride: int = 10,
    log_gradients: bool = False,
    stop: StopRule | None = None,
    seed: int | None = None,
    strategy: str = "central",
) -> TrajectoryRecord:
    """``w_i = w_{i-1} - mu * draw(w_{i-1})``.

    ``stop(i, w_i, label)`` may end the run early; the label is ``""`` off the
    evaluation stride. Raises :class:`DivergenceError` (carrying the partial
    record) if the iterate becomes non-finite or exceeds 1e6 in magnitude.
    """
    _check_common(mu, steps)
    w = np.array(w0, dtype=float)
    M = w.size
    rec = _Recorder(risk, cfg, eval_stride, steps, (M,), (M,) if log_gradients else None, strategy, mu, seed)
    label = rec.record(0, w, w)
    if stop is not None and stop(0, w, label):
        return rec.finish(halted="stopped")
    for i in range(1, steps + 1):
        g = oracle.draw(w, rng)
        if rec.draws is not None:
            rec.draws[i - 1] = g
        w = w - mu * g
        if _diverged(w):
            rec.iterates[i] = w
            raise DivergenceError(f"iterate diverged at iteration {i}: ||w||={np.linalg.norm(w):.3g}", rec.finish("diverged"))
        label = rec.record(i, w, w)
        if stop is not None and stop(i, w, label):
            return rec.finish(halted="stopped")
    return rec.finish()


def run_federated(
    agents: Sequence,
    L: int,
    B: int,
    p,
    mu: float,
    steps: int,
    rng: np.random.Generator,
    w0,
    cfg: ClassifierConfig | None = None,
    eval_stride: int = 10,
    protocol: str = "three-step",
    stop: StopRule | None = None,
    seed: int | None = None,
    log_gradients: bool = False,
) -> TrajectoryRecord:
    """Federated averaging with ``L`` of ``K`` agents participating per round.

    ``protocol="three-step"`` runs broadcast, local update
    ``w_k = w - mu K 1_k p_k / B sum_b grad Q_k`` and aggregation
    ``w = 1/L sum_k 1_k w_k``. ``protocol="combined"`` runs the equivalent
    centralized recursion with the federated gradient oracle. Both consume the
    random stream identically.
    """
    oracle = agents if isinstance(agents, FederatedOracle) else FederatedOracle(agents, L, B, p)
    risk = oracle.target
    if protocol == "combined":
        return run_centralized(
            risk, oracle, mu, steps, rng, w0, cfg, eval_stride, log_gradients, stop, seed, strategy="federated"
        )
    if protocol != "three-step":
        raise ConfigurationError(f"unknown federated protocol {protocol!r}")
    _check_common(mu, steps)
    K, Lp, pk = oracle.K, oracle.L, oracle.p
    w = np.array(w0, dtype=float)
    M = w.size
    rec = _Recorder(risk, cfg, eval_stride, steps, (M,), (Lp, M) if log_gradients else None, "federated", mu, seed)
    label = rec.record(0, w, w)
    if stop is not None and stop(0, w, label):
        return rec.finish(halted="stopped")
    for i in range(1, steps + 1):
        idx, local = oracle.sample_round(w, rng)
        if rec.draws is not None:
            rec.draws[i - 1] = local
        # indicator is one for every sampled agent; the others keep w and are not aggregated
        local_models = w - mu * K * pk[idx, None] * local
        w = local_models.sum(axis=0) / Lp
        if _diverged(w):
            raise DivergenceError(f"iterate diverged at iteration {i}", rec.finish("diverged"))
        label = rec.record(i, w, w)
        if stop is not None and stop(i, w, label):
            return rec.finish(halted="stopped")
    return rec.finish(meta={"K": K, "L": Lp})


def run_diffusion(
    oracles,
    A,
    mu: float,
    steps: int,
    rng: np.random.Generator,
    w0,
    cfg: ClassifierConfig | None = None,
    eval_stride: int = 10,
    log_gradients: bool = False,
    combine: str = "dense",
    risk: RiskFunction | None = None,
    stop: StopRule | None = None,
    seed: int | None = None,
) -> TrajectoryRecord:
    """Adapt-then-combine diffusion over the combination matrix ``A``.

    ``oracles`` is one gradient oracle (or risk, wrapped as SGD) per agent, or
    a single oracle shared by all agents. Adapt:
    ``phi_k = w_k - mu * draw_k(w_k)``; combine: ``w_k = sum_{l in N_k} a_lk phi_l``.
    ``combine="neighborhood"`` evaluates the combination by iterating each
    neighborhood explicitly instead of a dense product. Labels and risk refer
    to the Perron-weighted centroid; ``risk`` defaults to ``sum_k p_k J_k``.
    """
    _check_common(mu, steps)
    cm = A if isinstance(A, CombinationMatrix) else combination_matrix(A)
    K = cm.K
    if isinstance(oracles, (GradientOracle, RiskFunction)):
        oracles = [oracles] * K
    oracles = [sgd_oracle(o) if isinstance(o, RiskFunction) else o for o in oracles]
    if len(oracles) != K:
        raise ConfigurationError(f"need one oracle per agent ({K}), got {len(oracles)}")
    dims = {o.dimension for o in oracles}
    if len(dims) != 1:
        raise ConfigurationError(f"agents disagree on the parameter dimension: {sorted(dims)}")
    if combine not in ("dense", "neighborhood"):
        raise ConfigurationError(f"unknown combine mode {combine!r}")
    p = cm.perron
    homogeneous = all(o is oracles[0] for o in oracles)
    if risk is None:
        risk = oracles[0].target if homogeneous else weighted_risk([o.target for o in oracles], p)
    M = dims.pop()
    W = np.array(w0, dtype=float)
    if W.shape == (M,):
        W = np.tile(W, (K, 1))
    if W.shape != (K, M):
        raise ConfigurationError(f"w0 must have shape ({M},) or ({K}, {M})")
    AT = cm.A.T
    nbhd = [np.asarray(n) for n in cm.neighborhoods]
    weights = [cm.A[n, k] for k, n in enumerate(nbhd)]

    rec = _Recorder(risk, cfg, eval_stride, steps, (K, M), (K, M) if log_gradients else None, "diffusion", mu, seed)

    def dis_sq(W, wc):
        D = W - wc
        return float(np.sum(D * D))

    wc = p @ W
    label = rec.record(0, W, wc, dis_sq(W, wc))
    if stop is not None and stop(0, wc, label):
        return rec.finish(halted="stopped", perron=p)
    for i in range(1, steps + 1):
        if homogeneous:
            G = oracles[0].draw_batch(W, rng)
        else:
            G = np.array([oracles[k].draw(W[k], rng) for k in range(K)])
        if rec.draws is not None:
            rec.draws[i - 1] = G
        Phi = W - mu * G
        if combine == "dense":
            W = AT @ Phi
        else:
            W = np.empty_like(Phi)
            for k in range(K):
                # agent k only reads intermediates of its own neighbors
                W[k] = weights[k] @ Phi[nbhd[k]]
        if _diverged(W):
            raise DivergenceError(f"iterate diverged at iteration {i}", rec.finish("diverged", perron=p))
        wc = p @ W
        label = rec.record(i, W, wc, dis_sq(W, wc))
        if stop is not None and stop(i, wc, label):
            return rec.finish(halted="stopped", perron=p)
    return rec.finish(perron=p, meta={"K": K})


def centroid_recursion_check(record: TrajectoryRecord, p=None, mu: float | None = None) -> float:
    """Replay ``w_c,i = w_c,i-1 - mu sum_k p_k g_k,i`` from the logged gradient
    draws and return the largest deviation from the logged centroids."""
    if record.gradient_draws is None:
        raise ConfigurationError("record has no gradient log; rerun with log_gradients=True")
    p = record.perron if p is None else np.asarray(p, dtype=float)
    mu = record.mu if mu is None else mu
    draws = record.gradient_draws
    if draws.ndim == 2:  # single-model run
        steps = np.asarray(draws)
    else:
        steps = np.einsum("k,tkm->tm", p, draws)
    replay = record.centroid[0] - mu * np.cumsum(steps, axis=0)
    return float(np.max(np.abs(replay - record.centroid[1 : len(replay) + 1]), initial=0.0))


def disagreement(record_or_iterates, p, order: int = 2) -> np.ndarray:
    """``||W_i - (1 p^T kron I) W_i||^order`` per iteration (order 2 or 4)."""
    if order not in (2, 4):
        raise ConfigurationError("order must be 2 or 4")
    W = record_or_iterates.iterates if isinstance(record_or_iterates, TrajectoryRecord) else record_or_iterates
    W = np.asarray(W, dtype=float)
    single = W.ndim == 2
    if single:
        W = W[None]
    p = np.asarray(p, dtype=float)
    # same reduction as the drivers use for the centroid
    wc = np.array([p @ Wt for Wt in W])
    sq = np.sum((W - wc[:, None, :]) ** 2, axis=(1, 2))
    out = sq if order == 2 else sq * sq
    return out[0] if single else out


def detect_burn_in(series, window: int = 50, rel_change: float = 0.01):
    """First index where the mean over the trailing ``window`` differs from the
    mean over the window before it by less than ``rel_change``; None if never."""
    x = np.asarray(series, dtype=float)
    if len(x) < 2 * window:
        return None
    c = np.concatenate([[0.0], np.cumsum(x)])
    for i in range(2 * window, len(x) + 1):
        cur = (c[i] - c[i - window]) / window
        prev = (c[i - window] - c[i - 2 * window]) / window
        if cur != 0 and abs(cur - prev) < rel_change * abs(cur):
            return i - window
        if cur == 0 and prev == 0:
            return i - window
    return None


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return ""
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_trajectory_csv(records, path, per_agent: bool = False, risk: RiskFunction | None = None) -> None:
    """Write records with the fixed trajectory header.

    One row per iteration for the centroid/global model (empty ``agent``); with
    ``per_agent`` diffusion records add one row per agent, evaluated with ``risk``.
    """
    if isinstance(records, TrajectoryRecord):
        records = [records]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CSV_HEADER)
        for rec in records:
            dis = rec.disagreement_ms
            for i in range(len(rec.risk)):
                wr.writerow(
                    [
                        i,
                        rec.strategy,
                        _fmt(rec.seed),
                        "",
                        _fmt(rec.risk[i]),
                        _fmt(rec.grad_norm_sq[i]),
                        _fmt(rec.lambda_min[i]),
                        rec.labels[i],
                        "" if dis is None else _fmt(dis[i]),
                    ]
                )
                if per_agent and rec.iterates.ndim == 3 and risk is not None:
                    for k, wk in enumerate(rec.iterates[i]):
                        g = risk.gradient(wk)
                        wr.writerow([i, rec.strategy, _fmt(rec.seed), k, _fmt(risk.value(wk)), _fmt(float(g @ g)), "", "", ""])


def write_iterates_csv(records, path) -> None:
    """Companion file with the parameter vectors: ``iter,seed,agent,w0,...``."""
    if isinstance(records, TrajectoryRecord):
        records = [records]
    M = records[0].centroid.shape[1]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["iter", "strategy", "seed", "agent"] + [f"w{m}" for m in range(M)])
        for rec in records:
            for i, wc in enumerate(rec.centroid):
                wr.writerow([i, rec.strategy, _fmt(rec.seed), ""] + [_fmt(v) for v in wc])

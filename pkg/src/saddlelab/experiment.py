"""Experiment configuration, object builders and the two-parameter reproduction run.

A configuration is a flat ``key=value`` text file. Every key has a default, so
a serialized configuration always lists all resolved values and re-parsing it
gives back the same object.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigurationError
from .graph import (
    hastings_matrix,
    mixing_rate,
    random_connected_graph,
    random_geometric_graph,
    read_edge_list,
    ring_graph,
    tuned_geometric_graph,
    uniform_neighbor_matrix,
)
from .landscape import CENTRALIZED, DECENTRALIZED, ClassifierConfig, classify
from .oracle import (
    FederatedOracle,
    GradientOracle,
    exact_oracle,
    minibatch_oracle,
    perturbed_oracle,
    sgd_oracle,
)
from .risk import RiskFunction, logistic_net_risk, quadratic_saddle
from .rng import stream
from .strategies import TrajectoryRecord, run_centralized, run_diffusion, run_federated
from .verify import calibrate_classifier, central_runner, diffusion_runner, federated_runner

__all__ = [
    "ExperimentConfig",
    "parse_config_text",
    "load_config",
    "dump_config",
    "build_risk",
    "build_agent_oracle",
    "build_network",
    "build_classifier",
    "Experiment",
    "descend",
    "slowdown_metrics",
    "reproduce",
]

STRATEGIES = ("central", "federated", "diffusion")
BENCHMARKS = ("quadratic", "logistic_net")
AUTO = None


@dataclass
class ExperimentConfig:
    """All knobs of one experiment; ``None`` means "resolve automatically".

    ``graph`` is either a path to an edge-list file or a generator spec:
    ``tuned`` (geometric graph tuned to a mixing rate near 0.956), ``ring``,
    ``geometric:<radius>`` or ``random:<extra edge probability>``.
    ``perturb_sigma`` is the standard deviation of the isotropic Gaussian
    perturbation added to every agent's stochastic gradient.
    """

    strategy: str = "central"
    benchmark: str = "logistic_net"
    mu: float = 0.05
    tau: float = 0.1
    pi_param: float = 0.1
    steps: int = 1500
    K: int = 50
    L: int = 10
    B: int = 1
    perturb_sigma: float = 1.0
    graph: str = "tuned"
    graph_rule: str = "uniform"
    graph_seed: int = 0
    seed_root: int = 0
    replicas: int = 1
    output_dir: str = "out"
    init: tuple = (0.8, -0.8)
    spectrum: tuple = (1.0, -1.0)
    noise_std: float = 0.0
    reg: float = 0.1
    eval_stride: int = 10
    protocol: str = "three-step"
    delta: float | None = AUTO
    beta_sq: float | None = AUTO
    sigma_sq: float | None = AUTO

    def validate(self) -> "ExperimentConfig":
        """Check every range before anything runs; raise on the first violation."""
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.benchmark not in BENCHMARKS:
            raise ConfigurationError(f"benchmark must be one of {BENCHMARKS}, got {self.benchmark!r}")
        if not self.mu > 0:
            raise ConfigurationError("mu must be positive")
        if not self.tau > 0:
            raise ConfigurationError("tau must be positive")
        if not 0 < self.pi_param < 1:
            raise ConfigurationError("pi_param must lie in (0, 1)")
        if self.steps < 1:
            raise ConfigurationError("steps must be at least 1")
        if self.K < 1:
            raise ConfigurationError("K must be at least 1")
        if not 1 <= self.L <= self.K:
            raise ConfigurationError(f"L must satisfy 1 <= L <= K={self.K}")
        if self.B < 1:
            raise ConfigurationError("B must be at least 1")
        if self.perturb_sigma < 0 or self.noise_std < 0:
            raise ConfigurationError("perturb_sigma and noise_std must be non-negative")
        if self.replicas < 1:
            raise ConfigurationError("replicas must be at least 1")
        if self.seed_root < 0 or self.graph_seed < 0:
            raise ConfigurationError("seeds must be non-negative")
        if self.eval_stride < 0:
            raise ConfigurationError("eval_stride must be non-negative")
        if self.graph_rule not in ("uniform", "hastings"):
            raise ConfigurationError("graph_rule must be 'uniform' or 'hastings'")
        if self.protocol not in ("three-step", "combined"):
            raise ConfigurationError("protocol must be 'three-step' or 'combined'")
        if not _is_generator_spec(self.graph) and not os.path.isfile(self.graph):
            raise ConfigurationError(f"graph file not found: {self.graph}")
        M = 2 if self.benchmark == "logistic_net" else len(self.spectrum)
        if len(self.init) != M:
            raise ConfigurationError(f"init must have {M} entries for the {self.benchmark} benchmark")
        if self.benchmark == "quadratic" and any(s == 0 for s in self.spectrum):
            raise ConfigurationError("quadratic spectrum entries must be nonzero")
        return self

    @property
    def dimension(self) -> int:
        return 2 if self.benchmark == "logistic_net" else len(self.spectrum)


def _is_generator_spec(spec: str) -> bool:
    head = spec.split(":", 1)[0]
    return head in ("tuned", "ring", "geometric", "random")


def _coerce(f: dataclasses.Field, raw: str):
    raw = raw.strip()
    kind = f.type
    if f.default is AUTO and raw.lower() in ("auto", ""):
        return AUTO
    try:
        if f.name in ("init", "spectrum"):
            return tuple(float(x) for x in raw.replace("/", ",").split(",") if x.strip())
        if "int" in kind and "float" not in kind:
            v = float(raw)
            if v != int(v):
                raise ValueError
            return int(v)
        if "float" in kind:
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"invalid value for {f.name}: {raw!r}") from None
    return raw


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse ``key=value`` lines (``#`` starts a comment) on top of ``base``."""
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {n}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigurationError(f"line {n}: unknown key {key!r}")
        values[key] = _coerce(_FIELDS[key], raw)
    return dataclasses.replace(base or ExperimentConfig(), **values)


def load_config(path) -> ExperimentConfig:
    if not os.path.isfile(path):
        raise ConfigurationError(f"config file not found: {path}")
    with open(path) as fh:
        return parse_config_text(fh.read())


def apply_overrides(cfg: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    """Replace fields from already-parsed string or typed values (flags win)."""
    values = {}
    for key, v in overrides.items():
        if v is None:
            continue
        if key not in _FIELDS:
            raise ConfigurationError(f"unknown key {key!r}")
        values[key] = _coerce(_FIELDS[key], v) if isinstance(v, str) else v
    return dataclasses.replace(cfg, **values)


def _fmt_value(v) -> str:
    if v is AUTO:
        return "auto"
    if isinstance(v, tuple):
        return ",".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{f.name}={_fmt_value(getattr(cfg, f.name))}\n" for f in fields(cfg))


# ---------------------------------------------------------------------------
# builders


def build_risk(cfg: ExperimentConfig) -> RiskFunction:
    if cfg.benchmark == "quadratic":
        return quadratic_saddle(cfg.spectrum, noise_std=cfg.noise_std)
    return logistic_net_risk(reg=cfg.reg)


def build_agent_oracle(cfg: ExperimentConfig, risk: RiskFunction | None = None) -> GradientOracle:
    """One agent's gradient approximation: a ``B``-sample mini-batch gradient
    plus an independent ``N(0, perturb_sigma^2 I)`` perturbation.

    A noise-free quadratic uses the exact gradient as the base.
    """
    risk = build_risk(cfg) if risk is None else risk
    if cfg.benchmark == "quadratic" and cfg.noise_std == 0:
        base = exact_oracle(risk)
    elif cfg.B > 1:
        base = minibatch_oracle(risk, cfg.B)
    else:
        base = sgd_oracle(risk)
    if cfg.perturb_sigma > 0:
        return perturbed_oracle(base, cfg.perturb_sigma**2 * np.eye(risk.dimension))
    return base


def build_central_oracle(cfg: ExperimentConfig, agent: GradientOracle) -> GradientOracle:
    """The centralized processor averages the approximations of all ``K`` agents."""
    return agent if cfg.K == 1 else minibatch_oracle(agent, cfg.K)


def build_network(cfg: ExperimentConfig):
    """Return ``(combination matrix, adjacency, mixing rate)`` for the config."""
    spec = cfg.graph
    if _is_generator_spec(spec):
        head, _, arg = spec.partition(":")
        rng = stream(cfg.graph_seed, 0)
        if head == "tuned":
            adj, cm, rate, _ = tuned_geometric_graph(cfg.K, seed=cfg.graph_seed)
            if cfg.graph_rule == "uniform":
                return cm, adj, rate
        elif head == "ring":
            adj = ring_graph(cfg.K)
        elif head == "geometric":
            adj = random_geometric_graph(cfg.K, float(arg or 0.3), rng)
        else:
            adj = random_connected_graph(cfg.K, rng, float(arg or 0.1))
    else:
        adj = read_edge_list(spec)
        if len(adj) != cfg.K:
            raise ConfigurationError(f"graph file has {len(adj)} nodes but K={cfg.K}")
    if cfg.graph_rule == "hastings":
        cm = hastings_matrix(adj, np.full(len(adj), 1.0 / len(adj)))
    else:
        cm = uniform_neighbor_matrix(adj)
    return cm, adj, mixing_rate(cm)


def build_classifier(cfg: ExperimentConfig, strategy: str | None = None, risk=None, oracle=None, noise_scale=1.0):
    """Classifier constants for a strategy.

    Quadratic constants are analytic: ``delta = max |lambda|``, ``beta^2 = 0``
    and ``sigma^2`` the trace of the per-draw noise covariance. Logistic
    constants are estimated with :func:`calibrate_classifier`. Explicit
    ``delta``/``beta_sq``/``sigma_sq`` config values always win.
    """
    strategy = strategy or cfg.strategy
    regime = DECENTRALIZED if strategy == "diffusion" else CENTRALIZED
    risk = build_risk(cfg) if risk is None else risk
    if cfg.benchmark == "quadratic":
        M = len(cfg.spectrum)
        per_draw = M * (cfg.perturb_sigma**2 + cfg.noise_std**2 / cfg.B)
        scale = {"central": 1.0 / cfg.K, "federated": 1.0 / cfg.L, "diffusion": 1.0}[strategy]
        vals = {"delta": max(abs(s) for s in cfg.spectrum), "beta_sq": 0.0, "sigma_sq": per_draw * scale}
        prov = {k: "analytic" for k in vals}
    else:
        if oracle is None:
            raise ConfigurationError("an oracle is needed to calibrate the logistic benchmark")
        est = calibrate_classifier(
            risk, oracle, cfg.mu, cfg.tau, cfg.pi_param, regime, N=5000, rng=stream(cfg.seed_root, 90), noise_scale=noise_scale
        )
        vals = {"delta": est.delta, "beta_sq": est.beta_sq, "sigma_sq": est.sigma_sq}
        prov = dict(est.provenance)
    for key in ("delta", "beta_sq", "sigma_sq"):
        if getattr(cfg, key) is not AUTO:
            vals[key] = getattr(cfg, key)
            prov[key] = "configured"
    return ClassifierConfig(mu=cfg.mu, tau=cfg.tau, pi=cfg.pi_param, regime=regime, provenance=prov, **vals)


class Experiment:
    """Resolved objects for one configuration and a replica runner."""

    def __init__(self, cfg: ExperimentConfig, strategy: str | None = None, calibrate: bool = True):
        self.cfg = cfg.validate()
        self.strategy = strategy or cfg.strategy
        self.risk = build_risk(cfg)
        self.agent = build_agent_oracle(cfg, self.risk)
        self.network = None
        self.mixing = None
        # calibration oracle and the factor mapping its noise moments to this strategy's
        calib, scale = self.agent, 1.0
        if self.strategy == "central":
            self.oracle = build_central_oracle(cfg, self.agent)
            scale = 1.0 / cfg.K  # averaging K independent draws divides the moments by K
        elif self.strategy == "federated":
            self.oracle = FederatedOracle([self.agent] * cfg.K, cfg.L, 1)
            calib = self.oracle
        else:
            self.network, self.adjacency, self.mixing = build_network(cfg)
            if self.network.K != cfg.K:
                raise ConfigurationError(f"network has {self.network.K} agents but K={cfg.K}")
            self.oracle = self.agent
        self.classifier = build_classifier(cfg, self.strategy, self.risk, calib, scale) if calibrate else None

    def run_replica(self, r: int, steps: int | None = None, w0=None) -> TrajectoryRecord:
        cfg = self.cfg
        steps = cfg.steps if steps is None else steps
        w0 = cfg.init if w0 is None else w0
        rng = stream(cfg.seed_root, r)
        common = dict(cfg=self.classifier, eval_stride=cfg.eval_stride, seed=r)
        if self.strategy == "central":
            return run_centralized(self.risk, self.oracle, cfg.mu, steps, rng, w0, **common)
        if self.strategy == "federated":
            return run_federated(self.oracle, cfg.L, 1, None, cfg.mu, steps, rng, w0, protocol=cfg.protocol, **common)
        return run_diffusion(self.oracle, self.network, cfg.mu, steps, rng, w0, risk=self.risk, **common)

    def runner(self):
        if self.strategy == "central":
            return central_runner(self.risk, self.oracle, self.cfg.mu)
        if self.strategy == "federated":
            return federated_runner(self.oracle, self.cfg.L, 1, None, self.cfg.mu, self.cfg.protocol)
        return diffusion_runner(self.oracle, self.network, self.cfg.mu, self.risk)


# ---------------------------------------------------------------------------
# slowdown-and-recovery metrics


def _moving_average(x, n):
    if len(x) < n:
        return np.full(len(x), np.mean(x))
    c = np.cumsum(np.concatenate([[0.0], x]))
    m = (c[n:] - c[:-n]) / n
    h = n // 2
    return np.concatenate([np.full(h, m[0]), m, np.full(len(x) - len(m) - h, m[-1])])


def descend(risk, w, steps=2000, tol=1e-14):
    """Deterministic gradient flow (backtracking descent) from ``w``."""
    w = np.asarray(w, dtype=float)
    J = risk.value(w)
    step = 1.0
    for _ in range(steps):
        g = risk.gradient(w)
        gn2 = float(g @ g)
        if gn2 < tol:
            break
        while step > 1e-14:
            cand = w - step * g
            Jc = risk.value(cand)
            if Jc <= J - 0.5 * step * gn2:
                w, J = cand, Jc
                step = min(step * 2.0, 1.0)
                break
            step *= 0.5
        else:
            break
    return w


def slowdown_metrics(record: TrajectoryRecord, risk: RiskFunction, classifier: ClassifierConfig, saddle, smooth: int = 21) -> dict:
    """Per-replica slowdown/escape/convergence summary of one trajectory.

    The gradient norm of the (centroid) iterate is smoothed over ``smooth``
    iterations. The run escapes at the first iteration whose risk is halfway
    between the saddle value and the value at the local minimizer that the
    final iterate flows to. The dip is the smallest smoothed gradient norm
    before the escape.

    ``slowdown``: the dip lies strictly after the start and before the escape,
    with value below 20% of the initial gradient norm.
    ``recovered``: the escape happens and the final iterate is labeled M and
    lies closer to that local minimizer than to the saddle.
    """
    g = np.sqrt(record.grad_norm_sq)
    gs = _moving_average(g, smooth)
    saddle = np.asarray(saddle, dtype=float)
    wf = record.centroid[-1]
    w_min = descend(risk, wf)
    is_min = risk.lambda_min(w_min) > 0 and np.linalg.norm(w_min - saddle) > 1e-6
    J_s, J_min = risk.value(saddle), risk.value(w_min)
    hit = np.flatnonzero(record.risk <= J_s - 0.5 * (J_s - J_min)) if is_min else np.array([], int)
    esc = int(hit[0]) if len(hit) else -1
    end = esc if esc > 0 else len(gs)
    i_dip = int(np.argmin(gs[:end]))
    dip = float(gs[i_dip])
    slowdown = esc > 0 and 0 < i_dip < esc and dip < 0.2 * g[0]
    label = classify(risk, wf, classifier).label
    near = bool(is_min and np.linalg.norm(wf - w_min) < np.linalg.norm(wf - saddle))
    recovered = esc > 0 and label == "M" and near
    return {
        "g0": float(g[0]),
        "dip": dip,
        "dip_iter": i_dip,
        "escape_iter": esc,
        "peak_after_dip": float(np.max(gs[i_dip:])),
        "final_label": label,
        "final_near_minimizer": near,
        "minimizer": w_min,
        "slowdown": bool(slowdown),
        "recovered": bool(recovered),
        "pass": bool(slowdown and recovered),
    }


def reproduce(cfg: ExperimentConfig, replicas: int | None = None, strategies=STRATEGIES, keep_records: int = 1, saddle=None):
    """Run every strategy for ``replicas`` seeded replicas and score each run.

    Returns ``{strategy: {"metrics": [...], "records": [...], "classifier": cfg}}``
    where ``records`` keeps the first ``keep_records`` trajectories.
    """
    replicas = cfg.replicas if replicas is None else replicas
    saddle = np.zeros(cfg.dimension) if saddle is None else saddle
    out = {}
    for s in strategies:
        exp = Experiment(dataclasses.replace(cfg, strategy=s))
        metrics, records = [], []
        for r in range(replicas):
            rec = exp.run_replica(r)
            metrics.append(slowdown_metrics(rec, exp.risk, exp.classifier, saddle))
            if r < keep_records:
                records.append(rec)
        out[s] = {"metrics": metrics, "records": records, "classifier": exp.classifier, "experiment": exp}
    return out

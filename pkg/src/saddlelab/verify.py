"""Monte Carlo checks of the descent, escape, arrival and disagreement guarantees.

Each check runs independent replicas on disjoint random streams, reduces them
into point estimates with standard errors and compares those against the
corresponding theoretical quantity. Bounds are treated as one-sided
inequalities with explicit slack because they only hold up to higher-order
terms in the step size.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError
from .graph import CombinationMatrix, combination_matrix
from .landscape import CENTRALIZED, DECENTRALIZED, ClassifierConfig, arrival_budget, classify, escape_time_bound
from .oracle import (
    FederatedOracle,
    GradientOracle,
    MiniBatchOracle,
    PerturbedOracle,
    estimate_noise_stats,
    fit_noise_bounds,
    negative_curvature_noise,
)
from .risk import RiskFunction, estimate_smoothness, weighted_risk
from .rng import stream
from .strategies import TrajectoryRecord, detect_burn_in, run_centralized, run_diffusion, run_federated

__all__ = [
    "MonteCarloPlan",
    "CheckResult",
    "Report",
    "StrategyRunner",
    "central_runner",
    "federated_runner",
    "diffusion_runner",
    "check_descent_in_G",
    "check_escape_from_H",
    "check_second_order_arrival",
    "check_disagreement_bound",
    "check_noise_laws",
    "check_perron",
    "escape_trials",
    "unstable_growth",
    "calibrate_classifier",
    "grid_minimum",
    "write_report_csv",
]

MIN_ASSERT_REPLICAS = 30
REPORT_HEADER = ["metric", "estimate", "stderr", "replicas", "bound", "pass"]
# one-sided 95% normal quantile, used for the binomial slack of visit fractions
Z_ONE_SIDED_95 = 1.6448536269514722
# disagreement below this is rounding in the Perron-weighted average, not spread
ROUNDING_ZERO = 1e-20

# stream ids per check so that different checks never share draws
_STREAM = {"descent": 1, "escape": 2, "arrival": 3, "disagreement": 4, "noise": 5, "bootstrap": 6, "starts": 7}


@dataclass(frozen=True)
class MonteCarloPlan:
    """Replication plan.

    Parameters
    ----------
    R : int
        Number of replicas. Assertions need ``R >= 30``.
    seed_root : int
        Root seed; replica ``r`` of a check uses stream ``(check, r)``.
    confidence_mult : float
        Multiplier on standard errors in one-sided assertions.
    budget_mult : float
        Multiplier on theoretical iteration bounds.
    """

    R: int
    seed_root: int = 0
    confidence_mult: float = 4.0
    budget_mult: float = 3.0

    def __post_init__(self):
        if int(self.R) != self.R or self.R < 1:
            raise ConfigurationError("R must be a positive integer")
        if self.seed_root < 0:
            raise ConfigurationError("seed_root must be non-negative")
        if self.confidence_mult <= 0 or self.budget_mult <= 0:
            raise ConfigurationError("confidence_mult and budget_mult must be positive")

    @property
    def asserting(self) -> bool:
        return self.R >= MIN_ASSERT_REPLICAS

    def rng(self, check: str, replica: int = 0, *extra: int) -> np.random.Generator:
        return stream(self.seed_root, _STREAM[check], replica, *extra)


@dataclass
class CheckResult:
    metric: str
    estimate: float
    stderr: float
    replicas: int
    bound: object
    passed: bool | None
    note: str = ""


@dataclass
class Report:
    """Outcome of one check.

    ``status`` is one of ``pass``, ``fail``, ``inconclusive``, ``degenerate``
    or ``untestable``; only ``fail`` counts as a violated assertion.
    """

    check: str
    results: list
    status: str = ""
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.status:
            verdicts = [r.passed for r in self.results if r.passed is not None]
            if any(v is False for v in verdicts):
                self.status = "fail"
            elif verdicts:
                self.status = "pass"
            else:
                self.status = "inconclusive"

    @property
    def passed(self) -> bool:
        return self.status != "fail"

    def result(self, metric: str) -> CheckResult:
        for r in self.results:
            if r.metric == metric:
                return r
        raise KeyError(metric)

    def summary(self) -> str:
        lines = [f"check {self.check}: {self.status.upper()}"]
        for r in self.results:
            verdict = {True: "pass", False: "FAIL", None: "info"}[r.passed]
            line = f"  [{verdict}] {r.metric} = {r.estimate:.6g} +/- {r.stderr:.3g} (R={r.replicas}, bound {_fmt_bound(r.bound)})"
            if r.note:
                line += f"  # {r.note}"
            lines.append(line)
        return "\n".join(lines)


def _fmt_bound(b) -> str:
    if isinstance(b, (float, np.floating)):
        return format(float(b), ".6g")
    return str(b)


def write_report_csv(report: Report, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(REPORT_HEADER)
        for r in report.results:
            verdict = "" if r.passed is None else str(bool(r.passed)).lower()
            wr.writerow(
                [r.metric, format(float(r.estimate), ".17g"), format(float(r.stderr), ".17g"), r.replicas, _fmt_bound(r.bound), verdict]
            )


# ---------------------------------------------------------------------------
# strategy runners


@dataclass
class StrategyRunner:
    """Uniform handle on one strategy at a given step size.

    ``run_fn(mu, w0, steps, rng, stop)`` returns a :class:`TrajectoryRecord`.
    ``noise_oracle`` and ``noise_scale`` describe the gradient noise driving
    the (centroid) recursion: its covariance is ``noise_scale`` times that of
    ``noise_oracle``.
    """

    name: str
    risk: RiskFunction
    mu: float
    run_fn: Callable
    regime: str = CENTRALIZED
    noise_oracle: GradientOracle | None = None
    noise_scale: float = 1.0

    def run(self, w0, steps: int, rng, stop=None, mu: float | None = None) -> TrajectoryRecord:
        return self.run_fn(self.mu if mu is None else mu, w0, steps, rng, stop)

    def with_mu(self, mu: float) -> "StrategyRunner":
        return StrategyRunner(self.name, self.risk, mu, self.run_fn, self.regime, self.noise_oracle, self.noise_scale)


def central_runner(risk: RiskFunction, oracle: GradientOracle, mu: float) -> StrategyRunner:
    def fn(mu, w0, steps, rng, stop):
        return run_centralized(risk, oracle, mu, steps, rng, w0, eval_stride=0, stop=stop)

    return StrategyRunner("central", risk, mu, fn, CENTRALIZED, oracle)


def federated_runner(agents, L: int, B: int, p, mu: float, protocol: str = "three-step") -> StrategyRunner:
    oracle = agents if isinstance(agents, FederatedOracle) else FederatedOracle(agents, L, B, p)

    def fn(mu, w0, steps, rng, stop):
        return run_federated(oracle, L, B, p, mu, steps, rng, w0, eval_stride=0, protocol=protocol, stop=stop)

    return StrategyRunner("federated", oracle.target, mu, fn, CENTRALIZED, oracle)


def diffusion_runner(oracles, A, mu: float, risk: RiskFunction | None = None) -> StrategyRunner:
    cm = A if isinstance(A, CombinationMatrix) else combination_matrix(A)
    single = isinstance(oracles, GradientOracle)
    if risk is None:
        if single:
            risk = oracles.target
        else:
            risk = weighted_risk([o.target for o in oracles], cm.perron)

    def fn(mu, w0, steps, rng, stop):
        return run_diffusion(oracles, cm, mu, steps, rng, w0, eval_stride=0, risk=risk, stop=stop)

    # identical agents with independent noise: the centroid sees sum_k p_k^2 of one agent's covariance
    scale = float(np.sum(cm.perron**2)) if single else 1.0
    return StrategyRunner("diffusion", risk, mu, fn, DECENTRALIZED, oracles if single else None, scale)


def _check_runner(runner: StrategyRunner, cfg: ClassifierConfig):
    if not math.isclose(runner.mu, cfg.mu, rel_tol=1e-12):
        raise ConfigurationError(f"runner step size {runner.mu} differs from the classifier's {cfg.mu}")
    if runner.regime != cfg.regime:
        raise ConfigurationError(f"{runner.name} needs a {runner.regime} classifier, got {cfg.regime}")


def _label(risk, w, cfg) -> str:
    # cheap gradient test first, Hessian only when the gradient is small
    g = risk.gradient(w)
    if g @ g >= cfg.threshold:
        return "G"
    return classify(risk, w, cfg).label


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else float("nan")
    return float(x.mean()), se


# ---------------------------------------------------------------------------
# calibration helpers


def calibrate_classifier(
    risk: RiskFunction,
    oracle: GradientOracle,
    mu: float,
    tau: float = 0.1,
    pi: float = 0.1,
    regime: str = CENTRALIZED,
    box=(-1.5, 1.5),
    probes: int = 5,
    N: int = 20_000,
    rng: np.random.Generator | None = None,
    noise_scale: float = 1.0,
) -> ClassifierConfig:
    """Classifier constants estimated on a box.

    ``delta`` is the largest Hessian norm on a grid of the box and
    ``(beta_sq, sigma_sq)`` is the noise envelope fitted over a
    ``probes x probes`` grid of points. ``noise_scale`` rescales the fitted
    envelope (e.g. to the centroid noise of a diffusion network).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    lo, hi = float(box[0]), float(box[1])
    M = risk.dimension
    smooth = estimate_smoothness(risk, [lo] * M, [hi] * M, points=41 if M <= 2 else 7, pairs=200, rng=rng)
    axes = [np.linspace(lo, hi, probes)] * M
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, M)
    fit = fit_noise_bounds(oracle, pts, N, rng)
    return ClassifierConfig(
        mu=mu,
        tau=tau,
        pi=pi,
        delta=smooth.delta,
        beta_sq=fit["beta_sq"] * noise_scale,
        sigma_sq=fit["sigma_sq"] * noise_scale,
        regime=regime,
        provenance={"delta": f"max Hessian norm on [{lo}, {hi}]^{M}", "beta_sq": "fitted", "sigma_sq": "fitted"},
    )


def grid_minimum(risk: RiskFunction, lower: float = -3.0, upper: float = 3.0, points: int = 401, refine_steps: int = 5000):
    """Global minimum of a two-parameter risk by grid search plus descent.

    Returns ``(J_min, w_min)``. The best grid point is refined by gradient
    descent with backtracking.
    """
    if risk.dimension != 2:
        raise ConfigurationError("grid minimization is provided for two-parameter risks only")
    xs = np.linspace(lower, upper, points)
    best, w_best = math.inf, None
    for x in xs:
        for y in xs:
            v = risk.value((x, y))
            if v < best:
                best, w_best = v, np.array([x, y])
    w, J = w_best, best
    step = 1.0
    for _ in range(refine_steps):
        g = risk.gradient(w)
        gn2 = float(g @ g)
        if gn2 < 1e-24:
            break
        while step > 1e-12:
            cand = w - step * g
            Jc = risk.value(cand)
            if Jc <= J - 0.5 * step * gn2:
                w, J = cand, Jc
                step *= 2.0
                break
            step *= 0.5
        else:
            break
    return float(J), w


# ---------------------------------------------------------------------------
# descent in G


def check_descent_in_G(
    runner: StrategyRunner,
    cfg: ClassifierConfig,
    plan: MonteCarloPlan,
    start=None,
    box=(-3.0, 3.0),
    slack: float = 0.5,
    max_draws: int = 100_000,
) -> Report:
    """One-step expected descent from large-gradient points.

    Starting points come from ``start`` (which must lie in G) or are
    rejection-sampled uniformly from ``box`` until ``R`` points land in G.
    Asserts ``mean dJ + confidence_mult * stderr <= -slack * mu^2 c2 / pi``.
    """
    _check_runner(runner, cfg)
    risk = runner.risk
    M = risk.dimension
    if start is not None:
        start = np.asarray(start, dtype=float)
        if _label(risk, start, cfg) != "G":
            raise ConfigurationError(f"start point {start.tolist()} is not in the large-gradient set")
        starts = [start] * plan.R
    else:
        srng = plan.rng("starts")
        starts, draws = [], 0
        while len(starts) < plan.R:
            if draws >= max_draws:
                raise ConfigurationError(f"found {len(starts)} large-gradient points in {max_draws} draws; need {plan.R}")
            w = srng.uniform(box[0], box[1], M)
            draws += 1
            if _label(risk, w, cfg) == "G":
                starts.append(w)

    dJ = np.empty(plan.R)
    for r, w0 in enumerate(starts):
        rec = runner.run(w0, 1, plan.rng("descent", r))
        dJ[r] = rec.risk[1] - rec.risk[0]
    est, se = _mean_se(dJ)
    bound = -slack * cfg.mu**2 * cfg.c2 / cfg.pi
    ok = est + plan.confidence_mult * se <= bound if plan.asserting else None
    results = [
        CheckResult("mean_delta_J", est, se, plan.R, bound, ok, f"slack {slack}"),
        CheckResult("fraction_descending", float(np.mean(dJ < 0)), float("nan"), plan.R, "", None),
    ]
    return Report("descent", results, details={"delta_J": dJ})


# ---------------------------------------------------------------------------
# escape from H


def unstable_growth(mu: float, curvature: float, noise_var: float, i) -> np.ndarray:
    """Closed-form second moment along an unstable eigendirection.

    Starting exactly at the saddle with noise-free gradients plus independent
    perturbations of variance ``noise_var`` along the direction, the projection
    obeys ``x_i = (1 + mu |curvature|) x_{i-1} + mu v_i`` so
    ``E x_i^2 = noise_var mu^2 ((1+mu|c|)^(2i) - 1) / ((1+mu|c|)^2 - 1)``.
    """
    a = 1.0 + mu * abs(curvature)
    i = np.asarray(i, dtype=float)
    return noise_var * mu**2 * (a ** (2 * i) - 1.0) / (a * a - 1.0)


def _estimate_sigma_l(runner: StrategyRunner, w, N: int, rng) -> float:
    if runner.noise_oracle is None:
        raise ConfigurationError("sigma_l^2 must be given for runners without a shared noise oracle")
    st = estimate_noise_stats(runner.noise_oracle, w, N, rng)
    return negative_curvature_noise(runner.risk, w, st.covariance * runner.noise_scale)


def escape_trials(runner: StrategyRunner, w_H, cfg: ClassifierConfig, budget: int, plan: MonteCarloPlan, probes=()):
    """Run replicas from ``w_H`` until they escape (and pass every probe iteration).

    A replica has escaped at the first iteration whose (centroid) iterate is
    outside H with risk below ``J(w_H)``. Returns the escape iteration per
    replica (``-1`` if none within ``budget``) and the iterates at each probe
    iteration as an array of shape ``(R, len(probes), M)`` (NaN when a replica
    stopped earlier, which only happens after the last probe).
    """
    risk = runner.risk
    w_H = np.asarray(w_H, dtype=float)
    J_H = risk.value(w_H)
    last_probe = max(probes, default=0)
    esc = np.full(plan.R, -1, dtype=int)
    at = np.full((plan.R, len(probes), w_H.size), np.nan)
    for r in range(plan.R):
        hit = [-1]

        def stop(i, w, _lab, hit=hit):
            if hit[0] < 0 and risk.value(w) < J_H and _label(risk, w, cfg) != "H":
                hit[0] = i
            return hit[0] >= 0 and i >= last_probe

        rec = runner.run(w_H, budget, plan.rng("escape", r), stop=stop)
        esc[r] = hit[0]
        for j, t in enumerate(probes):
            if t < len(rec.centroid):
                at[r, j] = rec.centroid[t]
    return esc, at


def check_escape_from_H(
    runner: StrategyRunner,
    w_H,
    cfg: ClassifierConfig,
    plan: MonteCarloPlan,
    sigma_l_sq: float | None = None,
    noise_samples: int = 20_000,
    slack: float = 0.5,
    growth_direction=None,
) -> Report:
    """Escape from a strict saddle within ``budget_mult * i^s`` iterations.

    Reports the escape fraction (asserted ``>= 1 - pi``), the mean risk change
    after ``i^s`` iterations against ``-mu/2 M sigma^2`` (asserted with
    ``slack``), and the median escape iteration. With ``growth_direction``
    (a unit eigenvector of negative curvature) the measured second moment of
    the projection at ``i^s / 2`` is compared with :func:`unstable_growth`,
    which is exact for quadratics driven by noise-free gradients plus
    independent perturbations; it must agree within 10%.
    """
    _check_runner(runner, cfg)
    risk = runner.risk
    w_H = np.asarray(w_H, dtype=float)
    lab = classify(risk, w_H, cfg)
    if lab.label != "H":
        raise ConfigurationError(f"w_H is labeled {lab.label}, not a strict saddle (lambda_min={lab.lambda_min:.4g})")
    if sigma_l_sq is None:
        sigma_l_sq = _estimate_sigma_l(runner, w_H, noise_samples, plan.rng("noise"))
    if not sigma_l_sq > 1e-12:
        raise ConfigurationError(
            "gradient noise has no component along the negative-curvature directions at w_H "
            f"(sigma_l^2={sigma_l_sq:.3g}); escape is not guaranteed without it"
        )
    M = risk.dimension
    i_s = escape_time_bound(M, cfg.sigma_sq, sigma_l_sq, cfg.mu, cfg.tau)
    budget = int(math.ceil(plan.budget_mult * i_s))
    i_half = int(i_s // 2)
    i_s_int = int(math.ceil(i_s))
    esc, at = escape_trials(runner, w_H, cfg, budget, plan, probes=(i_half, i_s_int))

    frac = float(np.mean(esc >= 0))
    se_frac = math.sqrt(max(frac * (1 - frac), 0.0) / plan.R)
    ok = frac >= 1 - cfg.pi if plan.asserting else None
    results = [CheckResult("escape_fraction", frac, se_frac, plan.R, 1 - cfg.pi, ok, f"budget {budget} = {plan.budget_mult} i^s")]

    J_H = risk.value(w_H)
    reached = ~np.isnan(at[:, 1, 0])
    dJ = np.array([risk.value(w) - J_H for w in at[reached, 1]])
    est, se = _mean_se(dJ) if len(dJ) else (float("nan"), float("nan"))
    bound = -0.5 * cfg.mu * M * cfg.sigma_sq
    ok = (est + plan.confidence_mult * se <= slack * bound) if plan.asserting and len(dJ) > 1 else None
    results.append(CheckResult("mean_delta_J_at_is", est, se, int(reached.sum()), slack * bound, ok, f"i^s={i_s:.1f}, slack {slack}"))

    escaped = esc[esc >= 0]
    med = float(np.median(escaped)) if len(escaped) else float("nan")
    results.append(CheckResult("median_escape_iter", med, float("nan"), len(escaped), i_s, None, "bound column holds i^s"))

    if growth_direction is not None:
        u = np.asarray(growth_direction, dtype=float)
        u = u / np.linalg.norm(u)
        curv = float(u @ risk.hessian(w_H) @ u)
        noise = float(u @ runner.noise_oracle.R_v @ u) * runner.noise_scale if isinstance(runner.noise_oracle, PerturbedOracle) else sigma_l_sq
        x2 = ((at[:, 0] - w_H) @ u) ** 2
        est, se = _mean_se(x2)
        want = float(unstable_growth(cfg.mu, curv, noise, i_half))
        ok = abs(est - want) <= 0.1 * want
        results.append(CheckResult("unstable_second_moment", est, se, plan.R, want, ok, f"at i={i_half}, 10% tolerance"))

    return Report(
        "escape",
        results,
        details={"escape_iter": esc, "i_s": i_s, "budget": budget, "sigma_l_sq": sigma_l_sq},
    )


# ---------------------------------------------------------------------------
# arrival in M


def check_second_order_arrival(
    runner: StrategyRunner,
    w0,
    cfg: ClassifierConfig,
    plan: MonteCarloPlan,
    J_opt: float | None = None,
    sigma_l_sq: float | None = None,
    saddle=None,
    escape_time: float | None = None,
    hard_cap: int = 10**7,
    noise_samples: int = 20_000,
) -> Report:
    """Fraction of replicas that visit M within the arrival budget ``i^o``.

    ``i^s`` is taken from ``escape_time`` when given, otherwise computed with
    ``sigma_l_sq`` (estimated at ``saddle``, default ``w0``, when omitted).
    ``J_opt`` defaults to :func:`grid_minimum`. The visit fraction must reach
    ``1 - pi`` minus a one-sided 95% binomial margin.
    """
    _check_runner(runner, cfg)
    risk = runner.risk
    w0 = np.asarray(w0, dtype=float)
    if escape_time is None:
        if sigma_l_sq is None:
            at = w0 if saddle is None else np.asarray(saddle, dtype=float)
            sigma_l_sq = _estimate_sigma_l(runner, at, noise_samples, plan.rng("noise"))
        if not sigma_l_sq > 1e-12:
            raise ConfigurationError(
                f"sigma_l^2={sigma_l_sq:.3g}: no noise along negative curvature; pass escape_time explicitly"
            )
        escape_time = escape_time_bound(risk.dimension, cfg.sigma_sq, sigma_l_sq, cfg.mu, cfg.tau)
    if J_opt is None:
        J_opt, _ = grid_minimum(risk)
    i_o = arrival_budget(risk.value(w0), J_opt, cfg, escape_time)
    details = {"i_o": i_o, "i_s": escape_time, "J_opt": J_opt}
    if i_o > hard_cap:
        res = CheckResult("visit_fraction", float("nan"), float("nan"), 0, 1 - cfg.pi, None, f"budget {i_o:.3g} exceeds cap {hard_cap}")
        return Report("arrival", [res], status="untestable", details=details)
    budget = max(int(math.ceil(i_o)), 1)

    arrive = np.full(plan.R, -1, dtype=int)
    spread = np.full(plan.R, np.nan)
    for r in range(plan.R):
        hit = [-1]

        def stop(i, w, _l, hit=hit):
            if _label(risk, w, cfg) == "M":
                hit[0] = i
                return True
            return False

        rec = runner.run(w0, budget, plan.rng("arrival", r), stop=stop)
        arrive[r] = hit[0]
        if hit[0] >= 0 and rec.iterates.ndim == 3:
            W = rec.iterates[hit[0]]
            spread[r] = float(np.max(np.linalg.norm(W - rec.centroid[hit[0]], axis=1)))

    frac = float(np.mean(arrive >= 0))
    se = math.sqrt(max(frac * (1 - frac), 0.0) / plan.R)
    floor = 1 - cfg.pi - Z_ONE_SIDED_95 * math.sqrt(cfg.pi * (1 - cfg.pi) / plan.R)
    ok = frac >= floor if plan.asserting else None
    results = [CheckResult("visit_fraction", frac, se, plan.R, floor, ok, f"budget {budget}")]
    hits = arrive[arrive >= 0]
    if len(hits):
        results.append(CheckResult("median_arrival_iter", float(np.median(hits)), float("nan"), len(hits), budget, None))
    if np.any(~np.isnan(spread)):
        s = spread[~np.isnan(spread)] / cfg.mu
        m, e = _mean_se(s)
        results.append(CheckResult("agent_deviation_over_mu", m, e, len(s), "", None, "max_k ||w_k - w_c|| / mu at arrival"))
    details["arrival_iter"] = arrive
    return Report("arrival", results, details=details)


# ---------------------------------------------------------------------------
# network disagreement


def check_disagreement_bound(
    runner: StrategyRunner,
    cfg: ClassifierConfig,
    plan: MonteCarloPlan,
    w0,
    steps: int = 400,
    window: int = 50,
    rel_change: float = 0.01,
    band=(2.5, 6.0),
    bootstrap: int = 1000,
) -> Report:
    """Steady-state mean-square disagreement at ``mu`` and ``mu/2``.

    The burn-in is detected on the replica-averaged curve. The ratio of the
    post-burn-in means must lie in ``band`` (an order-``mu^2`` bound predicts
    4). No detectable burn-in gives an inconclusive report; identically zero
    disagreement gives a ``degenerate`` one.
    """
    if runner.name != "diffusion":
        raise ConfigurationError("the disagreement check needs a diffusion runner")
    _check_runner(runner, cfg)
    curves = {}
    for j, mu in enumerate((cfg.mu, cfg.mu / 2)):
        curves[mu] = np.array(
            [runner.run(w0, steps, plan.rng("disagreement", r, j), mu=mu).disagreement_ms for r in range(plan.R)]
        )
    levels, burns = [], []
    for mu, C in curves.items():
        if np.max(np.abs(C)) <= ROUNDING_ZERO:
            levels.append(np.zeros(plan.R))
            burns.append(0)
            continue
        b = detect_burn_in(C.mean(axis=0), window, rel_change)
        burns.append(b)
        levels.append(None if b is None else C[:, b:].mean(axis=1))
    details = {"burn_in": burns, "curves": curves}
    if any(lv is None for lv in levels):
        res = CheckResult("disagreement_ratio", float("nan"), float("nan"), plan.R, f"{band[0]}..{band[1]}", None, "no burn-in detected")
        return Report("disagreement", [res], status="inconclusive", details=details)
    (m1, s1), (m2, s2) = _mean_se(levels[0]), _mean_se(levels[1])
    results = [
        CheckResult("ms_disagreement_mu", m1, s1, plan.R, "", None, f"burn-in {burns[0]}"),
        CheckResult("ms_disagreement_half_mu", m2, s2, plan.R, "", None, f"burn-in {burns[1]}"),
    ]
    if m1 == 0 and m2 == 0:
        results.append(CheckResult("disagreement_ratio", float("nan"), float("nan"), plan.R, f"{band[0]}..{band[1]}", None, "degenerate zero"))
        return Report("disagreement", results, status="degenerate", details=details)
    ratio = m1 / m2
    se = ratio * math.sqrt((s1 / m1) ** 2 + (s2 / m2) ** 2)
    brng = plan.rng("bootstrap")
    idx = brng.integers(0, plan.R, size=(bootstrap, plan.R))
    boot = levels[0][idx].mean(axis=1) / levels[1][idx].mean(axis=1)
    lo, hi = np.percentile(boot, [2.5, 97.5])
    details["bootstrap_ci"] = (float(lo), float(hi))
    ok = band[0] <= ratio <= band[1] if plan.asserting else None
    results.append(CheckResult("disagreement_ratio", ratio, se, plan.R, f"{band[0]}..{band[1]}", ok, f"bootstrap 95% CI [{lo:.3f}, {hi:.3f}]"))
    return Report("disagreement", results, details=details)


# ---------------------------------------------------------------------------
# oracle and network sanity checks


def check_noise_laws(oracle: GradientOracle, w, plan: MonteCarloPlan, N: int = 100_000) -> Report:
    """Unbiasedness of the gradient noise, plus covariance laws where they apply.

    Mini-batch oracles: ``B * tr(R_B) / tr(R_1)`` within 20% of one.
    Perturbed oracles: ``R = R_base + R_v`` within 5% (relative Frobenius).
    """
    w = np.asarray(w, dtype=float)
    rng = plan.rng("noise")
    st = estimate_noise_stats(oracle, w, N, rng)
    results = []
    for m in range(len(st.mean)):
        se = float(st.stderr[m])
        ok = abs(st.mean[m]) <= plan.confidence_mult * se if se > 0 else abs(st.mean[m]) < 1e-12
        results.append(CheckResult(f"noise_mean_{m}", float(st.mean[m]), se, N, 0.0, bool(ok)))
    if isinstance(oracle, MiniBatchOracle):
        base = estimate_noise_stats(oracle.base, w, N, rng).covariance
        t1 = float(np.trace(base))
        ratio = oracle.B * float(np.trace(st.covariance)) / t1 if t1 > 0 else float("nan")
        results.append(CheckResult("batch_covariance_ratio", ratio, float("nan"), N, 1.0, bool(abs(ratio - 1) <= 0.2), f"B={oracle.B}, 20% tolerance"))
    if isinstance(oracle, PerturbedOracle):
        base = estimate_noise_stats(oracle.base, w, N, rng).covariance
        want = base + oracle.R_v
        err = float(np.linalg.norm(st.covariance - want) / np.linalg.norm(want))
        results.append(CheckResult("covariance_additivity_error", err, float("nan"), N, 0.05, err <= 0.05, "relative Frobenius"))
    return Report("noise", results, details={"stats": st})


def check_perron(matrices, residual_tol: float = 1e-10, sum_tol: float = 1e-12) -> Report:
    """Perron-vector invariants over a collection of combination matrices."""
    if isinstance(matrices, (CombinationMatrix, np.ndarray)):
        matrices = [matrices]
    cms = [m if isinstance(m, CombinationMatrix) else combination_matrix(m) for m in matrices]
    res = [float(np.linalg.norm(c.A @ c.perron - c.perron)) for c in cms]
    sums = [abs(float(c.perron.sum()) - 1.0) for c in cms]
    mins = [float(c.perron.min()) for c in cms]
    ds = [float(np.max(np.abs(c.perron - 1.0 / c.K))) for c in cms if c.doubly_stochastic]
    n = len(cms)
    results = [
        CheckResult("max_residual", max(res), float("nan"), n, residual_tol, max(res) <= residual_tol),
        CheckResult("max_sum_error", max(sums), float("nan"), n, sum_tol, max(sums) <= sum_tol),
        CheckResult("min_entry", min(mins), float("nan"), n, 0.0, min(mins) > 0),
    ]
    if ds:
        results.append(CheckResult("doubly_stochastic_error", max(ds), float("nan"), len(ds), sum_tol, max(ds) <= sum_tol))
    return Report("perron", results)

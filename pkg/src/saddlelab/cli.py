"""Command-line harness: ``saddlelab <command> [options]``.

Exit codes: 0 success, 1 failed assertion, 2 configuration error,
3 numerical divergence.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import platform
import sys

import numpy as np

from . import __version__
from .errors import ConfigurationError, DivergenceError, UnsupportedConfiguration
from .experiment import (
    STRATEGIES,
    Experiment,
    ExperimentConfig,
    apply_overrides,
    build_network,
    build_risk,
    dump_config,
    load_config,
    reproduce,
)
from .graph import ring_graph, uniform_neighbor_matrix, write_edge_list
from .landscape import classify
from .oracle import (
    FederatedOracle,
    cb_constant,
    estimate_noise_stats,
    exact_oracle,
    federated_noise_constants,
    fit_noise_bounds,
    minibatch_oracle,
    perturbed_oracle,
    sgd_oracle,
)
from .rng import stream
from .strategies import write_iterates_csv, write_trajectory_csv
from .verify import (
    MonteCarloPlan,
    check_descent_in_G,
    check_disagreement_bound,
    check_escape_from_H,
    check_noise_laws,
    check_perron,
    check_second_order_arrival,
    grid_minimum,
    write_report_csv,
)

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3
CHECKS = ("descent", "escape", "arrival", "disagreement", "noise", "perron")
ORACLES = ("exact", "sgd", "minibatch", "perturbed", "federated")
DEFAULT_R = {"descent": 1000, "escape": 2000, "arrival": 100, "disagreement": 100, "noise": 1, "perron": 1}

# flag name -> config key
_FLAGS = {
    "strategy": "strategy",
    "benchmark": "benchmark",
    "mu": "mu",
    "tau": "tau",
    "pi": "pi_param",
    "steps": "steps",
    "K": "K",
    "L": "L",
    "B": "B",
    "perturb_sigma": "perturb_sigma",
    "graph": "graph",
    "graph_rule": "graph_rule",
    "graph_seed": "graph_seed",
    "seed": "seed_root",
    "replicas": "replicas",
    "output_dir": "output_dir",
    "init": "init",
    "spectrum": "spectrum",
    "noise_std": "noise_std",
    "reg": "reg",
    "eval_stride": "eval_stride",
    "protocol": "protocol",
    "delta": "delta",
    "beta_sq": "beta_sq",
    "sigma_sq": "sigma_sq",
}

PLOT_TRAJECTORY = '''"""Gradient-norm and iterate evolution per strategy (needs matplotlib)."""
import csv
import glob
import math
import os

import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
fig, (ax_g, ax_w) = plt.subplots(1, 2, figsize=(11, 4))
for path in sorted(glob.glob(os.path.join(here, "trajectory_*.csv"))):
    name = os.path.basename(path)[len("trajectory_"):-4]
    it, gn, first = [], [], None
    with open(path) as fh:
        for row in csv.DictReader(fh):
            if row["agent"] != "":
                continue
            first = row["seed"] if first is None else first
            if row["seed"] == first:
                it.append(int(row["iter"]))
                gn.append(math.sqrt(float(row["grad_norm_sq"])))
    ax_g.semilogy(it, gn, label=name)
    ipath = os.path.join(here, "iterates_%s.csv" % name)
    if os.path.exists(ipath):
        with open(ipath) as fh:
            rows = [r for r in csv.DictReader(fh)]
        first = rows[0]["seed"]
        rows = [r for r in rows if r["seed"] == first]
        for key in [k for k in rows[0] if k.startswith("w")]:
            ax_w.plot([int(r["iter"]) for r in rows], [float(r[key]) for r in rows], label="%s %s" % (name, key))
ax_g.set_xlabel("iteration")
ax_g.set_ylabel("gradient norm")
ax_g.legend()
ax_w.set_xlabel("iteration")
ax_w.set_ylabel("parameter")
ax_w.legend(fontsize=7)
fig.tight_layout()
out = os.path.join(here, "trajectory.png")
fig.savefig(out, dpi=150)
print(out)
'''

PLOT_GRID = '''"""Three-colour map of the G/H/M decomposition (needs matplotlib)."""
import csv
import os

import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
colors = {"G": "#d9d9d9", "H": "#d62728", "M": "#1f77b4"}
with open(os.path.join(here, "classify_grid.csv")) as fh:
    rows = list(csv.DictReader(fh))
fig, ax = plt.subplots(figsize=(5, 5))
for lab, col in colors.items():
    pts = [(float(r["x"]), float(r["y"])) for r in rows if r["label"] == lab]
    if pts:
        xs, ys = zip(*pts)
        ax.scatter(xs, ys, s=6, c=col, marker="s", label=lab)
ax.set_xlabel("w1")
ax.set_ylabel("w2")
ax.legend()
fig.tight_layout()
out = os.path.join(here, "classify_grid.png")
fig.savefig(out, dpi=150)
print(out)
'''


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("experiment configuration (flags override --config)")
    g.add_argument("--config", help="key=value configuration file")
    g.add_argument("--strategy", choices=STRATEGIES)
    g.add_argument("--benchmark", choices=("quadratic", "logistic_net"))
    g.add_argument("--mu", type=float)
    g.add_argument("--tau", type=float)
    g.add_argument("--pi", type=float, help="failure probability pi of the arrival guarantee")
    g.add_argument("--steps", type=int)
    g.add_argument("--K", type=int, help="number of agents")
    g.add_argument("--L", type=int, help="federated participants per round")
    g.add_argument("--B", type=int, help="mini-batch size per agent")
    g.add_argument("--perturb-sigma", dest="perturb_sigma", type=float)
    g.add_argument("--graph", help="edge-list file or generator spec (tuned, ring, geometric:<r>, random:<p>)")
    g.add_argument("--graph-rule", dest="graph_rule", choices=("uniform", "hastings"))
    g.add_argument("--graph-seed", dest="graph_seed", type=int)
    g.add_argument("--seed", type=int, help="root seed")
    g.add_argument("--replicas", type=int)
    g.add_argument("--output-dir", "-o", dest="output_dir")
    g.add_argument("--init", help="initial point, e.g. 0.8,-0.8")
    g.add_argument("--spectrum", help="quadratic Hessian eigenvalues, e.g. 1,-1")
    g.add_argument("--noise-std", dest="noise_std", type=float)
    g.add_argument("--reg", type=float)
    g.add_argument("--eval-stride", dest="eval_stride", type=int)
    g.add_argument("--protocol", choices=("three-step", "combined"))
    g.add_argument("--delta", help="gradient Lipschitz constant or 'auto'")
    g.add_argument("--beta-sq", dest="beta_sq", help="relative noise bound or 'auto'")
    g.add_argument("--sigma-sq", dest="sigma_sq", help="absolute noise bound or 'auto'")


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    overrides = {key: getattr(args, flag, None) for flag, key in _FLAGS.items()}
    return apply_overrides(cfg, overrides).validate()


def write_metadata(cfg: ExperimentConfig, out_dir: str, extra: dict | None = None) -> None:
    """Config echo with every default resolved, plus provenance needed to re-run."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.txt"), "w") as fh:
        fh.write(dump_config(cfg))
    with open(os.path.join(out_dir, "metadata.txt"), "w") as fh:
        # provenance lines are comments so this file is itself a valid --config
        fh.write("# re-run with: saddlelab <command> --config metadata.txt\n")
        fh.write(dump_config(cfg))
        fh.write(f"# code_version={__version__}\n")
        fh.write(f"# python={platform.python_version()}\n")
        fh.write(f"# numpy={np.__version__}\n")
        fh.write("# rng=Philox via SeedSequence(entropy=seed_root, spawn_key=(replica,))\n")
        for k, v in (extra or {}).items():
            fh.write(f"# {k}={v}\n")


def _classifier_meta(exp: Experiment) -> dict:
    c = exp.classifier
    meta = {"resolved_delta": repr(c.delta), "resolved_beta_sq": repr(c.beta_sq), "resolved_sigma_sq": repr(c.sigma_sq)}
    meta["resolved_threshold"] = repr(c.threshold)
    if exp.mixing is not None:
        meta["mixing_rate"] = repr(exp.mixing)
    return meta


def _write_plot(out_dir, name, text):
    with open(os.path.join(out_dir, name), "w") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# commands


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    exp = Experiment(cfg)
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    write_metadata(cfg, out, _classifier_meta(exp))
    records = []
    for r in range(cfg.replicas):
        try:
            records.append(exp.run_replica(r))
        except DivergenceError as err:
            rec = err.record
            last = rec.centroid[-1] if rec is not None and len(rec.centroid) else None
            print(f"error: replica {r} diverged: {err}", file=sys.stderr)
            if last is not None:
                print(f"  last finite centroid {np.array2string(last)} at iteration {len(rec.centroid) - 1}", file=sys.stderr)
            print("  hint: lower --mu or the perturbation scale", file=sys.stderr)
            return EXIT_DIVERGED
    write_trajectory_csv(records, os.path.join(out, f"trajectory_{cfg.strategy}.csv"), per_agent=args.per_agent, risk=exp.risk)
    write_iterates_csv(records, os.path.join(out, f"iterates_{cfg.strategy}.csv"))
    _write_plot(out, "plot_trajectory.py", PLOT_TRAJECTORY)
    for rec in records:
        print(
            f"{cfg.strategy} seed={rec.seed} final J={rec.risk[-1]:.6f} "
            f"||grad||={np.sqrt(rec.grad_norm_sq[-1]):.4g} w={np.array2string(rec.centroid[-1], precision=4)}"
        )
    return EXIT_OK


def cmd_reproduce(args) -> int:
    """Every strategy for ``replicas`` runs, scored for slowdown-then-recovery."""
    cfg = resolve_config(args)
    if args.replicas is None and not args.config:
        cfg = dataclasses.replace(cfg, replicas=100)
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    try:
        res = reproduce(cfg, keep_records=args.keep)
    except DivergenceError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    write_metadata(cfg, out, {f"{s}_threshold": repr(v["classifier"].threshold) for s, v in res.items()})
    ok_all = True
    with open(os.path.join(out, "reproduction_summary.csv"), "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["strategy", "seed", "g0", "dip", "dip_iter", "escape_iter", "final_label", "near_minimizer", "slowdown", "recovered", "pass"])
        for s, v in res.items():
            write_trajectory_csv(v["records"], os.path.join(out, f"trajectory_{s}.csv"))
            write_iterates_csv(v["records"], os.path.join(out, f"iterates_{s}.csv"))
            for r, m in enumerate(v["metrics"]):
                wr.writerow([s, r, f"{m['g0']:.6g}", f"{m['dip']:.6g}", m["dip_iter"], m["escape_iter"], m["final_label"], m["final_near_minimizer"], m["slowdown"], m["recovered"], m["pass"]])
            n_ok = sum(m["pass"] for m in v["metrics"])
            need = int(np.ceil(0.9 * len(v["metrics"])))
            ok = n_ok >= need
            ok_all &= ok
            print(f"{s}: {n_ok}/{len(v['metrics'])} replicas show slowdown then recovery (need {need}) -> {'PASS' if ok else 'FAIL'}")
    _write_plot(out, "plot_trajectory.py", PLOT_TRAJECTORY)
    return EXIT_OK if ok_all else EXIT_ASSERT


def _noise_scale(cfg, strategy):
    return {"central": 1.0 / cfg.K, "federated": 1.0 / cfg.L}.get(strategy)


def _build_probe_oracle(kind, cfg, risk):
    if kind == "exact":
        return exact_oracle(risk)
    if kind == "sgd":
        return sgd_oracle(risk)
    if kind == "minibatch":
        return minibatch_oracle(risk, cfg.B)
    if kind == "perturbed":
        return perturbed_oracle(sgd_oracle(risk), cfg.perturb_sigma**2 * np.eye(risk.dimension))
    return FederatedOracle([sgd_oracle(risk)] * cfg.K, cfg.L, cfg.B)


def cmd_verify(args) -> int:
    cfg = resolve_config(args)
    check = args.check
    R = args.R if args.R is not None else DEFAULT_R[check]
    plan = MonteCarloPlan(R=R, seed_root=cfg.seed_root)
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    risk = build_risk(cfg)

    if check == "perron":
        mats = [uniform_neighbor_matrix(ring_graph(3))]
        if args.graph is not None or args.config:
            mats.append(build_network(cfg)[0])
        report = check_perron(mats)
    elif check == "noise":
        oracle = _build_probe_oracle(args.oracle, cfg, risk)
        report = check_noise_laws(oracle, np.array(cfg.init), plan, N=args.N)
    else:
        exp = Experiment(cfg)
        runner = exp.runner()
        ccfg = exp.classifier
        origin = np.zeros(risk.dimension)
        if check == "descent":
            start = None if args.sample_starts else np.array(cfg.init)
            if start is not None and classify(risk, start, ccfg).label != "G":
                start = None
            report = check_descent_in_G(runner, ccfg, plan, start=start)
        elif check == "escape":
            kw = {}
            if cfg.benchmark == "quadratic":
                lam = np.array(cfg.spectrum)
                scale = _noise_scale(cfg, cfg.strategy) or float(np.sum(exp.network.perron**2))
                kw["sigma_l_sq"] = (cfg.perturb_sigma**2 + cfg.noise_std**2 / cfg.B) * scale
                if cfg.noise_std == 0 and lam.min() < 0:
                    kw["growth_direction"] = np.eye(len(lam))[int(np.argmin(lam))]
            report = check_escape_from_H(runner, origin, ccfg, plan, **kw)
        elif check == "arrival":
            kw = {}
            if cfg.benchmark == "quadratic" and min(cfg.spectrum) > 0:
                kw["escape_time"] = 1.0  # no saddle to escape from
            report = check_second_order_arrival(runner, np.array(cfg.init), ccfg, plan, saddle=origin, **kw)
        else:
            if cfg.strategy != "diffusion":
                raise ConfigurationError("the disagreement check needs --strategy diffusion")
            # steady state around the global minimizer
            w0 = grid_minimum(risk)[1] if cfg.benchmark == "logistic_net" else np.array(cfg.init)
            report = check_disagreement_bound(runner, ccfg, plan, w0, steps=args.disagreement_steps)

    base = os.path.join(out, f"verify_{check}")
    write_report_csv(report, base + ".csv")
    text = report.summary()
    with open(base + ".txt", "w") as fh:
        fh.write(text + "\n")
    print(text)
    return EXIT_ASSERT if report.status == "fail" else EXIT_OK


def cmd_classify_grid(args) -> int:
    cfg = resolve_config(args)
    if cfg.dimension != 2:
        raise UnsupportedConfiguration(f"classify-grid needs a two-parameter benchmark, this one has {cfg.dimension}")
    exp = Experiment(cfg)
    ccfg = exp.classifier
    xs = np.linspace(args.lower, args.upper, args.points)
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    counts = {"G": 0, "H": 0, "M": 0}
    with open(os.path.join(out, "classify_grid.csv"), "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["x", "y", "label", "grad_norm_sq", "lambda_min"])
        for x in xs:
            for y in xs:
                lab = classify(exp.risk, (x, y), ccfg)
                counts[lab.label] += 1
                wr.writerow([format(x, ".17g"), format(y, ".17g"), lab.label, format(lab.grad_norm_sq, ".17g"), format(lab.lambda_min, ".17g")])
    write_metadata(cfg, out, {**_classifier_meta(exp), "grid": f"{args.lower}..{args.upper} x{args.points}"})
    _write_plot(out, "plot_classify_grid.py", PLOT_GRID)
    print(f"G={counts['G']} H={counts['H']} M={counts['M']} complement_of_G={counts['H'] + counts['M']} threshold={ccfg.threshold:.6g}")
    return EXIT_OK


def cmd_graph_gen(args) -> int:
    cfg = resolve_config(args)
    cm, adj, rate = build_network(cfg)
    path = args.out or os.path.join(cfg.output_dir, "graph.txt")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    write_edge_list(adj, path)
    edges = int((np.count_nonzero(adj) - np.count_nonzero(np.diag(adj))) // 2)
    print(f"K={cm.K} edges={edges} mixing_rate={rate:.6f} perron_min={cm.perron.min():.6g} perron_max={cm.perron.max():.6g} -> {path}")
    return EXIT_OK


def _parse_points(text, default):
    if not text:
        return np.atleast_2d(np.asarray(default, dtype=float))
    try:
        return np.array([[float(v) for v in chunk.split(",")] for chunk in text.split(";") if chunk.strip()])
    except ValueError:
        raise ConfigurationError(f"cannot parse points {text!r}; use x,y;x,y") from None


def cmd_noise_probe(args) -> int:
    cfg = resolve_config(args)
    risk = build_risk(cfg)
    oracle = _build_probe_oracle(args.oracle, cfg, risk)
    pts = _parse_points(args.points, cfg.init)
    if pts.shape[1] != risk.dimension:
        raise ConfigurationError(f"points must have {risk.dimension} coordinates")
    rng = stream(cfg.seed_root, 50)
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    M = risk.dimension
    with open(os.path.join(out, "noise_probe.csv"), "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        header = [f"w{m}" for m in range(M)] + [f"mean_{m}" for m in range(M)] + [f"stderr_{m}" for m in range(M)]
        header += [f"cov_{a}{b}" for a in range(M) for b in range(M)] + ["second_moment", "fourth_moment", "grad_norm_sq"]
        wr.writerow(header)
        for w in pts:
            st = estimate_noise_stats(oracle, w, args.N, rng)
            g = risk.gradient(w)
            row = list(w) + list(st.mean) + list(st.stderr) + list(st.covariance.ravel()) + [st.second_moment, st.fourth_moment, float(g @ g)]
            wr.writerow([format(float(v), ".17g") for v in row])
            print(f"w={np.array2string(w)} E||s||^2={st.second_moment:.6g} E||s||^4={st.fourth_moment:.6g} mean={np.array2string(st.mean, precision=3)}")
    if len(pts) > 1:
        fit = fit_noise_bounds(oracle, pts, args.N, rng)
        print(f"envelope beta^2={fit['beta_sq']:.6g} sigma^2={fit['sigma_sq']:.6g} beta^4={fit['beta4']:.6g} sigma^4={fit['sigma4']:.6g}")
        if args.oracle == "federated":
            base = fit_noise_bounds(sgd_oracle(risk), pts, args.N, rng)
            b4, s4 = federated_noise_constants(cfg.K, cfg.L, cfg.B, base["beta4"], base["sigma4"], 0.0)
            print(f"federated upper-bound constants beta_Fed^4={b4:.6g} sigma_Fed^4={s4:.6g} (C_B={cb_constant(cfg.B):.6g})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="saddlelab", description="Saddle-escape laboratory for stochastic, federated and diffusion optimizers.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one strategy for the configured replicas")
    _add_config_flags(p)
    p.add_argument("--per-agent", action="store_true", help="also log per-agent rows for diffusion")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("reproduce", help="all three strategies from the saddle-region start, scored per replica")
    _add_config_flags(p)
    p.add_argument("--keep", type=int, default=1, help="replicas whose trajectories are written")
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("verify", help="Monte Carlo check of one guarantee")
    _add_config_flags(p)
    p.add_argument("--check", required=True, choices=CHECKS)
    p.add_argument("--R", type=int, help="replicas (default depends on the check)")
    p.add_argument("--oracle", choices=ORACLES, default="sgd", help="oracle kind for --check noise")
    p.add_argument("--N", type=int, default=100_000, help="noise samples for --check noise")
    p.add_argument("--sample-starts", action="store_true", help="descent: rejection-sample starts instead of using --init")
    p.add_argument("--disagreement-steps", type=int, default=400)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("classify-grid", help="label a rectangular grid as G/H/M")
    _add_config_flags(p)
    p.add_argument("--lower", type=float, default=-2.0)
    p.add_argument("--upper", type=float, default=2.0)
    p.add_argument("--points", type=int, default=81)
    p.set_defaults(func=cmd_classify_grid)

    p = sub.add_parser("graph-gen", help="generate a network and write its edge list")
    _add_config_flags(p)
    p.add_argument("--out", help="edge-list path (default <output-dir>/graph.txt)")
    p.set_defaults(func=cmd_graph_gen)

    p = sub.add_parser("noise-probe", help="gradient-noise moments at given points")
    _add_config_flags(p)
    p.add_argument("--oracle", choices=ORACLES, default="perturbed")
    p.add_argument("--points", help="semicolon-separated points, e.g. '0,0;0.8,-0.8' (default --init)")
    p.add_argument("--N", type=int, default=100_000)
    p.set_defaults(func=cmd_noise_probe)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as err:
        print(f"numerical divergence: {err}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())

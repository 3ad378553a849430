"""Command-line interface.

Subcommands: ``estimate`` (replicated gradient estimates on one problem),
``dfo`` (run the optimizer and dump its trace), ``bench`` (experiment grid
from a flat key=value config file), ``diag`` (regression diagnostics for a
coefficient vector).  Exit codes: 0 success, 1 configuration error, 2 when
some grid cells failed while others ran.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from .bench import (
    DETAIL_HEADER,
    SUMMARY_HEADER,
    ExperimentConfig,
    emit_csv,
    run_replications,
)
from .dfo import DfoConfig, corcfd_lbfgs
from .estimators import EstimatorConfig
from .oracle import parse_problem
from .regression import projection_diagnostics, theory_constants
from .sampling import PerturbationGenerator, stream

DFO_TRACE_HEADER = ["k", "t", "a_k", "T_k", "f_noisy", "f_true"]
DIAG_HEADER = ["quantity", "value"]


def _estimator_config(ns) -> EstimatorConfig:
    return EstimatorConfig(
        K=ns.K,
        pilot_fraction=None if ns.n_b is not None else ns.r,
        pilot_size=ns.n_b,
        bootstrap_reps=ns.I,
        bootstrap_mode=ns.bootstrap_mode,
        pilot_exponent=ns.gamma,
        coeff_gen=PerturbationGenerator(ns.mu0, ns.sigma0, ns.L, ns.U),
        clamp_scale=ns.clamp_scale,
        weighting=ns.weighting,
    )


def _add_estimator_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--K", type=int, default=10, help="number of pilot perturbations")
    p.add_argument("--r", type=float, default=1.0, help="budget fraction spent on pilots")
    p.add_argument("--n-b", dest="n_b", type=int, default=None, help="pairs per pilot perturbation (overrides --r)")
    p.add_argument("--I", type=int, default=1000, help="bootstrap resamples per column")
    p.add_argument("--gamma", type=float, default=-0.1, help="pilot perturbation exponent")
    p.add_argument("--bootstrap-mode", choices=["mc", "exact"], default="mc")
    p.add_argument("--weighting", choices=["wls", "ols"], default="wls")
    p.add_argument("--clamp-scale", type=float, default=1e-4)
    p.add_argument("--mu0", type=float, default=0.0)
    p.add_argument("--sigma0", type=float, default=1.0)
    p.add_argument("--L", type=float, default=0.1)
    p.add_argument("--U", type=float, default=np.inf)


def _cmd_estimate(ns) -> int:
    cfg = ExperimentConfig(
        problem=ns.problem,
        methods=(ns.method,),
        budgets=(ns.pairs,),
        reps=ns.reps,
        seed=ns.seed,
        kappa=ns.kappa,
        truth_override=ns.truth,
        estimator=_estimator_config(ns),
        tra_bias_const=ns.tra_B,
        tra_noise_var=ns.tra_sigma2,
        tra_perturbation=ns.h,
    )
    detail, summary, failures = run_replications(cfg)
    for label, message in failures:
        print(f"error: {label}: {message}", file=sys.stderr)
    if failures:
        return 2 if detail else 1
    emit_csv([row[3:] for row in detail], DETAIL_HEADER[3:], ns.out)
    if summary:
        emit_csv(summary, SUMMARY_HEADER, ns.summary_out)
    return 0


def _cmd_dfo(ns) -> int:
    problem = parse_problem(ns.problem, ns.kappa)
    theta0 = problem.theta0
    if ns.start:
        theta0 = np.array([float(x) for x in ns.start.split(",")])
        if theta0.size != problem.oracle.dim:
            raise ValueError(
                f"--start has {theta0.size} coordinates, problem needs {problem.oracle.dim}"
            )
    cfg = DfoConfig(
        budget=ns.budget,
        K=ns.K,
        batch_init=ns.T0,
        bootstrap_reps=ns.I,
        l1=ns.l1,
        l2=ns.l2,
        step_init=ns.a0,
        noise_bound=ns.sigma,
        memory_depth=ns.memory,
        coeff_gen=PerturbationGenerator(ns.mu0, ns.sigma0, ns.L, ns.U),
        gradient_method=ns.gradient_method,
        armijo_plus_sign=ns.armijo_plus_sign,
    )
    trace = corcfd_lbfgs(problem.oracle, theta0, cfg, stream(ns.seed))
    rows = [
        [row["k"], row["t"], row.get("step", np.nan), row["batch"],
         row.get("y_accepted", row.get("y_start", np.nan)), row.get("f_true", np.nan)]
        for row in trace.iterations
    ]
    emit_csv(rows, DFO_TRACE_HEADER, ns.out)
    oracle = problem.oracle
    if oracle.argmin is not None and oracle.mean is not None:
        sg = float(np.linalg.norm(trace.theta_final - oracle.argmin))
        og = oracle.mean(trace.theta_final) - oracle.mean(oracle.argmin)
        print(f"SG={sg:.17g},OG={og:.17g},evals={trace.evals_total}")
    else:
        print(f"theta={trace.theta_final.tolist()},evals={trace.evals_total}")
    return 0


def _parse_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path) as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{line_no}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


_BENCH_DEFAULTS = {
    "problem": "poly@0",
    "methods": "cor,opt",
    "budgets": "100,1000,10000",
    "reps": "1000",
    "seed": "0",
    "kappa": "10.0",
    "truth": "",
    "K": "10",
    "r": "1.0",
    "n_b": "",
    "I": "1000",
    "gamma": "-0.1",
    "bootstrap_mode": "mc",
    "weighting": "wls",
    "clamp_scale": "1e-4",
    "mu0": "0.0",
    "sigma0": "1.0",
    "L": "0.1",
    "U": "inf",
    "tra_B": "5.0",
    "tra_sigma2": "1.0",
    "tra_h": "",
    "out": "bench_summary.csv",
    "detail_out": "",
}


def _bench_config(values: dict[str, str]) -> tuple[ExperimentConfig, str, str]:
    unknown = set(values) - set(_BENCH_DEFAULTS)
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)}")
    merged = {**_BENCH_DEFAULTS, **values}
    estimator = EstimatorConfig(
        K=int(merged["K"]),
        pilot_fraction=None if merged["n_b"] else float(merged["r"]),
        pilot_size=int(merged["n_b"]) if merged["n_b"] else None,
        bootstrap_reps=int(merged["I"]),
        bootstrap_mode=merged["bootstrap_mode"],
        pilot_exponent=float(merged["gamma"]),
        coeff_gen=PerturbationGenerator(
            float(merged["mu0"]), float(merged["sigma0"]),
            float(merged["L"]), float(merged["U"]),
        ),
        clamp_scale=float(merged["clamp_scale"]),
        weighting=merged["weighting"],
    )
    cfg = ExperimentConfig(
        problem=merged["problem"],
        methods=tuple(m.strip() for m in merged["methods"].split(",") if m.strip()),
        budgets=tuple(int(b) for b in merged["budgets"].split(",") if b.strip()),
        reps=int(merged["reps"]),
        seed=int(merged["seed"]),
        kappa=float(merged["kappa"]),
        truth_override=float(merged["truth"]) if merged["truth"] else None,
        estimator=estimator,
        tra_bias_const=float(merged["tra_B"]),
        tra_noise_var=float(merged["tra_sigma2"]),
        tra_perturbation=float(merged["tra_h"]) if merged["tra_h"] else None,
    )
    return cfg, merged["out"], merged["detail_out"]


def _cmd_bench(ns) -> int:
    values: dict[str, str] = {}
    if ns.config:
        values.update(_parse_config_file(ns.config))
    for item in ns.set or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        values[key.strip()] = value.strip()
    cfg, out, detail_out = _bench_config(values)
    detail, summary, failures = run_replications(cfg)
    for label, message in failures:
        print(f"error: {label}: {message}", file=sys.stderr)
    emit_csv(summary, SUMMARY_HEADER, out)
    if detail_out:
        emit_csv(detail, DETAIL_HEADER, detail_out)
    if failures:
        return 2 if detail or summary else 1
    return 0


def _cmd_diag(ns) -> int:
    c = np.array([float(x) for x in ns.c.split(",") if x.strip()])
    proj = projection_diagnostics(c)
    const = theory_constants(c, ns.fifth_const, ns.noise_slope)
    p = proj.residual_projector
    rows = [
        ["projector_idempotency_gap", float(np.max(np.abs(p @ p - p)))],
        ["projector_annihilates_ones", float(np.max(np.abs(p @ np.ones(c.size))))],
        ["projector_annihilates_squares", float(np.max(np.abs(p @ (c * c))))],
        ["bias_shift", proj.bias_shift],
        ["variance_factor", proj.variance_factor],
        ["slope_bias_coeff", const.slope_bias],
        ["slope_var_coeff", const.slope_var],
        ["intercept_bias_coeff", const.intercept_bias],
        ["intercept_var_coeff", const.intercept_var],
        ["noise_bias_coeff", const.noise_bias],
        ["noise_var_coeff", const.noise_var_coeff],
    ]
    emit_csv(rows, DIAG_HEADER, ns.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="corfd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_est = sub.add_parser("estimate", help="replicated gradient estimates on one problem")
    p_est.add_argument("--problem", required=True)
    p_est.add_argument("--method", choices=["tra", "opt", "boot", "cor"], required=True)
    p_est.add_argument("--pairs", type=int, required=True, help="sample-pair budget n")
    p_est.add_argument("--reps", type=int, default=1)
    p_est.add_argument("--seed", type=int, default=0)
    p_est.add_argument("--kappa", type=float, default=10.0)
    p_est.add_argument("--h", type=float, default=None, help="explicit perturbation (tra)")
    p_est.add_argument("--tra-B", dest="tra_B", type=float, default=5.0)
    p_est.add_argument("--tra-sigma2", dest="tra_sigma2", type=float, default=1.0)
    p_est.add_argument("--truth", type=float, default=None, help="override the reference derivative")
    p_est.add_argument("--out", default="estimates.csv")
    p_est.add_argument("--summary-out", dest="summary_out", default="estimates_summary.csv")
    _add_estimator_args(p_est)
    p_est.set_defaults(func=_cmd_estimate)

    p_dfo = sub.add_parser("dfo", help="run the derivative-free optimizer")
    p_dfo.add_argument("--problem", required=True)
    p_dfo.add_argument("--budget", type=int, required=True, help="total sample-pair budget T")
    p_dfo.add_argument("--K", type=int, default=5)
    p_dfo.add_argument("--T0", type=int, default=20)
    p_dfo.add_argument("--I", type=int, default=100)
    p_dfo.add_argument("--l1", type=float, default=1e-4)
    p_dfo.add_argument("--l2", type=float, default=0.5)
    p_dfo.add_argument("--a0", type=float, default=1.0)
    p_dfo.add_argument("--sigma", type=float, default=1.0)
    p_dfo.add_argument("--memory", type=int, default=10)
    p_dfo.add_argument("--seed", type=int, default=0)
    p_dfo.add_argument("--kappa", type=float, default=10.0)
    p_dfo.add_argument("--start", default=None, help="comma-separated starting point")
    p_dfo.add_argument("--gradient-method", choices=["cor", "tra"], default="cor")
    p_dfo.add_argument("--armijo-plus-sign", action="store_true",
                       help="use the plus-sign slope term in the line-search test")
    p_dfo.add_argument("--mu0", type=float, default=0.0)
    p_dfo.add_argument("--sigma0", type=float, default=1.0)
    p_dfo.add_argument("--L", type=float, default=0.1)
    p_dfo.add_argument("--U", type=float, default=np.inf)
    p_dfo.add_argument("--out", default="dfo_trace.csv")
    p_dfo.set_defaults(func=_cmd_dfo)

    p_bench = sub.add_parser("bench", help="experiment grid from a config file")
    p_bench.add_argument("--config", default=None, help="flat key=value config file")
    p_bench.add_argument("--set", action="append", metavar="KEY=VALUE",
                         help="override a config key (repeatable)")
    p_bench.set_defaults(func=_cmd_bench)

    p_diag = sub.add_parser("diag", help="regression diagnostics for a coefficient vector")
    p_diag.add_argument("--c", required=True, help="comma-separated coefficients")
    p_diag.add_argument("--fifth-const", dest="fifth_const", type=float, default=1.0)
    p_diag.add_argument("--noise-slope", dest="noise_slope", type=float, default=0.0)
    p_diag.add_argument("--out", default="diag.csv")
    p_diag.set_defaults(func=_cmd_diag)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        return ns.func(ns)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Experiment runners behind the CLI; each returns a :class:`CsvReport`.

Rows are sorted by (method, k) so output is byte-identical for a given
config and seed, regardless of ``jobs``.
"""
from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import CleaningConfig, ExperimentConfig, MethodConfig, QuadraticConfig
from .hypergrad import bp_hypergrad, cg_hypergrad, iter_v_recursion, ns_hypergrad
from .problem import CountingOracle, check_oracle_consistency
from .problems import (
    SyntheticOmegaSeq,
    cleaning_oracle,
    gen_cleaning,
    gen_quadratic,
    quadratic_exact_hypergrad,
    quadratic_inner_solve,
    sum_lr_to_mean,
)
from .solvers import BaselineConfig, Schedule, baseline_run, fsla_run

log = logging.getLogger(__name__)

HYPERGRAD_COLUMNS = ("method", "k", "error", "error_sq", "hvp_calls", "cross_jvp_calls", "wall_ns")
SOLVER_COLUMNS = (
    "method", "k", "grad_norm", "outer_value", "val_loss", "auc",
    "hvp_calls", "cross_jvp_calls", "wall_ns",
)
ORACLE_COLUMNS = ("problem", "point", "check", "passed", "max_rel_error")


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


@dataclass
class CsvReport:
    columns: tuple
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def sort(self):
        self.rows.sort(key=lambda r: (str(r[0]), r[1]))
        return self

    def to_text(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([_fmt(x) for x in row])
        return buf.getvalue()

    def write(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_text())

    def column(self, name, method=None):
        i = self.columns.index(name)
        return [r[i] for r in self.rows if method is None or r[0] == method]


# -- problems --------------------------------------------------------------


def build_problem(pcfg, seed):
    """Instantiate the oracle a problem config describes."""
    if isinstance(pcfg, QuadraticConfig):
        return gen_quadratic(seed, n=pcfg.n, m=pcfg.m, N=pcfg.N, noise_std=pcfg.noise_std)
    if isinstance(pcfg, CleaningConfig):
        p = gen_cleaning(
            seed, N_i=pcfg.N_i, N_v=pcfg.N_v, d=pcfg.d, gamma=pcfg.gamma,
            blob_separation=pcfg.blob_separation, ridge_mu=pcfg.ridge_mu,
        )
        return cleaning_oracle(p)
    raise TypeError(f"unsupported problem config {type(pcfg).__name__}")


def fit_slope(ks, errors):
    """Least-squares slope of ``ln error`` against ``ln k`` (non-positive errors dropped)."""
    ks = np.asarray(ks, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    ok = errors > 0
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(ks[ok]), np.log(errors[ok]), 1)[0])


def upper_half_slope(ks, errors):
    ks = list(ks)
    h = len(ks) // 2
    return fit_slope(ks[h:], list(errors)[h:])


# -- hypergrad-bench -------------------------------------------------------


def run_hypergrad_bench(cfg: ExperimentConfig) -> CsvReport:
    """Estimator error against the closed-form hyper-gradient on a quadratic.

    BP, NS and CG use K full-batch inner GD steps from w_0 = 0 (NS takes K
    terms at the K-th state, CG K iterations); FSLA-v is the streaming
    recursion read off at k = K.  ``NS-alpha-a`` rows use the synthetic
    sequence ``w_K = w* + w~ / K**a`` with K-term Neumann sums.
    """
    hb = cfg.hypergrad
    seed = cfg.seed
    q = build_problem(cfg.problem, seed)
    rng = np.random.default_rng([seed, 1])
    lam = rng.random(q.outer_dim)
    omega_tilde = rng.random(q.inner_dim)
    omega0 = np.zeros(q.inner_dim)
    truth = quadratic_exact_hypergrad(q, lam)
    w_star = quadratic_inner_solve(q, lam)
    beta = sum_lr_to_mean(hb.beta, q.N) if hb.beta_units == "sum" else hb.beta
    counted = CountingOracle(q)
    report = CsvReport(HYPERGRAD_COLUMNS)
    grid = hb.K_grid

    def add(method, K, g, t0):
        err = float(np.linalg.norm(g - truth))
        wall = time.monotonic_ns() - t0 if cfg.record_wall_time else 0
        report.rows.append(
            (method, K, err, err * err, counted.hvp_calls, counted.cross_jvp_calls, wall)
        )

    traj = None
    if {"NS", "CG"} & set(hb.methods):
        traj = [omega0]
        for _ in range(grid[-1]):
            traj.append(traj[-1] - beta * q.grad_inner_omega(lam, traj[-1]))

    for method in hb.methods:
        if method == "FSLA":
            counted.reset()
            t0 = time.monotonic_ns()
            wanted = set(grid)
            for k, g, _ in iter_v_recursion(counted, lam, omega0, beta, beta):
                if k in wanted:
                    add("FSLA", k, g, t0)
                if k >= grid[-1]:
                    break
            continue
        for K in grid:
            counted.reset()
            t0 = time.monotonic_ns()
            if method == "BP":
                g, _ = bp_hypergrad(counted, lam, omega0, K, beta)
            elif method == "NS":
                g = ns_hypergrad(counted, lam, traj[K], K - 1, beta)
            else:
                g = cg_hypergrad(counted, lam, traj[K], K)
            add(method, K, g, t0)

    for alpha in hb.alphas:
        seq = SyntheticOmegaSeq(w_star, omega_tilde, alpha)
        name = f"NS-alpha-{alpha:g}"
        for K in hb.synthetic_K_grid:
            counted.reset()
            t0 = time.monotonic_ns()
            add(name, K, ns_hypergrad(counted, lam, seq.at(K), K - 1, beta), t0)

    report.sort()
    for method in sorted({r[0] for r in report.rows}):
        ks = report.column("k", method)
        report.summary[method] = {
            "slope": fit_slope(ks, report.column("error", method)),
            "upper_half_slope": upper_half_slope(ks, report.column("error", method)),
        }
    return report


# -- fsla-run / clean-bench --------------------------------------------------


def _monitor_for(oracle):
    if hasattr(oracle, "exact_hypergrad"):
        def monitor(lam, omega, v):
            return {
                "grad_norm": np.linalg.norm(oracle.exact_hypergrad(lam)),
                "outer_value": oracle.true_value(lam),
            }
        return monitor
    if hasattr(oracle, "validation_loss"):
        def monitor(lam, omega, v):
            return {"val_loss": oracle.validation_loss(omega), "auc": oracle.detection_auc(lam)}
        return monitor
    return None


def _schedule(s):
    return Schedule(s.delta, s.c_tau, s.c_beta, s.c_eta)


def run_method(cfg: ExperimentConfig, mcfg: MethodConfig, oracle=None):
    """One solver run; returns the :class:`~bilevelkit.solvers.RunTrace`."""
    sv = cfg.solver
    if oracle is None:
        oracle = build_problem(cfg.problem, cfg.seed)
    sched = _schedule(mcfg.schedule or sv.schedule)
    init = (np.zeros(oracle.outer_dim), np.zeros(oracle.inner_dim))
    monitor = _monitor_for(oracle)
    if mcfg.method == "FSLA":
        return fsla_run(
            oracle, sched, init, sv.steps, batch=sv.batch_size, seed=cfg.seed,
            monitor=monitor, ordering=mcfg.ordering, record_wall=cfg.record_wall_time,
        )
    bcfg = BaselineConfig(
        mcfg.method, mcfg.T, mcfg.K, mcfg.warm_start, sched,
        inner_lr=mcfg.inner_lr, ns_beta=mcfg.ns_beta,
    )
    return baseline_run(
        oracle, bcfg, init, sv.steps, batch=sv.batch_size, seed=cfg.seed,
        monitor=monitor, record_wall=cfg.record_wall_time,
    )


def _trace_rows(trace):
    rows = []
    for r in trace.records:
        rows.append((
            trace.method, r.k, r.grad_norm, r.outer_value, r.val_loss,
            r.extras.get("auc", float("nan")), r.hvp_calls, r.cross_jvp_calls, r.wall_ns,
        ))
    return rows


def _run_method_rows(args):
    cfg, i = args
    return _trace_rows(run_method(cfg, cfg.solver.methods[i]))


def run_solver_bench(cfg: ExperimentConfig) -> CsvReport:
    """Run every configured method and collect per-iteration records."""
    methods = cfg.solver.methods
    report = CsvReport(SOLVER_COLUMNS)
    if cfg.jobs > 1 and len(methods) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.jobs, len(methods))) as pool:
            for rows in pool.map(_run_method_rows, [(cfg, i) for i in range(len(methods))]):
                report.rows.extend(rows)
    else:
        oracle = build_problem(cfg.problem, cfg.seed)
        for mcfg in methods:
            report.rows.extend(_trace_rows(run_method(cfg, mcfg, oracle)))
    report.sort()
    for m in methods:
        label = m.label
        last = [r for r in report.rows if r[0] == label][-1]
        report.summary[label] = dict(zip(SOLVER_COLUMNS[2:], last[2:]))
    return report


# -- oracle-check ------------------------------------------------------------


def _check_point(oracle, rng):
    if hasattr(oracle, "validation_loss"):
        return rng.standard_normal(oracle.outer_dim), 0.5 * rng.standard_normal(oracle.inner_dim)
    return rng.random(oracle.outer_dim), rng.random(oracle.inner_dim)


def run_oracle_check(cfg: ExperimentConfig):
    """Finite-difference checks at seeded points; returns ``(report, n_failures)``."""
    oc = cfg.oracle_check
    report = CsvReport(ORACLE_COLUMNS)
    if not oc.problems:
        log.warning("oracle-check: no problems configured, nothing to check")
        return report, 0
    failures = 0
    for pi, pcfg in enumerate(oc.problems):
        oracle = build_problem(pcfg, cfg.seed)
        name = f"{pi}:{pcfg.kind}"
        for point in range(oc.points):
            rng = np.random.default_rng([cfg.seed, pi, point])
            lam, omega = _check_point(oracle, rng)
            res = check_oracle_consistency(oracle, lam, omega, h=oc.h, tol=oc.tol, seed=point)
            for c in res.checks:
                report.rows.append((name, point, c.name, c.passed, c.max_rel_error))
                failures += int(not c.passed)
    return report, failures

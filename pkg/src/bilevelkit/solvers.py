"""Fully single-loop bilevel solver and double-loop / warm-start baselines.

One FSLA hyper-iteration (k -> k+1) performs

    lam_{k+1} = lam_k - alpha_k d_k
    w_{k+1}   = w_k - tau_{k+1} dG/dw(lam_{k+1}, w_k; xi_1)
    v_{k+1}   = beta_{k+1} dF/dw(lam_{k+1}, w_k; xi_2) + (I - beta_{k+1} H(lam_{k+1}, w_k; xi_3)) v_k
    g_{k+1}   = dF/dlam(lam_{k+1}, w_{k+1}; xi_4) - C(lam_{k+1}, w_{k+1}; xi_5) v_{k+1}
    d_{k+1}   = g_{k+1} + (1 - eta_{k+1}) (d_k - g_k(xi_4, xi_5))

where ``g_k(xi_4, xi_5)`` re-evaluates the previous point with the new
samples.  That is one Hessian-vector product and two cross products per
iteration, independent of how accurately v tracks ``H^{-1} dF/dw``.

Baselines recompute a hyper-gradient estimate from scratch every iteration
(BP, NS or CG) and share the same outer momentum rule.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import Diverged, InvalidConfig, InvalidSchedule
from .hypergrad import (
    HyperGradSequenceSpec,
    Mode,
    cg_hypergrad,
    general_hypergrad_recursive,
    hypergrad_from_v,
    ns_hypergrad,
    v_update,
)
from .linalg import as_vector
from .problem import DIVERGENCE_NORM, CountingOracle, SampleKey

__all__ = [
    "Schedule",
    "FslaState",
    "TraceRecord",
    "RunTrace",
    "BaselineConfig",
    "fsla_step",
    "fsla_init",
    "fsla_run",
    "baseline_run",
]

# sample-key slots within one iteration
_XI_INNER, _XI_VGRAD, _XI_VHVP, _XI_HGRAD, _XI_HCROSS = 1, 2, 3, 4, 5
_XI_INNER_T0 = 100  # baseline inner steps use slots 100, 101, ...


@dataclass(frozen=True)
class Schedule:
    """Step sizes at iteration k: ``alpha_k = delta / sqrt(k + 1)`` and
    ``tau, beta, eta = c_tau alpha_k, c_beta alpha_k, min(c_eta alpha_k, 1)``."""

    delta: float
    c_tau: float
    c_beta: float
    c_eta: float

    def __post_init__(self):
        for name in ("delta", "c_tau", "c_beta", "c_eta"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidSchedule(f"{name} must be finite and positive, got {value!r}")

    @classmethod
    def defaults(cls):
        return cls(delta=1000.0, c_tau=1e-3, c_beta=1e-4, c_eta=9e-4)

    def alpha(self, k):
        return self.delta / math.sqrt(k + 1)

    def rates(self, k):
        """``(alpha_k, tau_{k+1}, beta_{k+1}, eta_{k+1})``."""
        a = self.alpha(k)
        return a, self.c_tau * a, self.c_beta * a, min(self.c_eta * a, 1.0)

    @property
    def max_beta(self):
        return self.c_beta * self.delta

    def validate(self, L):
        """Reject schedules whose largest v-step exceeds ``1/L``."""
        if self.max_beta > 1.0 / L:
            raise InvalidSchedule(
                f"c_beta*delta = {self.max_beta:.6g} exceeds 1/L = {1.0 / L:.6g}; "
                "the v recursion would not contract"
            )
        return self


@dataclass
class FslaState:
    k: int
    lam: np.ndarray
    omega: np.ndarray
    v: np.ndarray
    d: np.ndarray
    prev_lam: np.ndarray
    prev_omega: np.ndarray
    prev_v: np.ndarray


@dataclass
class TraceRecord:
    k: int
    grad_norm: float = float("nan")
    outer_value: float = float("nan")
    val_loss: float = float("nan")
    hvp_calls: int = 0
    cross_jvp_calls: int = 0
    wall_ns: int = 0
    extras: dict = field(default_factory=dict)


@dataclass
class RunTrace:
    method: str
    records: list = field(default_factory=list)
    initial: Optional[TraceRecord] = None
    final_state: object = None
    counts: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def column(self, name):
        if name in TraceRecord.__dataclass_fields__:
            return np.array([getattr(r, name) for r in self.records])
        return np.array([r.extras.get(name, float("nan")) for r in self.records])

    def running_mean_sq_grad(self):
        """``(1/K) sum_{k<K} ||grad f(lam_k)||^2`` for K = 1..len, counting lam_0."""
        g = [self.initial.grad_norm] if self.initial is not None else []
        g = np.array(g + [r.grad_norm for r in self.records[:-1]]) ** 2
        return np.cumsum(g) / np.arange(1, g.size + 1)


@dataclass(frozen=True)
class BaselineConfig:
    estimator: str
    T: int
    K: int
    warm_start: bool
    schedule: Schedule
    inner_lr: Optional[float] = None  # None: tau_{k+1} from the schedule
    ns_beta: Optional[float] = None  # None: 1/L
    name: Optional[str] = None

    def __post_init__(self):
        est = self.estimator.upper()
        object.__setattr__(self, "estimator", est)
        if est not in ("BP", "NS", "CG"):
            raise InvalidConfig(f"unknown estimator {self.estimator!r}")
        if self.T < 1:
            raise InvalidConfig("T must be >= 1")
        if self.K < 1:
            raise InvalidConfig("K must be >= 1")

    @property
    def label(self):
        return self.name or f"{self.estimator}-{self.T}-{self.K}"


def _key(seed, k, slot, batch):
    return SampleKey.derive(seed, k, slot, batch)


def _guard(k, **vectors):
    for name, x in vectors.items():
        norm = float(np.linalg.norm(x))
        if not norm <= DIVERGENCE_NORM:
            raise Diverged(f"{name} norm {norm:.3g} exceeds {DIVERGENCE_NORM:g}", k=k)


def fsla_init(oracle, lam0, omega0, batch, seed, v0=None):
    """State at k = 0: ``v_0 = 0`` unless given, ``d_0`` a fresh estimate at (lam_0, w_0, v_0)."""
    lam = as_vector(lam0, "lam0")
    omega = as_vector(omega0, "omega0")
    v = np.zeros_like(omega) if v0 is None else as_vector(v0, "v0")
    d = hypergrad_from_v(
        oracle, lam, omega, v, _key(seed, 0, _XI_HGRAD, batch), _key(seed, 0, _XI_HCROSS, batch)
    )
    return FslaState(0, lam, omega, v, d, lam.copy(), omega.copy(), v.copy())


def fsla_step(state: FslaState, sched: Schedule, oracle, batch=None, rng_seed_base=0,
              ordering="algorithm") -> FslaState:
    """One hyper-iteration; returns a new state and leaves ``state`` untouched.

    ``batch=None`` uses full-batch oracles.  ``ordering="eq10"`` evaluates
    the v step at the freshly updated inner state instead of the previous one.
    """
    k = state.k
    alpha, tau, beta, eta = sched.rates(k)
    L = oracle.smoothness_L()
    if beta > 1.0 / L:
        raise InvalidSchedule(f"beta_{k + 1} = {beta:.6g} exceeds 1/L = {1.0 / L:.6g}")
    xi = {slot: _key(rng_seed_base, k + 1, slot, batch) for slot in range(1, 6)}

    lam = state.lam - alpha * state.d
    omega = state.omega - tau * oracle.grad_inner_omega(lam, state.omega, xi[_XI_INNER])
    if ordering == "algorithm":
        w_v = state.omega
    elif ordering == "eq10":
        w_v = omega
    else:
        raise ValueError(f"unknown ordering {ordering!r}")
    v = v_update(oracle, lam, w_v, state.v, beta, xi[_XI_VGRAD], xi[_XI_VHVP])
    g_new = hypergrad_from_v(oracle, lam, omega, v, xi[_XI_HGRAD], xi[_XI_HCROSS])
    g_old = hypergrad_from_v(
        oracle, state.lam, state.omega, state.v, xi[_XI_HGRAD], xi[_XI_HCROSS]
    )
    d = g_new + (1.0 - eta) * (state.d - g_old)
    _guard(k + 1, lam=lam, omega=omega, v=v, d=d)
    return FslaState(k + 1, lam, omega, v, d, state.lam, state.omega, state.v)


def _record(k, oracle, monitor, lam, omega, v, t0, record_wall):
    rec = TraceRecord(
        k,
        hvp_calls=oracle.hvp_calls,
        cross_jvp_calls=oracle.cross_jvp_calls,
        wall_ns=time.monotonic_ns() - t0 if record_wall else 0,
    )
    if monitor is not None:
        for name, value in monitor(lam, omega, v).items():
            if name in ("grad_norm", "outer_value", "val_loss"):
                setattr(rec, name, float(value))
            else:
                rec.extras[name] = float(value)
    return rec


def _counting(oracle):
    return oracle if isinstance(oracle, CountingOracle) else CountingOracle(oracle)


def fsla_run(oracle, sched: Schedule, init, steps, batch=None, seed=0,
             monitor: Optional[Callable] = None, ordering="algorithm", v0=None,
             record_wall=False, validate=True) -> RunTrace:
    """Run ``steps`` FSLA iterations from ``init = (lam0, omega0)``.

    ``monitor(lam, omega, v) -> dict`` is called on the uncounted oracle
    after every iteration (and once before the first); keys ``grad_norm``,
    ``outer_value`` and ``val_loss`` fill the record fields, anything else
    lands in ``extras``.  Counters in the trace are cumulative and include
    the initial ``d_0`` evaluation.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    counted = _counting(oracle)
    if validate:
        sched.validate(counted.smoothness_L())
    t0 = time.monotonic_ns()
    state = fsla_init(counted, init[0], init[1], batch, seed, v0)
    trace = RunTrace("FSLA")
    trace.initial = _record(0, counted, monitor, state.lam, state.omega, state.v, t0, record_wall)
    for _ in range(steps):
        state = fsla_step(state, sched, counted, batch, seed, ordering)
        trace.records.append(
            _record(state.k, counted, monitor, state.lam, state.omega, state.v, t0, record_wall)
        )
    trace.final_state = state
    trace.counts = counted.snapshot()
    return trace


@dataclass
class _BaselineState:
    k: int
    lam: np.ndarray
    omega_start: np.ndarray  # inner state the T inner steps started from
    omega: np.ndarray  # inner state after the T inner steps
    d: np.ndarray


def _inner_steps(oracle, lam, omega, lrs, seed, k, batch):
    traj = [omega]
    keys = []
    for t, lr in enumerate(lrs):
        xi = _key(seed, k, _XI_INNER_T0 + t, batch)
        keys.append(xi)
        traj.append(traj[-1] - lr * oracle.grad_inner_omega(lam, traj[-1], xi))
    return np.array(traj), keys


def _estimate(oracle, cfg, lam, traj, lrs, keys, xi):
    omega = traj[-1]
    if cfg.estimator == "NS":
        beta = cfg.ns_beta if cfg.ns_beta is not None else 1.0 / oracle.smoothness_L()
        return ns_hypergrad(oracle, lam, omega, cfg.K, beta, xi)
    if cfg.estimator == "CG":
        return cg_hypergrad(oracle, lam, omega, cfg.K, xi=xi)
    # BP: differentiate through the last min(K, T) inner steps
    K = min(cfg.K, len(lrs))
    spec = HyperGradSequenceSpec(
        Mode.BACKWARD, traj[-K - 1:], lrs[-K:], oracle.grad_outer_omega(lam, omega, xi)
    )
    return general_hypergrad_recursive(oracle, lam, spec, xi, step_keys=keys[-K:])


def baseline_run(oracle, cfg: BaselineConfig, init, steps, batch=None, seed=0,
                 monitor: Optional[Callable] = None, record_wall=False) -> RunTrace:
    """Run a recompute-from-scratch baseline with the FSLA outer momentum.

    Each iteration: outer step, ``T`` inner SGD steps (from the previous inner
    state if ``warm_start`` else from ``init[1]``), then the configured
    estimator with ``K`` steps at the new point.  The momentum correction
    re-runs the estimator at the previous point with the new sample keys, so
    one iteration costs two estimator evaluations.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    counted = _counting(oracle)
    sched = cfg.schedule
    lam0 = as_vector(init[0], "lam0")
    omega0 = as_vector(init[1], "omega0")
    t0 = time.monotonic_ns()

    def lrs_at(k):
        tau = sched.rates(k)[1] if cfg.inner_lr is None else cfg.inner_lr
        return np.full(cfg.T, tau)

    def evaluate(lam, start, k_keys, lrs):
        traj, keys = _inner_steps(counted, lam, start, lrs, seed, k_keys, batch)
        g = _estimate(counted, cfg, lam, traj, lrs, keys, _key(seed, k_keys, _XI_HGRAD, batch))
        return g, traj[-1]

    lrs0 = lrs_at(0)
    d0, w0 = evaluate(lam0, omega0, 0, lrs0)
    state = _BaselineState(0, lam0, omega0, w0, d0)
    prev_lrs = lrs0
    trace = RunTrace(cfg.label)
    trace.initial = _record(0, counted, monitor, lam0, w0, None, t0, record_wall)
    for _ in range(steps):
        k = state.k
        alpha, _, _, eta = sched.rates(k)
        lam = state.lam - alpha * state.d
        start = state.omega if cfg.warm_start else omega0
        lrs = lrs_at(k)
        g_new, omega = evaluate(lam, start, k + 1, lrs)
        # previous point, new samples
        if cfg.estimator == "BP":
            g_old, _ = evaluate(state.lam, state.omega_start, k + 1, prev_lrs)
        else:
            g_old = _estimate(
                counted, cfg, state.lam, state.omega[None, :], prev_lrs[:0], [],
                _key(seed, k + 1, _XI_HGRAD, batch),
            )
        d = g_new + (1.0 - eta) * (state.d - g_old)
        _guard(k + 1, lam=lam, omega=omega, d=d)
        state = _BaselineState(k + 1, lam, start, omega, d)
        prev_lrs = lrs
        trace.records.append(_record(k + 1, counted, monitor, lam, omega, None, t0, record_wall))
    trace.final_state = state
    trace.counts = counted.snapshot()
    return trace

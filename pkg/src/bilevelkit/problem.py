"""The bilevel oracle contract, sampling keys, the inner solver and an
oracle self-check against finite differences.

A problem ``min_lam F(lam, w_lam)`` with ``w_lam = argmin_w G(lam, w)`` is
exposed only through first-order oracles and Hessian-vector / cross
derivative-vector products, never dense second derivatives.  Every oracle
method takes a :class:`SampleKey`; ``FULL_BATCH`` gives the exact value and a
mini-batch key gives an unbiased, replayable estimate.
"""
from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import Diverged
from .linalg import as_vector, finite_diff_grad

__all__ = [
    "SampleKey",
    "FULL_BATCH",
    "BilevelOracle",
    "CountingOracle",
    "InnerSolution",
    "solve_inner",
    "CheckResult",
    "OracleReport",
    "check_oracle_consistency",
]

DIVERGENCE_NORM = 1e12


@dataclass(frozen=True)
class SampleKey:
    """Which samples an oracle call averages over.

    ``seed is None`` means the full dataset.  Otherwise ``batch_size``
    indices are drawn without replacement from a generator seeded by
    ``(seed, stream)``, so a key always selects the same subset.
    """

    seed: Optional[int] = None
    batch_size: Optional[int] = None

    def __post_init__(self):
        if self.seed is not None:
            if self.batch_size is None or self.batch_size < 1:
                raise ValueError("a mini-batch key needs batch_size >= 1")
            if not 0 <= self.seed < 2**64:
                raise ValueError("seed must fit in an unsigned 64-bit integer")

    @property
    def is_full(self) -> bool:
        return self.seed is None

    @classmethod
    def mini_batch(cls, seed, batch_size):
        return cls(int(seed), int(batch_size))

    @classmethod
    def derive(cls, base_seed, k, slot, batch_size):
        """Key for sub-sample ``slot`` of iteration ``k`` (None batch = full)."""
        if batch_size is None:
            return FULL_BATCH
        state = np.random.SeedSequence([int(base_seed), int(k), int(slot)]).generate_state(
            1, np.uint64
        )
        return cls(int(state[0]), int(batch_size))

    def indices(self, n, stream=0):
        """Sorted sample indices into a dataset of size ``n`` (None = all).

        Oracles with several datasets pass a distinct ``stream`` per dataset.
        A batch at least as large as the dataset selects all of it.
        """
        if self.seed is None or self.batch_size >= n:
            return None
        rng = np.random.default_rng([self.seed, stream])
        return np.sort(rng.choice(n, size=self.batch_size, replace=False))


FULL_BATCH = SampleKey()


class BilevelOracle(abc.ABC):
    """First- and second-order access to ``F`` (outer) and ``G`` (inner).

    Subclasses set ``outer_dim`` (m) and ``inner_dim`` (n).  ``inner_value``
    is optional; the consistency checker skips the inner gradient check
    without it.
    """

    outer_dim: int
    inner_dim: int
    #: True when both second derivatives of G are independent of (lam, w)
    constant_hessian = False

    @abc.abstractmethod
    def outer_value(self, lam, omega, xi=FULL_BATCH) -> float: ...

    @abc.abstractmethod
    def grad_outer_lambda(self, lam, omega, xi=FULL_BATCH) -> np.ndarray: ...

    @abc.abstractmethod
    def grad_outer_omega(self, lam, omega, xi=FULL_BATCH) -> np.ndarray: ...

    @abc.abstractmethod
    def grad_inner_omega(self, lam, omega, xi=FULL_BATCH) -> np.ndarray: ...

    @abc.abstractmethod
    def hvp_inner(self, lam, omega, v, xi=FULL_BATCH) -> np.ndarray:
        """``d^2G/dw^2 (lam, w) @ v``, in R^n."""

    @abc.abstractmethod
    def cross_jvp_inner(self, lam, omega, v, xi=FULL_BATCH) -> np.ndarray:
        """``d^2G/(dw dlam) (lam, w) @ v``, in R^m."""

    @abc.abstractmethod
    def strong_convexity_mu(self) -> float: ...

    @abc.abstractmethod
    def smoothness_L(self) -> float: ...

    def inner_value(self, lam, omega, xi=FULL_BATCH) -> float:
        raise NotImplementedError


_COUNTED = (
    "outer_value",
    "inner_value",
    "grad_outer_lambda",
    "grad_outer_omega",
    "grad_inner_omega",
    "hvp_inner",
    "cross_jvp_inner",
)


class CountingOracle(BilevelOracle):
    """Pass-through wrapper that counts every oracle call by method name."""

    def __init__(self, oracle: BilevelOracle):
        self.inner = oracle
        self.outer_dim = oracle.outer_dim
        self.inner_dim = oracle.inner_dim
        self.constant_hessian = oracle.constant_hessian
        self.counts = dict.fromkeys(_COUNTED, 0)

    def reset(self):
        for name in self.counts:
            self.counts[name] = 0

    def snapshot(self):
        return dict(self.counts)

    @property
    def hvp_calls(self):
        return self.counts["hvp_inner"]

    @property
    def cross_jvp_calls(self):
        return self.counts["cross_jvp_inner"]

    @property
    def hvp_class_calls(self):
        return self.hvp_calls + self.cross_jvp_calls

    def _call(self, name, *args):
        self.counts[name] += 1
        return getattr(self.inner, name)(*args)

    def outer_value(self, lam, omega, xi=FULL_BATCH):
        return self._call("outer_value", lam, omega, xi)

    def inner_value(self, lam, omega, xi=FULL_BATCH):
        return self._call("inner_value", lam, omega, xi)

    def grad_outer_lambda(self, lam, omega, xi=FULL_BATCH):
        return self._call("grad_outer_lambda", lam, omega, xi)

    def grad_outer_omega(self, lam, omega, xi=FULL_BATCH):
        return self._call("grad_outer_omega", lam, omega, xi)

    def grad_inner_omega(self, lam, omega, xi=FULL_BATCH):
        return self._call("grad_inner_omega", lam, omega, xi)

    def hvp_inner(self, lam, omega, v, xi=FULL_BATCH):
        return self._call("hvp_inner", lam, omega, v, xi)

    def cross_jvp_inner(self, lam, omega, v, xi=FULL_BATCH):
        return self._call("cross_jvp_inner", lam, omega, v, xi)

    def strong_convexity_mu(self):
        return self.inner.strong_convexity_mu()

    def smoothness_L(self):
        return self.inner.smoothness_L()

    def __getattr__(self, name):
        # problem-specific extras (exact_hypergrad, inner_solve, ...) pass through
        if name == "inner":
            raise AttributeError(name)
        return getattr(self.inner, name)


@dataclass
class InnerSolution:
    omega_star: np.ndarray
    residual: float
    iters: int = 0
    trace: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.residual < 0:
            raise ValueError("residual must be non-negative")


def solve_inner(oracle, lam, omega0, lr=None, tol=1e-10, max_iter=100_000, record=False):
    """Full-batch gradient descent on ``w -> G(lam, w)``.

    ``lr`` defaults to ``1/L``.  With ``record=True`` every iterate is kept in
    ``InnerSolution.trace`` (starting with ``omega0``).
    """
    L = oracle.smoothness_L()
    if lr is None:
        lr = 1.0 / L
    if not 0.0 < lr < 2.0 / L:
        raise ValueError(f"lr={lr} outside (0, 2/L) = (0, {2.0 / L})")
    if tol <= 0:
        raise ValueError("tol must be positive")
    lam = as_vector(lam, "lam")
    omega = as_vector(omega0, "omega0")
    trace = [omega.copy()] if record else []
    g = oracle.grad_inner_omega(lam, omega)
    res = float(np.linalg.norm(g))
    it = 0
    while res > tol and it < max_iter:
        omega = omega - lr * g
        it += 1
        norm = np.linalg.norm(omega)
        if not norm <= DIVERGENCE_NORM:
            raise Diverged(f"inner iterate norm {norm:.3g} exceeds {DIVERGENCE_NORM:g}", k=it)
        if record:
            trace.append(omega.copy())
        g = oracle.grad_inner_omega(lam, omega)
        res = float(np.linalg.norm(g))
    return InnerSolution(omega, res, it, trace)


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_rel_error: float
    skipped: bool = False


@dataclass
class OracleReport:
    checks: list

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    @property
    def failures(self):
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def lines(self):
        out = []
        for c in self.checks:
            status = "SKIP" if c.skipped else ("PASS" if c.passed else "FAIL")
            out.append(f"{status} {c.name} max_rel_error={c.max_rel_error:.3e}")
        return out


def _rel_err(analytic, reference, floor):
    analytic = np.asarray(analytic, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    denom = max(np.linalg.norm(reference), np.linalg.norm(analytic), floor)
    return float(np.linalg.norm(analytic - reference) / denom)


def check_oracle_consistency(oracle, lam, omega, h=1e-5, tol=1e-4, n_directions=3, seed=0,
                             atol=1e-6):
    """Compare every analytic oracle with central differences at (lam, omega).

    Failures are reported, not raised.  Relative errors use
    ``max(|analytic|, |reference|, atol)`` as denominator so that vanishing
    gradients (e.g. at the inner minimizer) are judged on absolute error.  Second-order products are checked
    along ``n_directions`` seeded random directions and the worst relative
    error is kept.
    """
    lam = as_vector(lam, "lam")
    omega = as_vector(omega, "omega")
    rng = np.random.default_rng(seed)
    checks = []

    def record(name, errs):
        worst = max(errs) if errs else 0.0
        checks.append(CheckResult(name, bool(worst <= tol), worst))

    fd = finite_diff_grad(lambda l: oracle.outer_value(l, omega), lam, h)
    record("grad_outer_lambda", [_rel_err(oracle.grad_outer_lambda(lam, omega), fd, atol)])

    fd = finite_diff_grad(lambda w: oracle.outer_value(lam, w), omega, h)
    record("grad_outer_omega", [_rel_err(oracle.grad_outer_omega(lam, omega), fd, atol)])

    try:
        oracle.inner_value(lam, omega)
    except NotImplementedError:
        checks.append(CheckResult("grad_inner_omega", True, 0.0, skipped=True))
    else:
        fd = finite_diff_grad(lambda w: oracle.inner_value(lam, w), omega, h)
        record("grad_inner_omega", [_rel_err(oracle.grad_inner_omega(lam, omega), fd, atol)])

    errs = []
    for _ in range(n_directions):
        v = rng.standard_normal(omega.shape[0])
        gp = oracle.grad_inner_omega(lam, omega + h * v)
        gm = oracle.grad_inner_omega(lam, omega - h * v)
        errs.append(_rel_err(oracle.hvp_inner(lam, omega, v), (gp - gm) / (2 * h), atol))
    record("hvp_inner", errs)

    errs = []
    for _ in range(n_directions):
        v = rng.standard_normal(omega.shape[0])
        fd = finite_diff_grad(lambda l: oracle.grad_inner_omega(l, omega) @ v, lam, h)
        errs.append(_rel_err(oracle.cross_jvp_inner(lam, omega, v), fd, atol))
    record("cross_jvp_inner", errs)

    errs = []
    for _ in range(n_directions):
        u = rng.standard_normal(omega.shape[0])
        v = rng.standard_normal(omega.shape[0])
        a = u @ oracle.hvp_inner(lam, omega, v)
        b = v @ oracle.hvp_inner(lam, omega, u)
        errs.append(abs(a - b) / max(abs(a), abs(b), 1e-8))
    record("hvp_symmetry", errs)

    return OracleReport(checks)

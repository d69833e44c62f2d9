"""Dense vector helpers, linear conjugate gradient and finite differences.

Vectors and matrices are plain ``float64`` numpy arrays (row-major).  A
:class:`LinearOperator` wraps a matrix-free ``apply`` so that Hessian-vector
products can be fed to :func:`cg_solve` without forming the Hessian.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import NonFiniteValue

__all__ = [
    "LinearOperator",
    "CGResult",
    "as_vector",
    "as_operator",
    "check_finite",
    "cg_solve",
    "finite_diff_grad",
]


def as_vector(x, name="vector") -> np.ndarray:
    v = np.array(x, dtype=np.float64, copy=True).reshape(-1)
    return check_finite(v, name)


def check_finite(x: np.ndarray, name="value") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteValue(f"{name} contains NaN/Inf")
    return x


@dataclass(frozen=True)
class LinearOperator:
    """Square matrix-free operator ``x -> apply(x)`` on R^dim.

    The caller vouches for symmetry and positive-definiteness when the
    operator is handed to :func:`cg_solve`.
    """

    dim: int
    apply: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x):
        return self.apply(x)

    @classmethod
    def from_matrix(cls, M):
        M = np.asarray(M, dtype=np.float64)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {M.shape}")
        return cls(M.shape[0], lambda x: M @ x)


def as_operator(op) -> LinearOperator:
    if isinstance(op, LinearOperator):
        return op
    if callable(op):
        raise TypeError("bare callables carry no dimension; wrap them in LinearOperator")
    return LinearOperator.from_matrix(op)


class CGResult(NamedTuple):
    x: np.ndarray
    iters: int
    residual: float
    # residual norm before iteration 1, after iteration 1, ...
    trace: tuple


def cg_solve(op, b, tol=1e-10, max_iter=None, x0=None) -> CGResult:
    """Solve ``op(x) = b`` by linear conjugate gradient.

    Stops once ``||op(x) - b|| <= tol`` or after ``max_iter`` iterations, in
    which case the last iterate is returned together with its residual.
    ``iters`` counts operator applications inside the loop (the initial
    residual of a nonzero ``x0`` is not counted).

    A direction with non-positive curvature triggers one restart along the
    current residual; if the residual itself has non-positive curvature the
    operator is not positive-definite and :class:`NonFiniteValue` is raised.
    """
    op = as_operator(op)
    b = as_vector(b, "b")
    if b.shape[0] != op.dim:
        raise ValueError(f"b has dimension {b.shape[0]}, operator has {op.dim}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter is None:
        max_iter = 10 * op.dim
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")

    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = as_vector(x0, "x0")
        r = b - op(x)
    rr = float(r @ r)
    trace = [np.sqrt(rr)]
    p = r.copy()
    iters = 0
    while iters < max_iter and trace[-1] > tol:
        Ap = np.asarray(op(p), dtype=np.float64)
        iters += 1
        curv = float(p @ Ap)
        if not curv > 0.0:
            if np.array_equal(p, r):
                raise NonFiniteValue(
                    f"non-positive curvature {curv!r} along the residual; operator is not SPD"
                )
            p = r.copy()
            continue
        step = rr / curv
        x = x + step * p
        r = r - step * Ap
        check_finite(x, "CG iterate")
        rr_new = float(r @ r)
        trace.append(np.sqrt(rr_new))
        p = r + (rr_new / rr) * p
        rr = rr_new
    return CGResult(x, iters, trace[-1], tuple(trace))


def finite_diff_grad(f, x, h=1e-5) -> np.ndarray:
    """Central-difference gradient of the scalar function ``f`` at ``x``."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = as_vector(x, "x")
    g = np.empty_like(x)
    e = np.zeros_like(x)
    for i in range(x.shape[0]):
        e[i] = h
        fp = float(f(x + e))
        fm = float(f(x - e))
        e[i] = 0.0
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteValue(f"f is not finite at probe {i}")
        g[i] = (fp - fm) / (2.0 * h)
    return g

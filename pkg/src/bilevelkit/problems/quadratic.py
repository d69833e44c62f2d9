"""Quadratic bilevel problems with closed-form inner solution and hyper-gradient.

    f(lam) = F(w_lam) = (1/N) ||A_o w_lam - b_o||^2
    w_lam  = argmin_w G(lam, w) = (1/N) ||A_il lam + A_iw w - b_i||^2

Objectives are per-sample means, so ``mu_G`` and ``L`` do not grow with N.
A step size quoted for the summed objective ``||.||^2`` corresponds to
``N`` times that step here (see :func:`sum_lr_to_mean`).
"""
from __future__ import annotations

import numpy as np
from scipy import linalg as sla

from ..errors import DegenerateInstance
from ..linalg import as_vector
from ..problem import FULL_BATCH, BilevelOracle

__all__ = [
    "QuadraticBilevel",
    "gen_quadratic",
    "quadratic_inner_solve",
    "quadratic_exact_hypergrad",
    "sum_lr_to_mean",
    "MIN_EIGENVALUE",
]

MIN_EIGENVALUE = 1e-8
_INNER, _OUTER = 0, 1


def sum_lr_to_mean(lr, N):
    """Step size for the mean-reduced objective equivalent to ``lr`` on the sum."""
    return lr * N


class QuadraticBilevel(BilevelOracle):
    """The quadratic family as a :class:`BilevelOracle`.

    Both datasets hold N rows; a mini-batch key draws inner and outer rows
    from independent streams.  Second derivatives are constant.
    """

    constant_hessian = True

    def __init__(self, A_o, b_o, A_il, A_iw, b_i):
        self.A_o = np.ascontiguousarray(A_o, dtype=np.float64)
        self.b_o = as_vector(b_o, "b_o")
        self.A_il = np.ascontiguousarray(A_il, dtype=np.float64)
        self.A_iw = np.ascontiguousarray(A_iw, dtype=np.float64)
        self.b_i = as_vector(b_i, "b_i")
        self.N, self.inner_dim = self.A_iw.shape
        self.outer_dim = self.A_il.shape[1]
        for name, arr, cols in (
            ("A_o", self.A_o, self.inner_dim),
            ("A_il", self.A_il, self.outer_dim),
        ):
            if arr.shape != (self.N, cols):
                raise ValueError(f"{name} has shape {arr.shape}, expected {(self.N, cols)}")
        if self.b_o.shape != (self.N,) or self.b_i.shape != (self.N,):
            raise ValueError("b_o and b_i must have N entries")

        s = 2.0 / self.N
        self._H = s * (self.A_iw.T @ self.A_iw)          # d2G/dw2, n x n
        self._cross = s * (self.A_il.T @ self.A_iw)      # d2G/(dw dlam) as m x n
        self._Giw_l = s * (self.A_iw.T @ self.A_il)      # n x m
        self._Giw_b = s * (self.A_iw.T @ self.b_i)
        self._Fo = s * (self.A_o.T @ self.A_o)
        self._Fo_b = s * (self.A_o.T @ self.b_o)
        eig = np.linalg.eigvalsh(self._H)
        self._mu, self._L = float(eig[0]), float(eig[-1])
        if self._mu < MIN_EIGENVALUE:
            raise DegenerateInstance(f"inner Hessian smallest eigenvalue {self._mu:.3g}")
        self._chol = sla.cho_factor(self.A_iw.T @ self.A_iw)

    @classmethod
    def identity_inner(cls, A_o, b_o):
        """Instance with ``A_iw = I``, ``A_il = -I``, ``b_i = 0``, so ``w_lam = lam``."""
        A_o = np.asarray(A_o, dtype=np.float64)
        n = A_o.shape[1]
        if A_o.shape[0] != n:
            raise ValueError("identity instance needs a square A_o (N = n)")
        return cls(A_o, b_o, -np.eye(n), np.eye(n), np.zeros(n))

    # -- batching ----------------------------------------------------------

    def _inner_rows(self, xi):
        idx = xi.indices(self.N, _INNER)
        if idx is None:
            return None
        return self.A_il[idx], self.A_iw[idx], self.b_i[idx]

    def _outer_rows(self, xi):
        idx = xi.indices(self.N, _OUTER)
        if idx is None:
            return None
        return self.A_o[idx], self.b_o[idx]

    # -- oracle ------------------------------------------------------------

    def outer_value(self, lam, omega, xi=FULL_BATCH):
        rows = self._outer_rows(xi)
        A, b = (self.A_o, self.b_o) if rows is None else rows
        r = A @ omega - b
        return float(r @ r) / A.shape[0]

    def inner_value(self, lam, omega, xi=FULL_BATCH):
        rows = self._inner_rows(xi)
        Al, Aw, b = (self.A_il, self.A_iw, self.b_i) if rows is None else rows
        r = Al @ lam + Aw @ omega - b
        return float(r @ r) / Aw.shape[0]

    def grad_outer_lambda(self, lam, omega, xi=FULL_BATCH):
        return np.zeros(self.outer_dim)

    def grad_outer_omega(self, lam, omega, xi=FULL_BATCH):
        rows = self._outer_rows(xi)
        if rows is None:
            return self._Fo @ omega - self._Fo_b
        A, b = rows
        return (2.0 / A.shape[0]) * (A.T @ (A @ omega - b))

    def grad_inner_omega(self, lam, omega, xi=FULL_BATCH):
        rows = self._inner_rows(xi)
        if rows is None:
            return self._H @ omega + self._Giw_l @ lam - self._Giw_b
        Al, Aw, b = rows
        return (2.0 / Aw.shape[0]) * (Aw.T @ (Al @ lam + Aw @ omega - b))

    def hvp_inner(self, lam, omega, v, xi=FULL_BATCH):
        rows = self._inner_rows(xi)
        if rows is None:
            return self._H @ v
        _, Aw, _ = rows
        return (2.0 / Aw.shape[0]) * (Aw.T @ (Aw @ v))

    def cross_jvp_inner(self, lam, omega, v, xi=FULL_BATCH):
        rows = self._inner_rows(xi)
        if rows is None:
            return self._cross @ v
        Al, Aw, _ = rows
        return (2.0 / Aw.shape[0]) * (Al.T @ (Aw @ v))

    def strong_convexity_mu(self):
        return self._mu

    def smoothness_L(self):
        return self._L

    # -- closed forms --------------------------------------------------------

    def inner_solve(self, lam):
        return quadratic_inner_solve(self, lam)

    def exact_hypergrad(self, lam):
        return quadratic_exact_hypergrad(self, lam)

    def inner_jacobian(self):
        """``d w_lam / d lam`` (n x m); constant for this family."""
        return -sla.cho_solve(self._chol, self.A_iw.T @ self.A_il)

    def true_value(self, lam):
        return self.outer_value(lam, quadratic_inner_solve(self, lam))

    def outer_optimum(self):
        """A minimizer of ``f`` by dense least squares over lam."""
        J = self.inner_jacobian()
        w0 = quadratic_inner_solve(self, np.zeros(self.outer_dim))
        lam, *_ = np.linalg.lstsq(self.A_o @ J, self.b_o - self.A_o @ w0, rcond=None)
        return lam

    def hessians(self):
        """Dense ``(d2G/dw2, d2G/(dw dlam))`` for tests; shapes (n, n) and (m, n)."""
        return self._H.copy(), self._cross.copy()


def quadratic_inner_solve(q: QuadraticBilevel, lam):
    """``(A_iw^T A_iw)^{-1} A_iw^T (b_i - A_il lam)``."""
    lam = as_vector(lam, "lam")
    return sla.cho_solve(q._chol, q.A_iw.T @ (q.b_i - q.A_il @ lam))


def quadratic_exact_hypergrad(q: QuadraticBilevel, lam):
    """Dense implicit-function hyper-gradient ``J^T dF/dw`` at ``w_lam``.

    Builds the inner Jacobian with an explicit factorization; shares no code
    with the matrix-free estimators.
    """
    w = quadratic_inner_solve(q, lam)
    dF_dw = (2.0 / q.N) * (q.A_o.T @ (q.A_o @ w - q.b_o))
    return q.inner_jacobian().T @ dF_dw


def gen_quadratic(seed, n=5, m=5, N=10_000, noise_std=np.sqrt(0.1), max_tries=16):
    """Random instance: uniform [0, 1) matrices and planted points, Gaussian noise.

    ``b_o = A_o w_plant + noise`` and ``b_i = A_il lam_plant + A_iw w_aux + noise``.
    Instances whose inner Hessian is numerically singular are redrawn.
    """
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    if N < n + m:
        raise ValueError("N must be at least n + m")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        A_o = rng.random((N, n))
        A_il = rng.random((N, m))
        A_iw = rng.random((N, n))
        lam_p = rng.random(m)
        w_aux = rng.random(n)
        w_plant = rng.random(n)
        b_o = A_o @ w_plant + noise_std * rng.standard_normal(N)
        b_i = A_il @ lam_p + A_iw @ w_aux + noise_std * rng.standard_normal(N)
        try:
            q = QuadraticBilevel(A_o, b_o, A_il, A_iw, b_i)
        except DegenerateInstance:
            continue
        q.planted = {"lambda": lam_p, "omega": w_aux, "omega_lambda": w_plant}
        return q
    raise DegenerateInstance(f"no well-conditioned instance in {max_tries} draws (seed={seed})")

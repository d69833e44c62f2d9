"""Hyper-gradient estimators.

Every approximate estimator here is an instance of one product-sum

    g_K = dF/dlam(lam, w_K) - sum_{k<K} beta_k s_k

where ``s_k`` chains the factors ``(I - beta_s H(w_s))`` (H = d2G/dw2) with a
cross derivative ``C(w) = d2G/(dw dlam)``:

* backward mode: ``s_k = C(w_k) (I - beta_{k+1} H_{k+1}) ... (I - beta_{K-1} H_{K-1}) p_K``
* forward mode:  ``s_k = C(w_K) (I - beta_{K-1} H_{K-1}) ... (I - beta_{k+1} H_{k+1}) p_k``

Backpropagation through an unrolled inner loop, the truncated Neumann series
and conjugate gradient are special choices of ``(w_k, beta_k, p_k)``.  The
forward mode collapses to the single vector recursion
``v <- (I - beta H) v + beta p`` that the single-loop solver carries across
outer iterations.

Only Hessian-vector and cross-derivative-vector products are used.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import Diverged, InnerNotConverged
from .linalg import LinearOperator, as_vector, cg_solve, check_finite
from .problem import DIVERGENCE_NORM, FULL_BATCH

__all__ = [
    "Mode",
    "HyperGradSequenceSpec",
    "RecursiveVState",
    "exact_hypergrad",
    "general_hypergrad_naive",
    "general_hypergrad_recursive",
    "bp_hypergrad",
    "ns_hypergrad",
    "cg_hypergrad",
    "v_update",
    "hypergrad_from_v",
    "iter_v_recursion",
    "default_beta",
    "v_fixed_point",
    "lemma_sequences_from_omegas",
]


class Mode(enum.Enum):
    BACKWARD = "backward"
    FORWARD = "forward"


@dataclass
class HyperGradSequenceSpec:
    """Inputs of the general product-sum.

    ``omegas`` holds ``w_0 .. w_K`` (K+1 rows), ``betas`` holds
    ``beta_0 .. beta_{K-1}``.  ``ps`` is a single vector ``p_K`` in backward
    mode and ``K`` rows ``p_0 .. p_{K-1}`` in forward mode.
    """

    mode: Mode
    omegas: np.ndarray
    betas: np.ndarray
    ps: np.ndarray

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.omegas = np.atleast_2d(np.asarray(self.omegas, dtype=np.float64))
        self.betas = np.asarray(self.betas, dtype=np.float64).reshape(-1)
        self.ps = np.asarray(self.ps, dtype=np.float64)
        K = self.betas.shape[0]
        if self.omegas.shape[0] != K + 1:
            raise ValueError(f"need K+1={K + 1} inner states, got {self.omegas.shape[0]}")
        if np.any(self.betas < 0):
            raise ValueError("betas must be non-negative")
        n = self.omegas.shape[1]
        if self.mode is Mode.BACKWARD and self.ps.shape != (n,):
            raise ValueError(f"backward mode takes one p_K of shape ({n},), got {self.ps.shape}")
        if self.mode is Mode.FORWARD and self.ps.shape != (K, n):
            raise ValueError(f"forward mode takes p_0..p_(K-1) of shape ({K}, {n}), got {self.ps.shape}")

    @property
    def K(self):
        return self.betas.shape[0]

    @classmethod
    def constant(cls, mode, omega_hat, beta, p, K):
        """Constant sequences ``w_k = omega_hat``, ``beta_k = beta``, ``p_k = p``."""
        omega_hat = as_vector(omega_hat)
        omegas = np.tile(omega_hat, (K + 1, 1))
        betas = np.full(K, float(beta))
        p = as_vector(p)
        ps = p if Mode(mode) is Mode.BACKWARD else np.tile(p, (K, 1))
        return cls(mode, omegas, betas, ps)


@dataclass
class RecursiveVState:
    v: np.ndarray
    beta_last: float = 0.0


def default_beta(oracle):
    """``2 / (mu + L)``, the contraction-optimal constant step for an SPD Hessian."""
    return 2.0 / (oracle.strong_convexity_mu() + oracle.smoothness_L())


def exact_hypergrad(oracle, lam, omega_star, tol=1e-10, residual=None, max_iter=None):
    """Implicit-function hyper-gradient at an (accurate) inner minimizer.

    Solves ``H x = dF/dw`` by CG on full-batch Hessian-vector products and
    returns ``dF/dlam - C x``.  Passing the inner ``residual`` of
    ``omega_star`` enables the ``InnerNotConverged`` guard.
    """
    lam = as_vector(lam, "lam")
    omega_star = as_vector(omega_star, "omega_star")
    if residual is not None and residual > 10.0 * tol:
        raise InnerNotConverged(f"inner residual {residual:.3g} exceeds 10*tol={10 * tol:.3g}")
    n = omega_star.shape[0]
    op = LinearOperator(n, lambda v: oracle.hvp_inner(lam, omega_star, v))
    b = oracle.grad_outer_omega(lam, omega_star)
    x = cg_solve(op, b, tol=tol, max_iter=max_iter or max(10 * n, 100)).x
    return oracle.grad_outer_lambda(lam, omega_star) - oracle.cross_jvp_inner(lam, omega_star, x)


def _damp(oracle, lam, omega, beta, u, xi=FULL_BATCH):
    return u - beta * oracle.hvp_inner(lam, omega, u, xi)


def general_hypergrad_naive(oracle, lam, spec: HyperGradSequenceSpec):
    """Literal O(K^2) evaluation of the product-sum; a test oracle only."""
    lam = as_vector(lam, "lam")
    K, W, B = spec.K, spec.omegas, spec.betas
    total = np.zeros(oracle.outer_dim)
    for k in range(K):
        if spec.mode is Mode.BACKWARD:
            u = spec.ps.copy()
            for s in range(K - 1, k, -1):
                u = _damp(oracle, lam, W[s], B[s], u)
            s_k = oracle.cross_jvp_inner(lam, W[k], u)
        else:
            u = spec.ps[k].copy()
            for s in range(k + 1, K):
                u = _damp(oracle, lam, W[s], B[s], u)
            s_k = oracle.cross_jvp_inner(lam, W[K], u)
        total += B[k] * s_k
    return oracle.grad_outer_lambda(lam, W[K]) - total


def general_hypergrad_recursive(oracle, lam, spec: HyperGradSequenceSpec, xi=FULL_BATCH,
                                step_keys=None):
    """O(K) evaluation of the product-sum.

    Forward mode runs ``v <- (I - beta_k H_k) v + beta_k p_k`` then applies
    one cross product at ``w_K``.  Backward mode sweeps ``k = K-1 .. 0``,
    accumulating ``beta_k C(w_k) u`` and damping ``u`` (seeded with ``p_K``)
    by ``(I - beta_k H_k)``; the m x n matrix the sum represents is never
    formed.

    ``step_keys[k]`` (default ``xi``) is the sample key for the products at
    ``w_k``; the terminal terms use ``xi``.
    """
    lam = as_vector(lam, "lam")
    K, W, B = spec.K, spec.omegas, spec.betas
    keys = [xi] * K if step_keys is None else list(step_keys)
    if len(keys) != K:
        raise ValueError(f"need {K} step keys, got {len(keys)}")
    if spec.mode is Mode.FORWARD:
        v = np.zeros(W.shape[1])
        for k in range(K):
            if k > 0:
                v = _damp(oracle, lam, W[k], B[k], v, keys[k])
            v = v + B[k] * spec.ps[k]
        corr = oracle.cross_jvp_inner(lam, W[K], v, xi) if K > 0 else 0.0
        return oracle.grad_outer_lambda(lam, W[K], xi) - corr
    u = spec.ps.copy()
    acc = np.zeros(oracle.outer_dim)
    for k in range(K - 1, -1, -1):
        acc += B[k] * oracle.cross_jvp_inner(lam, W[k], u, keys[k])
        if k > 0:
            u = _damp(oracle, lam, W[k], B[k], u, keys[k])
    return oracle.grad_outer_lambda(lam, W[K], xi) - acc


def _gd_trajectory(oracle, lam, omega0, lrs, xi=FULL_BATCH):
    traj = [as_vector(omega0, "omega0")]
    for k, lr in enumerate(lrs):
        w = traj[-1] - lr * oracle.grad_inner_omega(lam, traj[-1], xi)
        norm = np.linalg.norm(w)
        if not norm <= DIVERGENCE_NORM:
            raise Diverged(f"inner iterate norm {norm:.3g} exceeds {DIVERGENCE_NORM:g}", k=k + 1)
        traj.append(w)
    return np.array(traj)


def bp_hypergrad(oracle, lam, omega0, K, lrs, p_at="terminal"):
    """Backpropagation through ``K`` unrolled full-batch gradient steps.

    ``lrs`` are the inner step sizes (a scalar is broadcast).  With
    ``p_at="terminal"`` the outer gradient is taken at the last inner state
    (exact reverse-mode derivative of ``lam -> F(lam, w_K(lam))``); with
    ``p_at="each"`` the forward-mode variant with ``p_k = dF/dw(lam, w_k)``
    is returned instead.  Returns ``(g, trajectory)`` where the trajectory
    holds ``w_0 .. w_K``.
    """
    lam = as_vector(lam, "lam")
    L = oracle.smoothness_L()
    lrs = np.broadcast_to(np.asarray(lrs, dtype=np.float64), (K,)).copy()
    if np.any(lrs <= 0) or np.any(lrs >= 2.0 / L):
        raise ValueError(f"inner step sizes must lie in (0, 2/L) = (0, {2.0 / L:.6g})")
    traj = _gd_trajectory(oracle, lam, omega0, lrs)
    if p_at == "terminal":
        spec = HyperGradSequenceSpec(
            Mode.BACKWARD, traj, lrs, oracle.grad_outer_omega(lam, traj[-1])
        )
    elif p_at == "each":
        ps = np.array([oracle.grad_outer_omega(lam, w) for w in traj[:-1]]).reshape(K, traj.shape[1])
        spec = HyperGradSequenceSpec(Mode.FORWARD, traj, lrs, ps)
    else:
        raise ValueError(f"p_at must be 'terminal' or 'each', got {p_at!r}")
    return general_hypergrad_recursive(oracle, lam, spec), traj


def ns_hypergrad(oracle, lam, omega_hat, K, beta=None, xi=FULL_BATCH):
    """Neumann-series estimate with powers ``0..K`` of ``(I - beta H)``.

    Equals the backward product-sum over ``K+1`` constant terms; because
    ``w_k`` is constant the cross product is factored out, so the cost is
    ``K`` Hessian-vector products and one cross product.
    """
    if K < 0:
        raise ValueError("K must be >= 0")
    if beta is None:
        beta = default_beta(oracle)
    lam = as_vector(lam, "lam")
    omega_hat = as_vector(omega_hat, "omega_hat")
    u = oracle.grad_outer_omega(lam, omega_hat, xi)
    acc = u.copy()
    for _ in range(K):
        u = u - beta * oracle.hvp_inner(lam, omega_hat, u, xi)
        acc += u
    check_finite(acc, "Neumann sum")
    return oracle.grad_outer_lambda(lam, omega_hat, xi) - beta * oracle.cross_jvp_inner(
        lam, omega_hat, acc, xi
    )


def cg_hypergrad(oracle, lam, omega_hat, K, tol=1e-14, xi=FULL_BATCH):
    """``K`` conjugate-gradient iterations on ``H x = dF/dw`` at ``omega_hat``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    lam = as_vector(lam, "lam")
    omega_hat = as_vector(omega_hat, "omega_hat")
    op = LinearOperator(omega_hat.shape[0], lambda v: oracle.hvp_inner(lam, omega_hat, v, xi))
    x = cg_solve(op, oracle.grad_outer_omega(lam, omega_hat, xi), tol=tol, max_iter=K).x
    return oracle.grad_outer_lambda(lam, omega_hat, xi) - oracle.cross_jvp_inner(
        lam, omega_hat, x, xi
    )


def v_update(oracle, lam, omega, v, beta, xi=FULL_BATCH, xi_hvp: Optional[object] = None):
    """One step ``beta dF/dw(xi) + (I - beta H(xi_hvp)) v``; one Hessian-vector product."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    xi_hvp = xi if xi_hvp is None else xi_hvp
    hv = oracle.hvp_inner(lam, omega, v, xi_hvp)
    return v - beta * hv + beta * oracle.grad_outer_omega(lam, omega, xi)


def hypergrad_from_v(oracle, lam, omega, v, xi=FULL_BATCH, xi_cross=None):
    """``dF/dlam(xi) - C(xi_cross) v``."""
    xi_cross = xi if xi_cross is None else xi_cross
    return oracle.grad_outer_lambda(lam, omega, xi) - oracle.cross_jvp_inner(lam, omega, v, xi_cross)


def iter_v_recursion(oracle, lam, omega0, inner_lr, beta, v0=None):
    """Fixed-lam streaming estimator: alternate one inner step and one v step.

    Yields ``(k, g_k, w_k)`` for k = 1, 2, ... where

        w_k = w_{k-1} - inner_lr dG/dw(w_{k-1})
        v_k = beta dF/dw(w_k) + (I - beta H(w_k)) v_{k-1}
        g_k = dF/dlam(w_k) - C(w_k) v_k

    so each yield costs one Hessian-vector and one cross product.
    """
    lam = as_vector(lam, "lam")
    w = as_vector(omega0, "omega0")
    v = np.zeros_like(w) if v0 is None else as_vector(v0, "v0")
    k = 0
    while True:
        k += 1
        w = w - inner_lr * oracle.grad_inner_omega(lam, w)
        v = v_update(oracle, lam, w, v, beta)
        yield k, hypergrad_from_v(oracle, lam, w, v), w


def v_fixed_point(oracle, lam, omega, tol=1e-12):
    """``H^{-1} dF/dw`` at (lam, omega) by CG; the target of :func:`v_update`."""
    omega = as_vector(omega)
    op = LinearOperator(omega.shape[0], lambda u: oracle.hvp_inner(lam, omega, u))
    return cg_solve(op, oracle.grad_outer_omega(lam, omega), tol=tol,
                    max_iter=max(10 * omega.shape[0], 100)).x


def lemma_sequences_from_omegas(oracle, lam, omegas: Sequence, betas, mode="backward"):
    """Spec with ``p`` taken as the outer gradient at the terminal state (backward)
    or at every state (forward)."""
    omegas = np.asarray(omegas, dtype=np.float64)
    mode = Mode(mode)
    if mode is Mode.BACKWARD:
        ps = oracle.grad_outer_omega(lam, omegas[-1])
    else:
        ps = np.array([oracle.grad_outer_omega(lam, w) for w in omegas[:-1]]).reshape(
            len(omegas) - 1, omegas.shape[1]
        )
    return HyperGradSequenceSpec(mode, omegas, betas, ps)

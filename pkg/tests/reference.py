"""Dense reference computations used as independent test oracles."""
import numpy as np


def dense_matrices(oracle, lam, omega):
    """Materialize H (n x n) and C (m x n) column by column from the oracle."""
    n = oracle.inner_dim
    E = np.eye(n)
    H = np.column_stack([oracle.hvp_inner(lam, omega, e) for e in E])
    C = np.column_stack([oracle.cross_jvp_inner(lam, omega, e) for e in E])
    return H, C


def krylov_hypergrad(oracle, lam, omega, K):
    """Galerkin solution of H x = p on span{p, Hp, ..., H^(K-1) p}.

    This is what K exact-arithmetic CG iterations from zero return.
    """
    H, C = dense_matrices(oracle, lam, omega)
    p = oracle.grad_outer_omega(lam, omega)
    cols = [p]
    for _ in range(K - 1):
        cols.append(H @ cols[-1])
    Q, _ = np.linalg.qr(np.column_stack(cols))
    Q = Q[:, : min(K, Q.shape[0])]
    y = np.linalg.solve(Q.T @ H @ Q, Q.T @ p)
    return oracle.grad_outer_lambda(lam, omega) - C @ (Q @ y)


def unrolled_value(oracle, lam, omega0, lrs):
    """lam -> F(lam, w_K(lam)) through K full-batch gradient steps."""
    w = np.array(omega0, dtype=float)
    for lr in lrs:
        w = w - lr * oracle.grad_inner_omega(lam, w)
    return oracle.outer_value(lam, w)

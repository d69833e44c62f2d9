"""Small analytic oracles shared by the tests."""
import numpy as np

from bilevelkit.problem import FULL_BATCH, BilevelOracle


class ShiftOracle(BilevelOracle):
    """G = 0.5 ||w - lam||^2 and F = 0.5 ||w - c||^2 + 0.5 a ||lam||^2, so w_lam = lam."""

    constant_hessian = True

    def __init__(self, c, a=0.0):
        self.c = np.asarray(c, dtype=float)
        self.a = float(a)
        self.outer_dim = self.inner_dim = self.c.shape[0]

    def outer_value(self, lam, omega, xi=FULL_BATCH):
        return 0.5 * float((omega - self.c) @ (omega - self.c)) + 0.5 * self.a * float(lam @ lam)

    def inner_value(self, lam, omega, xi=FULL_BATCH):
        return 0.5 * float((omega - lam) @ (omega - lam))

    def grad_outer_lambda(self, lam, omega, xi=FULL_BATCH):
        return self.a * np.asarray(lam, dtype=float)

    def grad_outer_omega(self, lam, omega, xi=FULL_BATCH):
        return omega - self.c

    def grad_inner_omega(self, lam, omega, xi=FULL_BATCH):
        return omega - lam

    def hvp_inner(self, lam, omega, v, xi=FULL_BATCH):
        return np.array(v, dtype=float)

    def cross_jvp_inner(self, lam, omega, v, xi=FULL_BATCH):
        return -np.array(v, dtype=float)

    def strong_convexity_mu(self):
        return 1.0

    def smoothness_L(self):
        return 1.0

    def hypergrad(self, lam):
        return self.a * lam + (lam - self.c)


class BrokenCross(ShiftOracle):
    """Cross product with the wrong sign; the checker must catch it."""

    def cross_jvp_inner(self, lam, omega, v, xi=FULL_BATCH):
        return np.array(v, dtype=float)

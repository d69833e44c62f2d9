"""Synthetic inner-state sequences with a prescribed power-law error."""
from dataclasses import dataclass

import numpy as np

from ..linalg import as_vector

__all__ = ["SyntheticOmegaSeq", "gen_omega_seq", "DEFAULT_ALPHAS"]

DEFAULT_ALPHAS = (2.0, 1.0, 0.5, 0.25)


@dataclass(frozen=True)
class SyntheticOmegaSeq:
    """``w_k = omega_star + omega_tilde / k**alpha`` for k = 1, 2, ..."""

    omega_star: np.ndarray
    omega_tilde: np.ndarray
    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        object.__setattr__(self, "omega_star", as_vector(self.omega_star, "omega_star"))
        object.__setattr__(self, "omega_tilde", as_vector(self.omega_tilde, "omega_tilde"))
        if self.omega_star.shape != self.omega_tilde.shape:
            raise ValueError("omega_star and omega_tilde differ in dimension")

    def at(self, k):
        return self.omega_star + self.omega_tilde * float(k) ** -self.alpha

    def error(self, k):
        return float(np.linalg.norm(self.omega_tilde)) * float(k) ** -self.alpha


def gen_omega_seq(s: SyntheticOmegaSeq, K):
    """Array of shape (K, n) holding w_1 ... w_K."""
    if K < 1:
        raise ValueError("K must be >= 1")
    k = np.arange(1, K + 1, dtype=np.float64)
    return s.omega_star[None, :] + (k ** -s.alpha)[:, None] * s.omega_tilde[None, :]

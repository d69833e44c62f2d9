"""Data hyper-cleaning with a ridge-regularized logistic model.

Each training sample j carries a weight ``sigmoid(lam_j)``:

    G(lam, w) = (1/N_i) sum_j sigmoid(lam_j) l(w; x_j, y_j) + (ridge_mu/2) ||w||^2
    F(lam, w) = (1/N_v) sum_j l(w; x_j, y_j) over the clean validation set

with ``l`` the logistic loss.  The ridge term makes G ``ridge_mu``-strongly
convex for every lam.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .. import kernels
from ..errors import InvalidConfig
from ..problem import FULL_BATCH, BilevelOracle

__all__ = [
    "CleaningProblem",
    "CleaningOracle",
    "gen_cleaning",
    "cleaning_oracle",
    "detection_auc",
    "save_cleaning_csv",
    "load_cleaning_csv",
]

_TRAIN, _VAL = 0, 1


@dataclass
class CleaningProblem:
    X_train: np.ndarray
    y_train: np.ndarray
    corrupted: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray
    ridge_mu: float = 0.05

    def __post_init__(self):
        self.X_train = np.ascontiguousarray(self.X_train, dtype=np.float64)
        self.X_val = np.ascontiguousarray(self.X_val, dtype=np.float64)
        self.y_train = np.ascontiguousarray(self.y_train, dtype=np.float64)
        self.y_val = np.ascontiguousarray(self.y_val, dtype=np.float64)
        self.corrupted = np.asarray(self.corrupted, dtype=bool)
        if self.ridge_mu <= 0:
            raise InvalidConfig("ridge_mu must be positive")
        if self.X_train.shape[1] != self.X_val.shape[1]:
            raise ValueError("train and validation feature dimensions differ")

    @property
    def n_train(self):
        return self.X_train.shape[0]

    @property
    def n_features(self):
        return self.X_train.shape[1]


def gen_cleaning(seed, N_i=500, N_v=500, d=10, gamma=0.4, blob_separation=3.0, ridge_mu=0.05):
    """Two unit-variance Gaussian blobs at ``+-separation/2`` along a random axis.

    Exactly ``floor(gamma * N_i)`` training labels are flipped; the
    validation labels are left clean.
    """
    if not 0.0 <= gamma < 1.0:
        raise InvalidConfig(f"gamma must lie in [0, 1), got {gamma}")
    if d < 2:
        raise InvalidConfig("d must be >= 2")
    rng = np.random.default_rng(seed)
    axis = rng.standard_normal(d)
    axis /= np.linalg.norm(axis)

    def blobs(n):
        y = rng.integers(0, 2, size=n).astype(np.float64)
        X = rng.standard_normal((n, d)) + np.outer(2.0 * y - 1.0, axis) * (blob_separation / 2.0)
        return X, y

    X_tr, y_tr = blobs(N_i)
    X_v, y_v = blobs(N_v)
    n_flip = int(np.floor(gamma * N_i))
    mask = np.zeros(N_i, dtype=bool)
    mask[rng.choice(N_i, size=n_flip, replace=False)] = True
    y_tr[mask] = 1.0 - y_tr[mask]
    return CleaningProblem(X_tr, y_tr, mask, X_v, y_v, ridge_mu)


class CleaningOracle(BilevelOracle):
    """Analytic oracles for :class:`CleaningProblem`.

    ``smoothness_L`` bounds the inner Hessian by ``ridge_mu + sum ||x_j||^2 /
    (4 N_i)``, using ``sigmoid <= 1`` so the bound holds for every lam.
    """

    def __init__(self, p: CleaningProblem):
        self.p = p
        self.outer_dim = p.n_train
        self.inner_dim = p.n_features
        self._ones_val = np.ones(p.X_val.shape[0])
        self._L = p.ridge_mu + float(np.sum(p.X_train**2)) / (4.0 * p.n_train)

    def _idx(self, xi, stream):
        n = self.p.n_train if stream == _TRAIN else self.p.X_val.shape[0]
        return xi.indices(n, stream)

    def outer_value(self, lam, omega, xi=FULL_BATCH):
        return kernels.wlogistic_value(
            self.p.X_val, self.p.y_val, self._ones_val, self._idx(xi, _VAL), omega
        )

    def inner_value(self, lam, omega, xi=FULL_BATCH):
        w = expit(lam)
        data = kernels.wlogistic_value(
            self.p.X_train, self.p.y_train, w, self._idx(xi, _TRAIN), omega
        )
        return data + 0.5 * self.p.ridge_mu * float(omega @ omega)

    def grad_outer_lambda(self, lam, omega, xi=FULL_BATCH):
        return np.zeros(self.outer_dim)

    def grad_outer_omega(self, lam, omega, xi=FULL_BATCH):
        return kernels.wlogistic_grad(
            self.p.X_val, self.p.y_val, self._ones_val, self._idx(xi, _VAL), omega
        )

    def grad_inner_omega(self, lam, omega, xi=FULL_BATCH):
        g = kernels.wlogistic_grad(
            self.p.X_train, self.p.y_train, expit(lam), self._idx(xi, _TRAIN), omega
        )
        return g + self.p.ridge_mu * omega

    def hvp_inner(self, lam, omega, v, xi=FULL_BATCH):
        hv = kernels.wlogistic_hvp(self.p.X_train, expit(lam), self._idx(xi, _TRAIN), omega, v)
        return hv + self.p.ridge_mu * v

    def cross_jvp_inner(self, lam, omega, v, xi=FULL_BATCH):
        s = expit(lam)
        return kernels.logistic_cross(
            self.p.X_train, self.p.y_train, s * (1.0 - s), self._idx(xi, _TRAIN), omega, v
        )

    def strong_convexity_mu(self):
        return self.p.ridge_mu

    def smoothness_L(self):
        return self._L

    def validation_loss(self, omega):
        return self.outer_value(None, omega)

    def detection_auc(self, lam):
        return detection_auc(lam, self.p.corrupted)


def cleaning_oracle(p: CleaningProblem) -> CleaningOracle:
    return CleaningOracle(p)


def detection_auc(lam, corrupted):
    """ROC AUC of ranking samples by ``-sigmoid(lam_j)`` for flagging corruption.

    Mann-Whitney form with midranks for ties; NaN when either class is empty.
    """
    from scipy.stats import rankdata

    corrupted = np.asarray(corrupted, dtype=bool)
    n_pos = int(corrupted.sum())
    n_neg = corrupted.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(-np.asarray(lam, dtype=np.float64))
    return float((ranks[corrupted].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def save_cleaning_csv(p: CleaningProblem, path):
    """Write ``split, f0..f{d-1}, label, corrupted`` rows (train first, then val)."""
    d = p.n_features
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", *(f"f{i}" for i in range(d)), "label", "corrupted"])
        for X, y, mask, split in (
            (p.X_train, p.y_train, p.corrupted, "train"),
            (p.X_val, p.y_val, np.zeros(len(p.y_val), dtype=bool), "val"),
        ):
            for row, label, bad in zip(X, y, mask):
                w.writerow([split, *(repr(float(x)) for x in row), int(label), int(bad)])


def load_cleaning_csv(path, ridge_mu=0.05):
    rows = {"train": ([], [], []), "val": ([], [], [])}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "split" or header[-2:] != ["label", "corrupted"]:
            raise ValueError(f"unexpected header {header}")
        for rec in reader:
            X, y, m = rows[rec[0]]
            X.append([float(v) for v in rec[1:-2]])
            y.append(int(rec[-2]))
            m.append(rec[-1] == "1")
    (Xt, yt, mt), (Xv, yv, _) = rows["train"], rows["val"]
    return CleaningProblem(np.array(Xt), np.array(yt), np.array(mt), np.array(Xv), np.array(yv), ridge_mu)

"""Numpy implementations of the per-sample inner-loop kernels.

Same signatures and semantics as the compiled ``_ckernels`` module; used
when the extension is unavailable or ``BILEVELKIT_PURE_PYTHON=1``.

All reductions are means over the selected rows ``idx`` (``None`` = all).
"""
import numpy as np
from scipy.special import expit


def _rows(X, idx):
    return X if idx is None else X[idx]


def _sel(a, idx):
    return a if idx is None else a[idx]


def wlogistic_value(X, y, w, idx, omega):
    z = _rows(X, idx) @ omega
    loss = np.logaddexp(0.0, z) - _sel(y, idx) * z
    return float(np.mean(_sel(w, idx) * loss))


def wlogistic_grad(X, y, w, idx, omega):
    Xb = _rows(X, idx)
    r = _sel(w, idx) * (expit(Xb @ omega) - _sel(y, idx))
    return Xb.T @ r / Xb.shape[0]


def wlogistic_hvp(X, w, idx, omega, v):
    Xb = _rows(X, idx)
    s = expit(Xb @ omega)
    c = _sel(w, idx) * s * (1.0 - s) * (Xb @ v)
    return Xb.T @ c / Xb.shape[0]


def logistic_cross(X, y, wp, idx, omega, v):
    """Per-sample vector ``wp_j (s_j - y_j) <x_j, v> / B`` scattered into R^N."""
    Xb = _rows(X, idx)
    vals = _sel(wp, idx) * (expit(Xb @ omega) - _sel(y, idx)) * (Xb @ v) / Xb.shape[0]
    if idx is None:
        return vals
    out = np.zeros(X.shape[0])
    out[idx] = vals
    return out

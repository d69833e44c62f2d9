import importlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bilevelkit import _pykernels, kernels

try:
    _ck = importlib.import_module("bilevelkit._ckernels")
except ImportError:  # extension not built
    _ck = None

needs_ext = pytest.mark.skipif(_ck is None, reason="compiled kernels not built")


def data(seed, n=40, d=6):
    r = np.random.default_rng(seed)
    X = r.standard_normal((n, d))
    y = (r.random(n) < 0.5).astype(float)
    w = r.random(n)
    omega = r.standard_normal(d)
    v = r.standard_normal(d)
    idx = np.sort(r.choice(n, size=n // 3, replace=False))
    return X, y, w, omega, v, idx


def test_backend_name():
    assert kernels.BACKEND in ("cython", "python")


@needs_ext
class TestBackendsAgree:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.booleans())
    def test_all_kernels(self, seed, full):
        X, y, w, omega, v, idx = data(seed)
        idx = None if full else idx
        for name, args in (
            ("wlogistic_value", (X, y, w, idx, omega)),
            ("wlogistic_grad", (X, y, w, idx, omega)),
            ("wlogistic_hvp", (X, w, idx, omega, v)),
            ("logistic_cross", (X, y, w, idx, omega, v)),
        ):
            np.testing.assert_allclose(
                getattr(_ck, name)(*args), getattr(_pykernels, name)(*args),
                rtol=1e-12, atol=1e-14, err_msg=name,
            )

    def test_extreme_margins(self):
        X = np.array([[1.0], [-1.0]])
        y = np.array([1.0, 0.0])
        w = np.ones(2)
        omega = np.array([800.0])
        assert np.isfinite(_ck.wlogistic_value(X, y, w, None, omega))
        np.testing.assert_allclose(
            _ck.wlogistic_value(X, y, w, None, omega),
            _pykernels.wlogistic_value(X, y, w, None, omega), atol=1e-300,
        )


class TestPythonKernels:
    def test_grad_matches_fd(self):
        X, y, w, omega, _, idx = data(3)
        from bilevelkit.linalg import finite_diff_grad

        fd = finite_diff_grad(lambda o: _pykernels.wlogistic_value(X, y, w, idx, o), omega)
        np.testing.assert_allclose(_pykernels.wlogistic_grad(X, y, w, idx, omega), fd, rtol=1e-7)

    def test_hvp_symmetric_psd(self):
        X, y, w, omega, _, _ = data(4)
        H = np.column_stack([_pykernels.wlogistic_hvp(X, w, None, omega, e) for e in np.eye(6)])
        np.testing.assert_allclose(H, H.T, atol=1e-14)
        assert np.linalg.eigvalsh(H).min() >= -1e-14

    def test_cross_scatter(self):
        X, y, w, omega, v, idx = data(5)
        out = _pykernels.logistic_cross(X, y, w, idx, omega, v)
        mask = np.ones(X.shape[0], dtype=bool)
        mask[idx] = False
        assert out.shape == (X.shape[0],) and np.all(out[mask] == 0.0)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bilevelkit.errors import InnerNotConverged
from bilevelkit.hypergrad import (
    HyperGradSequenceSpec,
    Mode,
    bp_hypergrad,
    cg_hypergrad,
    default_beta,
    exact_hypergrad,
    general_hypergrad_naive,
    general_hypergrad_recursive,
    hypergrad_from_v,
    iter_v_recursion,
    lemma_sequences_from_omegas,
    ns_hypergrad,
    v_fixed_point,
    v_update,
)
from bilevelkit.linalg import finite_diff_grad
from bilevelkit.problem import CountingOracle
from bilevelkit.problems import gen_quadratic, quadratic_exact_hypergrad, quadratic_inner_solve
from reference import dense_matrices, krylov_hypergrad, unrolled_value
from toy import ShiftOracle


def random_spec(oracle, r, K, mode):
    n = oracle.inner_dim
    omegas = r.standard_normal((K + 1, n))
    betas = r.uniform(0, 1.0 / oracle.smoothness_L(), K)
    ps = r.standard_normal(n) if mode is Mode.BACKWARD else r.standard_normal((K, n))
    return HyperGradSequenceSpec(mode, omegas, betas, ps)


class TestSpec:
    def test_shapes_checked(self):
        with pytest.raises(ValueError):
            HyperGradSequenceSpec(Mode.BACKWARD, np.zeros((3, 2)), np.ones(3), np.zeros(2))
        with pytest.raises(ValueError):
            HyperGradSequenceSpec(Mode.FORWARD, np.zeros((3, 2)), np.ones(2), np.zeros(2))
        with pytest.raises(ValueError):
            HyperGradSequenceSpec(Mode.BACKWARD, np.zeros((2, 2)), -np.ones(1), np.zeros(2))

    def test_constant(self):
        s = HyperGradSequenceSpec.constant("forward", np.ones(2), 0.1, np.arange(2.0), 4)
        assert s.K == 4 and s.ps.shape == (4, 2) and s.omegas.shape == (5, 2)

    def test_k_zero(self, small_quad):
        lam = np.zeros(3)
        s = HyperGradSequenceSpec.constant("backward", np.ones(4), 0.1, np.ones(4), 0)
        np.testing.assert_array_equal(general_hypergrad_recursive(small_quad, lam, s), 0.0)


class TestExact:
    def test_matches_closed_form(self, quad):
        lam = np.linspace(-1, 1, 5)
        w = quadratic_inner_solve(quad, lam)
        np.testing.assert_allclose(
            exact_hypergrad(quad, lam, w), quadratic_exact_hypergrad(quad, lam), rtol=1e-9, atol=1e-12
        )

    def test_shift(self):
        o = ShiftOracle(np.array([1.0, 2.0]), a=0.5)
        lam = np.array([0.3, -0.1])
        np.testing.assert_allclose(exact_hypergrad(o, lam, lam), o.hypergrad(lam))

    def test_residual_guard(self, small_quad):
        with pytest.raises(InnerNotConverged):
            exact_hypergrad(small_quad, np.zeros(3), np.zeros(4), tol=1e-10, residual=1e-3)


class TestGeneralProductSum:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 8), st.sampled_from(list(Mode)))
    def test_recursive_equals_naive_quadratic(self, seed, K, mode):
        q = gen_quadratic(seed % 50, n=3, m=2, N=30)
        r = np.random.default_rng(seed)
        spec = random_spec(q, r, K, mode)
        lam = r.standard_normal(2)
        np.testing.assert_allclose(
            general_hypergrad_recursive(q, lam, spec), general_hypergrad_naive(q, lam, spec),
            rtol=1e-10, atol=1e-12,
        )

    @pytest.mark.parametrize("mode", list(Mode))
    def test_recursive_equals_naive_nonconstant_hessian(self, clean, mode):
        r = np.random.default_rng(7)
        spec = random_spec(clean, r, 6, mode)
        lam = r.standard_normal(clean.outer_dim)
        np.testing.assert_allclose(
            general_hypergrad_recursive(clean, lam, spec), general_hypergrad_naive(clean, lam, spec),
            rtol=1e-10, atol=1e-13,
        )

    def test_recursive_cost_linear(self, small_quad):
        r = np.random.default_rng(0)
        for mode in Mode:
            c = CountingOracle(small_quad)
            general_hypergrad_recursive(c, np.zeros(3), random_spec(small_quad, r, 10, mode))
            assert c.hvp_calls == 9
            assert c.cross_jvp_calls == (10 if mode is Mode.BACKWARD else 1)

    def test_step_keys_length(self, small_quad):
        spec = random_spec(small_quad, np.random.default_rng(0), 3, Mode.BACKWARD)
        with pytest.raises(ValueError):
            general_hypergrad_recursive(small_quad, np.zeros(3), spec, step_keys=[None])


class TestNeumann:
    def test_equals_constant_backward_spec(self, small_quad, rng):
        lam, w = rng.random(3), rng.random(4)
        beta = 0.8 / small_quad.smoothness_L()
        for K in (0, 1, 5):
            spec = HyperGradSequenceSpec.constant(
                Mode.BACKWARD, w, beta, small_quad.grad_outer_omega(lam, w), K + 1
            )
            np.testing.assert_allclose(
                ns_hypergrad(small_quad, lam, w, K, beta),
                general_hypergrad_recursive(small_quad, lam, spec), rtol=1e-10, atol=1e-13,
            )

    def test_call_counts(self, small_quad):
        c = CountingOracle(small_quad)
        ns_hypergrad(c, np.zeros(3), np.zeros(4), 7)
        assert (c.hvp_calls, c.cross_jvp_calls) == (7, 1)

    def test_converges_to_exact(self, small_quad):
        lam = np.full(3, 0.4)
        w = quadratic_inner_solve(small_quad, lam)
        g = ns_hypergrad(small_quad, lam, w, 3000, default_beta(small_quad))
        np.testing.assert_allclose(g, quadratic_exact_hypergrad(small_quad, lam), rtol=1e-8, atol=1e-12)

    def test_negative_k(self, small_quad):
        with pytest.raises(ValueError):
            ns_hypergrad(small_quad, np.zeros(3), np.zeros(4), -1)


class TestCG:
    def test_finite_termination(self, quad):
        lam = np.linspace(0, 1, 5)
        w = quadratic_inner_solve(quad, lam)
        np.testing.assert_allclose(
            cg_hypergrad(quad, lam, w, 5), quadratic_exact_hypergrad(quad, lam), atol=1e-9
        )

    @pytest.mark.parametrize("K", [1, 2, 3])
    def test_krylov(self, quad, K):
        lam = np.linspace(0, 1, 5)
        w = np.full(5, 0.3)
        np.testing.assert_allclose(
            cg_hypergrad(quad, lam, w, K), krylov_hypergrad(quad, lam, w, K), rtol=1e-7, atol=1e-10
        )

    def test_k_positive(self, small_quad):
        with pytest.raises(ValueError):
            cg_hypergrad(small_quad, np.zeros(3), np.zeros(4), 0)


class TestBP:
    def test_matches_unrolled_fd(self, small_quad):
        lam = np.array([0.1, 0.5, -0.3])
        w0 = np.zeros(4)
        lrs = np.full(12, 0.9 / small_quad.smoothness_L())
        g, traj = bp_hypergrad(small_quad, lam, w0, 12, lrs)
        fd = finite_diff_grad(lambda l: unrolled_value(small_quad, l, w0, lrs), lam, h=1e-4)
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-10)
        assert traj.shape == (13, 4)

    def test_matches_unrolled_fd_cleaning(self, clean):
        r = np.random.default_rng(2)
        lam = r.standard_normal(clean.outer_dim)
        w0 = 0.1 * r.standard_normal(clean.inner_dim)
        lrs = np.full(5, 1.0 / clean.smoothness_L())
        g, _ = bp_hypergrad(clean, lam, w0, 5, lrs)
        fd = finite_diff_grad(lambda l: unrolled_value(clean, l, w0, lrs), lam, h=1e-5)
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-9)

    def test_each_is_forward_spec(self, small_quad):
        lam = np.full(3, 0.2)
        g, traj = bp_hypergrad(small_quad, lam, np.zeros(4), 6, 0.1, p_at="each")
        spec = lemma_sequences_from_omegas(small_quad, lam, traj, np.full(6, 0.1), "forward")
        np.testing.assert_allclose(g, general_hypergrad_naive(small_quad, lam, spec), rtol=1e-10)

    def test_lr_validation(self, small_quad):
        with pytest.raises(ValueError):
            bp_hypergrad(small_quad, np.zeros(3), np.zeros(4), 3, 2.0 / small_quad.smoothness_L())
        with pytest.raises(ValueError):
            bp_hypergrad(small_quad, np.zeros(3), np.zeros(4), 3, 0.1, p_at="middle")

    def test_long_unroll_approaches_exact(self, small_quad):
        lam = np.full(3, 0.2)
        g, _ = bp_hypergrad(small_quad, lam, np.zeros(4), 4000, 1.0 / small_quad.smoothness_L())
        np.testing.assert_allclose(g, quadratic_exact_hypergrad(small_quad, lam), rtol=1e-7, atol=1e-10)


class TestVRecursion:
    def test_single_hvp(self, small_quad):
        c = CountingOracle(small_quad)
        v_update(c, np.zeros(3), np.zeros(4), np.ones(4), 0.1)
        assert c.hvp_calls == 1 and c.cross_jvp_calls == 0

    def test_fixed_point_is_exact(self, small_quad):
        lam = np.full(3, 0.7)
        w = quadratic_inner_solve(small_quad, lam)
        v = v_fixed_point(small_quad, lam, w)
        np.testing.assert_allclose(v_update(small_quad, lam, w, v, 0.3), v, atol=1e-12)
        np.testing.assert_allclose(
            hypergrad_from_v(small_quad, lam, w, v), quadratic_exact_hypergrad(small_quad, lam),
            rtol=1e-9, atol=1e-12,
        )

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0))
    def test_contraction_and_bound(self, seed, frac):
        # beta <= 1/L: ||v_k - v*|| shrinks by (1 - beta mu) and ||v_k|| <= ||p|| / mu from v_0 = 0
        q = gen_quadratic(seed % 40, n=3, m=2, N=30)
        r = np.random.default_rng(seed)
        lam, w = r.random(2), r.random(3)
        mu, L = q.strong_convexity_mu(), q.smoothness_L()
        beta = frac / L
        H, _ = dense_matrices(q, lam, w)
        p = q.grad_outer_omega(lam, w)
        v_star = np.linalg.solve(H, p)
        bound = np.linalg.norm(p) / mu
        v = np.zeros(3)
        for _ in range(50):
            nxt = v_update(q, lam, w, v, beta)
            e0, e1 = np.linalg.norm(v - v_star), np.linalg.norm(nxt - v_star)
            assert e1 <= (1 - beta * mu) * e0 + 1e-12
            assert np.linalg.norm(nxt) <= bound + 1e-9
            v = nxt

    def test_streaming_converges(self, small_quad):
        lam = np.full(3, 0.1)
        beta = 1.0 / small_quad.smoothness_L()
        for k, g, w in iter_v_recursion(small_quad, lam, np.zeros(4), beta, beta):
            if k == 3000:
                break
        np.testing.assert_allclose(g, quadratic_exact_hypergrad(small_quad, lam), rtol=1e-7, atol=1e-10)

    def test_negative_beta(self, small_quad):
        with pytest.raises(ValueError):
            v_update(small_quad, np.zeros(3), np.zeros(4), np.zeros(4), -0.1)


class TestDocumentedCases:
    def test_identity_instance_gradient(self, rng):
        from bilevelkit.problems import QuadraticBilevel

        A, b = rng.random((4, 4)), rng.random(4)
        q = QuadraticBilevel.identity_inner(A, b)
        lam = rng.random(4)
        np.testing.assert_allclose(q.exact_hypergrad(lam), 2.0 / 4 * A.T @ (A @ lam - b), rtol=1e-10)
        np.testing.assert_allclose(exact_hypergrad(q, lam, lam), 2.0 / 4 * A.T @ (A @ lam - b), rtol=1e-9)

    def test_k0_and_k1(self, small_quad, rng):
        lam = rng.random(3)
        W = rng.random((2, 4))
        p = rng.standard_normal(4)
        s0 = HyperGradSequenceSpec(Mode.BACKWARD, W[:1], np.zeros(0), p)
        np.testing.assert_allclose(general_hypergrad_naive(small_quad, lam, s0),
                                   small_quad.grad_outer_lambda(lam, W[0]))
        s1 = HyperGradSequenceSpec(Mode.BACKWARD, W, [0.3], p)
        np.testing.assert_allclose(
            general_hypergrad_naive(small_quad, lam, s1),
            small_quad.grad_outer_lambda(lam, W[1]) - 0.3 * small_quad.cross_jvp_inner(lam, W[0], p),
        )

    def test_zero_betas(self, clean, rng):
        spec = HyperGradSequenceSpec(Mode.FORWARD, rng.random((4, clean.inner_dim)), np.zeros(3),
                                     rng.random((3, clean.inner_dim)))
        lam = rng.random(clean.outer_dim)
        np.testing.assert_allclose(general_hypergrad_recursive(clean, lam, spec),
                                   clean.grad_outer_lambda(lam, spec.omegas[-1]))

    def test_bp_k0(self, small_quad):
        g, traj = bp_hypergrad(small_quad, np.zeros(3), np.ones(4), 0, 0.1)
        np.testing.assert_array_equal(g, small_quad.grad_outer_lambda(np.zeros(3), np.ones(4)))
        assert traj.shape == (1, 4)

    def test_bp_more_steps_better(self):
        from bilevelkit.problems import sum_lr_to_mean

        for seed in range(5):
            q = gen_quadratic(seed)
            lam = np.random.default_rng(seed).random(5)
            truth = quadratic_exact_hypergrad(q, lam)
            lr = sum_lr_to_mean(2e-5, q.N)
            e10 = np.linalg.norm(bp_hypergrad(q, lam, np.zeros(5), 10, lr)[0] - truth)
            e50 = np.linalg.norm(bp_hypergrad(q, lam, np.zeros(5), 50, lr)[0] - truth)
            assert e50 < e10

    def test_ns_k0(self, small_quad, rng):
        lam, w = rng.random(3), rng.random(4)
        expect = small_quad.grad_outer_lambda(lam, w) - 0.2 * small_quad.cross_jvp_inner(
            lam, w, small_quad.grad_outer_omega(lam, w))
        np.testing.assert_allclose(ns_hypergrad(small_quad, lam, w, 0, 0.2), expect)

    def test_ns_summed_step(self, quad):
        from bilevelkit.problems import sum_lr_to_mean

        lam = np.linspace(0, 1, 5)
        truth = quadratic_exact_hypergrad(quad, lam)
        g = ns_hypergrad(quad, lam, quadratic_inner_solve(quad, lam), 2000, sum_lr_to_mean(2e-5, quad.N))
        assert np.linalg.norm(g - truth) <= 1e-4 * np.linalg.norm(truth)

    def test_identity_hessian_exact_immediately(self):
        o = ShiftOracle(np.array([1.0, 2.0, -1.0]))
        lam = np.array([0.5, 0.0, 2.0])
        np.testing.assert_allclose(ns_hypergrad(o, lam, lam, 1, 1.0), o.hypergrad(lam))
        np.testing.assert_allclose(cg_hypergrad(o, lam, lam, 1), o.hypergrad(lam))

    def test_cg_error_nonincreasing(self):
        for seed in range(5):
            q = gen_quadratic(seed)
            lam = np.random.default_rng(seed).random(5)
            w = quadratic_inner_solve(q, lam)
            truth = quadratic_exact_hypergrad(q, lam)
            e = [np.linalg.norm(cg_hypergrad(q, lam, w, K) - truth) for K in range(1, 6)]
            assert all(b <= a * (1 + 1e-9) + 1e-13 for a, b in zip(e, e[1:]))

    def test_v_update_beta_zero(self, small_quad, rng):
        v = rng.standard_normal(4)
        np.testing.assert_array_equal(v_update(small_quad, rng.random(3), rng.random(4), v, 0.0), v)

    def test_v_iterates_to_dense_solve(self, quad):
        lam, w = np.full(5, 0.3), np.full(5, 0.6)
        H, _ = dense_matrices(quad, lam, w)
        target = np.linalg.solve(H, quad.grad_outer_omega(lam, w))
        v = np.zeros(5)
        for _ in range(500):
            v = v_update(quad, lam, w, v, 1.0 / quad.smoothness_L())
        np.testing.assert_allclose(v, target, atol=1e-6)

    def test_hypergrad_from_v_cases(self, quad, rng):
        lam, w, v = rng.random(5), rng.random(5), rng.standard_normal(5)
        np.testing.assert_array_equal(hypergrad_from_v(quad, lam, w, np.zeros(5)),
                                      quad.grad_outer_lambda(lam, w))
        _, C = dense_matrices(quad, lam, w)
        np.testing.assert_allclose(hypergrad_from_v(quad, lam, w, v),
                                   quad.grad_outer_lambda(lam, w) - C @ v, rtol=1e-12)

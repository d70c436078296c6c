import math

import numpy as np
import pytest

from aistosqp import (
    NoiseModel,
    ProblemSpec,
    builtin_problem,
    check_derivatives,
    eval_kkt_residual,
    list_problems,
    sample_gradient,
    sample_lagrangian_hessian,
)
from aistosqp.errors import ConfigurationError, UnknownProblemError
from aistosqp.problems import lagrangian_hessian


def simple_quadratic():
    """f = 0.5 ||x||^2 subject to x1 + x2 = 2; solution x = (1, 1), lam = -1."""
    return ProblemSpec(
        name="simple",
        dim_primal=2,
        dim_dual=1,
        f=lambda x: 0.5 * np.sum(x * x, axis=-1),
        grad=lambda x: np.array(x, dtype=float),
        hess=lambda x: np.broadcast_to(np.eye(2), np.shape(x)[:-1] + (2, 2)).copy(),
        cons=lambda x: np.sum(x, axis=-1, keepdims=True) - 2.0,
        jac=lambda x: np.broadcast_to(np.ones((1, 2)), np.shape(x)[:-1] + (1, 2)).copy(),
        cons_hess=lambda x: np.zeros(np.shape(x)[:-1] + (1, 2, 2)),
        x0=np.zeros(2),
        lam0=np.zeros(1),
        known_solution=(np.ones(2), -np.ones(1)),
        affine_constraints=True,
    )


class TestKktResidual:
    def test_zero_at_solution(self):
        p = simple_quadratic()
        assert eval_kkt_residual(p, [1.0, 1.0], [-1.0]) == 0.0

    def test_origin(self):
        # grad f = 0, G^T lam = 0, c = -2
        p = simple_quadratic()
        assert eval_kkt_residual(p, [0.0, 0.0], [0.0]) == pytest.approx(2.0, abs=1e-15)

    def test_hs7_solution(self):
        p = builtin_problem("hs7")
        assert eval_kkt_residual(p, *p.known_solution) <= 1e-8

    def test_dimension_mismatch(self):
        p = simple_quadratic()
        with pytest.raises(ConfigurationError):
            eval_kkt_residual(p, [0.0, 0.0, 0.0], [0.0])
        with pytest.raises(ConfigurationError):
            eval_kkt_residual(p, [0.0, 0.0], [0.0, 1.0])


class TestCatalog:
    def test_names(self):
        assert set(list_problems()) == {"eq_quadratic", "eq_logistic", "hs7", "hs48", "byrdsphr"}

    def test_alias(self):
        assert builtin_problem("byrdsphr-like").name == "byrdsphr"

    def test_unknown_lists_alternatives(self):
        with pytest.raises(UnknownProblemError) as info:
            builtin_problem("hs999")
        assert "hs48" in str(info.value) and "eq_quadratic" in str(info.value)

    @pytest.mark.parametrize("name", ["eq_quadratic", "eq_logistic", "hs7", "hs48", "byrdsphr"])
    def test_known_solution_is_stationary(self, name):
        p = builtin_problem(name)
        x, lam = p.known_solution
        r = eval_kkt_residual(p, x, lam)
        assert r <= 1e-8
        assert np.linalg.norm(p.cons(x)) <= 1e-8

    def test_eq_quadratic_solves_kkt_system(self):
        # independent reconstruction of the linear KKT system
        A = np.array([[2.0, 0.5], [0.5, 1.0]])
        b = np.array([1.0, -1.0])
        K = np.array([[2.0, 0.5, 1.0], [0.5, 1.0, 1.0], [1.0, 1.0, 0.0]])
        sol = np.linalg.solve(K, np.array([1.0, -1.0, 1.0]))
        p = builtin_problem("eq_quadratic")
        np.testing.assert_allclose(p.known_solution[0], sol[:2], atol=1e-14)
        np.testing.assert_allclose(p.known_solution[1], sol[2:], atol=1e-14)
        # hand values: x* = (1.25, -0.25), lam* = -1.375
        np.testing.assert_allclose(sol, [1.25, -0.25, -1.375], atol=1e-14)
        assert p.f(sol[:2]) == pytest.approx(0.5 * sol[:2] @ A @ sol[:2] - b @ sol[:2])

    def test_hs7_solution_and_value(self):
        p = builtin_problem("hs7")
        x, _ = p.known_solution
        np.testing.assert_allclose(x, [0.0, math.sqrt(3.0)], atol=1e-8)
        assert p.f(x) == pytest.approx(-math.sqrt(3.0), abs=1e-8)

    def test_hs48_solution(self):
        p = builtin_problem("hs48")
        x, lam = p.known_solution
        np.testing.assert_allclose(x, np.ones(5), atol=1e-12)
        np.testing.assert_allclose(lam, np.zeros(2), atol=1e-12)

    def test_standard_starts(self):
        np.testing.assert_array_equal(builtin_problem("hs7").x0, [2.0, 2.0])
        np.testing.assert_array_equal(builtin_problem("hs48").x0, [3.0, 5.0, -3.0, 2.0, -2.0])

    def test_spec_is_immutable(self):
        p = builtin_problem("hs48")
        with pytest.raises(ValueError):
            p.x0[0] = 1.0

    @pytest.mark.parametrize("name", ["eq_quadratic", "eq_logistic", "hs7", "hs48", "byrdsphr"])
    def test_finite_differences(self, name):
        worst = check_derivatives(builtin_problem(name), points=20, rng=np.random.default_rng(7))
        assert max(worst.values()) <= 1e-4, worst

    @pytest.mark.parametrize("name", ["eq_logistic", "hs7", "byrdsphr"])
    def test_broadcasting_matches_pointwise(self, name):
        p = builtin_problem(name)
        X = p.x0 + np.random.default_rng(1).uniform(-0.5, 0.5, size=(4, p.dim_primal))
        for ev in (p.f, p.grad, p.hess, p.cons, p.jac, p.cons_hess):
            stacked = ev(X)
            for k in range(4):
                np.testing.assert_allclose(stacked[k], ev(X[k]), rtol=1e-14, atol=1e-14)


class TestNoise:
    def test_zero_noise_is_exact(self):
        p = builtin_problem("hs7")
        x = np.array([0.3, 1.1])
        g = sample_gradient(p, x, NoiseModel(0.0), np.random.default_rng(0))
        np.testing.assert_array_equal(g, p.grad(x))
        H = sample_lagrangian_hessian(p, x, np.array([0.4]), NoiseModel(0.0), np.random.default_rng(0))
        np.testing.assert_array_equal(H, lagrangian_hessian(p, x, np.array([0.4])))

    def test_gradient_covariance(self):
        p = builtin_problem("eq_quadratic")
        x = np.array([0.2, -0.1])
        rng = np.random.default_rng(11)
        n = 200_000
        noise = NoiseModel(1.0)
        draws = np.array([sample_gradient(p, x, noise, rng) for _ in range(n)])
        cov = np.cov(draws.T)
        target = np.array([[2.0, 1.0], [1.0, 2.0]])
        assert np.all(np.abs(cov - target) <= 0.05 * np.abs(target))
        se = np.sqrt(np.diag(target) / n)
        assert np.all(np.abs(draws.mean(axis=0) - p.grad(x)) <= 4 * se)

    def test_gradient_reproducible(self):
        p = builtin_problem("hs48")
        x = p.x0
        a = sample_gradient(p, x, NoiseModel(0.1), np.random.default_rng(5))
        b = sample_gradient(p, x, NoiseModel(0.1), np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_hessian_symmetric_and_centered(self):
        p = builtin_problem("hs48")
        rng = np.random.default_rng(3)
        noise = NoiseModel(0.5)
        x, lam = p.x0, p.lam0
        acc = np.zeros((5, 5))
        n = 20_000
        for _ in range(n):
            H = sample_lagrangian_hessian(p, x, lam, noise, rng)
            assert np.array_equal(H, H.T)
            acc += H
        # entry variance 0.5 -> standard error sqrt(0.5 / n)
        assert np.abs(acc / n - p.hess(x)).max() <= 4.5 * math.sqrt(0.5 / n)

    def test_affine_constraints_contribute_no_curvature(self):
        p = builtin_problem("eq_quadratic")
        H = sample_lagrangian_hessian(p, p.x0, np.array([7.0]), NoiseModel(0.0), np.random.default_rng(0))
        np.testing.assert_array_equal(H, p.hess(p.x0))

    def test_hs7_constraint_curvature_matches_jacobian_differences(self):
        p = builtin_problem("hs7")
        x = np.array([0.0, math.sqrt(3.0)])
        h = 1e-6
        fd = np.stack([(p.jac(x + h * e) - p.jac(x - h * e)) / (2 * h) for e in np.eye(2)], axis=-1)
        CH = p.cons_hess(x)
        assert np.abs(CH).max() > 0
        np.testing.assert_allclose(CH, fd, atol=1e-6)

    def test_negative_variance_rejected(self):
        with pytest.raises(ConfigurationError):
            NoiseModel(-1.0)

    @pytest.mark.parametrize("sigma2", [1e-8, 1e-4, 1e-2, 1e-1, 1.0])
    def test_experiment_grid_accepted(self, sigma2):
        p = builtin_problem("eq_quadratic")
        g = sample_gradient(p, p.x0, NoiseModel(sigma2), np.random.default_rng(0))
        assert np.all(np.isfinite(g))

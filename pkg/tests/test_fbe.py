import math

import numpy as np
import pytest

from gssn.core import CompositeProblem, LeastSquares, LinearOperator, QuadraticForm, SmoothFunction
from gssn.fbe import descent_ok, forward_backward, psi_fb, residual, subgradients
from gssn.prox import L0Norm, L1Norm, LqNorm, TrescaFriction, ZeroFunction

from samplers import catalog


def _random_ls(rng, m, n):
    A = rng.standard_normal((m, n))
    return LeastSquares(LinearOperator.from_matrix(A), rng.standard_normal(m))


def test_fixed_point_of_shifted_norm():
    c = np.array([1.0, -2.0, 0.5])
    prob = CompositeProblem(QuadraticForm.shifted_norm(c), ZeroFunction(3))
    x = np.array([0.0, 1.0, 1.0])
    step = forward_backward(prob, x, 0.3)
    np.testing.assert_allclose(step.z, x - 0.3 * (x - c))
    at_c = forward_backward(prob, c, 0.7)
    np.testing.assert_array_equal(at_c.z, c)
    assert at_c.eta == 0.0


def test_identity_lasso_soft_threshold():
    b = np.array([2.0, 0.5])
    prob = CompositeProblem(LeastSquares(LinearOperator.identity(2), b), L1Norm(1.0, 2))
    step = forward_backward(prob, np.zeros(2), 1.0)
    np.testing.assert_allclose(step.z, [1.0, 0.0])
    zg, zs = subgradients(step)
    np.testing.assert_allclose(zg, [1.0, 0.5])
    np.testing.assert_allclose(zs, [0.0, 0.0])


def test_step_quantities_and_subgradient_recovery():
    rng = np.random.default_rng(2)
    for fn in catalog(rng):
        n = fn.dim
        prob = CompositeProblem(_random_ls(rng, n + 3, n), fn)
        for _ in range(10):
            x = 2 * rng.standard_normal(n)
            lam = 0.5 / prob.smooth.lipschitz * rng.uniform(0.2, 1.0)
            st = forward_backward(prob, x, lam)
            assert st.eta >= 0.0
            assert st.eta == pytest.approx(np.sum((st.z - x) ** 2) / (2 * lam))
            np.testing.assert_allclose(st.zstar_g, -prob.smooth.gradient(x) - (st.z - x) / lam)
            np.testing.assert_allclose(st.zstar, prob.smooth.gradient(st.z) + st.zstar_g)
            assert fn.graph_residual(st.z, st.zstar_g) <= 1e-10 * max(1.0, np.max(np.abs(st.zstar_g)))
            # envelope below the objective
            assert st.phi_fb <= prob.objective(x) + 1e-12 * (1 + abs(prob.objective(x)))
            assert st.phi_fb == pytest.approx(psi_fb(prob, x, st.z, lam), rel=1e-12, abs=1e-12)


def test_forward_backward_errors():
    prob = CompositeProblem(QuadraticForm.shifted_norm(np.zeros(2)), ZeroFunction(2))
    with pytest.raises(ValueError):
        forward_backward(prob, np.zeros(2), 0.0)
    bad = SmoothFunction(2, value=lambda x: 0.0, gradient=lambda x: np.full(2, np.nan))
    with pytest.raises(FloatingPointError):
        forward_backward(CompositeProblem(bad, ZeroFunction(2)), np.zeros(2), 1.0)


def test_psi_at_z_equal_x_is_objective():
    rng = np.random.default_rng(4)
    prob = CompositeProblem(_random_ls(rng, 6, 4), LqNorm(0.7, 4, 0.5))
    x = rng.standard_normal(4)
    assert psi_fb(prob, x, x, 0.3) == pytest.approx(prob.objective(x), rel=1e-14)


def test_psi_outside_domain_is_infinite():
    tres = TrescaFriction([1.0], [0.1])
    prob = CompositeProblem(QuadraticForm.shifted_norm(np.zeros(3)), tres)
    assert psi_fb(prob, np.zeros(3), np.array([0.0, 0.0, -1.0]), 1.0) == math.inf


def test_envelope_equals_objective_only_at_fixed_points():
    b = np.array([2.0, 0.5])
    prob = CompositeProblem(LeastSquares(LinearOperator.identity(2), b), L1Norm(1.0, 2))
    sol = np.array([1.0, 0.0])
    st = forward_backward(prob, sol, 0.5)
    np.testing.assert_allclose(st.z, sol)
    assert st.phi_fb == pytest.approx(prob.objective(sol))
    st2 = forward_backward(prob, np.array([3.0, 3.0]), 0.5)
    assert st2.phi_fb < prob.objective(np.array([3.0, 3.0]))


def test_lambda_monotonicity_of_envelope():
    rng = np.random.default_rng(8)
    members = [L1Norm(0.6, 5), LqNorm(0.6, 5, 0.5), L0Norm(0.6, 5), ZeroFunction(5),
               TrescaFriction([0.8], [0.05], n_free=2)]
    probes = 0
    for fn in members:
        for _ in range(20):
            prob = CompositeProblem(_random_ls(rng, 7, 5), fn)
            x = 2 * rng.standard_normal(5)
            if isinstance(fn, TrescaFriction):
                x[2] = abs(x[2])
            lam1, lam2 = np.sort(rng.uniform(0.01, 2.0, 2) / prob.smooth.lipschitz)
            v1 = forward_backward(prob, x, lam1).phi_fb
            v2 = forward_backward(prob, x, lam2).phi_fb
            assert v2 <= v1 + 1e-12 * (1 + abs(v1))
            probes += 1
    assert probes == 100


def test_descent_test_cases():
    L = 10.0
    f = QuadraticForm(LinearOperator.diagonal([L]), np.zeros(1))
    prob = CompositeProblem(f, ZeroFunction(1))
    assert not descent_ok(prob, forward_backward(prob, np.ones(1), 1.0), 0.8)
    assert descent_ok(prob, forward_backward(prob, np.ones(1), 0.8 / L), 0.8)
    at_zero = forward_backward(prob, np.zeros(1), 1.0)
    assert descent_ok(prob, at_zero, 0.8)


def test_descent_holds_below_alpha_over_l():
    rng = np.random.default_rng(9)
    for _ in range(20):
        f = _random_ls(rng, 8, 5)
        prob = CompositeProblem(f, L1Norm(0.3, 5))
        lam = 0.8 / np.linalg.norm(f.A.toarray(), 2) ** 2
        assert descent_ok(prob, forward_backward(prob, rng.standard_normal(5), lam), 0.8)


def test_residual_examples():
    prob = CompositeProblem(QuadraticForm.shifted_norm(np.zeros(1)), ZeroFunction(1))
    st = forward_backward(prob, np.array([0.2]), 0.5)  # z = 0.1
    assert residual(st) == pytest.approx(3.0 * 0.1)
    assert st.residual == residual(st)
    assert residual(forward_backward(prob, np.zeros(1), 0.5)) == 0.0

import math
from dataclasses import replace

import numpy as np
import pytest

from gssn.core import CompositeProblem, LeastSquares, LinearOperator, QuadraticForm
from gssn.driver import (
    InvariantError,
    NewtonDirection,
    SolverConfig,
    SolverState,
    bas_gssn,
    damping_diagonal,
    direction_provider_newton,
    fista_baseline,
    heuristic_multistart,
    pgm_baseline,
    restricted_least_squares,
    zeta_damping,
)
from gssn.fbe import forward_backward
from gssn.newton import chi_tolerance
from gssn.prox import L1Norm, LqNorm, ZeroFunction

from oracles import lasso_kkt


def _lasso(seed=0, m=40, n=60, k=4, mu_frac=0.05):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n))
    x = np.zeros(n)
    x[rng.choice(n, k, replace=False)] = rng.standard_normal(k) * 3
    b = A @ x + 0.01 * rng.standard_normal(m)
    mu = mu_frac * np.max(np.abs(A.T @ b))
    return CompositeProblem(LeastSquares(LinearOperator.from_matrix(A), b), L1Norm(mu, n)), A, b, mu


def _state(prob, x, lam, rho=1e5, zeta=1e-2):
    return SolverState(0, x, forward_backward(prob, x, lam), rho=rho, zeta=zeta)


def test_quadratic_converges_in_few_steps():
    c = np.array([1.0, -2.0, 3.0, 0.5])
    prob = CompositeProblem(QuadraticForm.shifted_norm(c), ZeroFunction(4))
    for mode in ("exact", "cg"):
        res = bas_gssn(prob, np.zeros(4), SolverConfig(direction_mode=mode))
        assert res.converged
        assert res.iterations <= 3
        np.testing.assert_allclose(res.solution, c, atol=1e-12)


def test_quadratic_with_coupling():
    rng = np.random.default_rng(1)
    B = rng.standard_normal((6, 6))
    Q = B @ B.T + np.eye(6)
    c = rng.standard_normal(6)
    prob = CompositeProblem(QuadraticForm(LinearOperator.from_matrix(Q), c), ZeroFunction(6))
    st = _state(prob, np.zeros(6), 1.0 / np.linalg.eigvalsh(Q)[-1])
    s, xi = direction_provider_newton(st, SolverConfig(direction_mode="exact"))
    np.testing.assert_allclose(st.step.z + s, np.linalg.solve(Q, c), rtol=1e-10)
    res = bas_gssn(prob, np.zeros(6))
    np.testing.assert_allclose(res.solution, np.linalg.solve(Q, c), rtol=1e-10)


def test_identity_lasso():
    b = np.array([2.0, 0.5])
    prob = CompositeProblem(LeastSquares(LinearOperator.identity(2), b), L1Norm(1.0, 2))
    res = bas_gssn(prob, np.zeros(2))
    assert res.converged
    np.testing.assert_allclose(res.solution, [1.0, 0.0], atol=1e-14)


def test_l1_direction_matches_dense_solve():
    prob, A, b, mu = _lasso()
    cfg = SolverConfig(direction_mode="exact", damping_enabled=False).resolve(prob)
    res = bas_gssn(prob, np.zeros(A.shape[1]), cfg, callback=None)
    x = res.x_final + 0.01 * np.random.default_rng(5).standard_normal(A.shape[1])
    st = _state(prob, x, cfg.lam0)
    z = st.step.z
    I = np.flatnonzero(z)
    assert I.size > 0
    s, _ = direction_provider_newton(st, cfg)
    G = A[:, I].T @ A[:, I]
    ref = np.linalg.solve(G, -st.step.zstar[I])
    np.testing.assert_allclose(s[I], ref, rtol=1e-8, atol=1e-12)
    assert np.all(s[np.setdiff1d(np.arange(A.shape[1]), I)] == 0)
    # CG stops once the reduced residual is below chi(||z*||) ||z*||
    cg = NewtonDirection(mode="cg")(replace_state(st), replace(cfg, direction_mode="cg"))
    res_cg = G @ cg.s[I] + st.step.zstar[I]
    zn = np.linalg.norm(st.step.zstar)
    assert np.linalg.norm(res_cg) <= chi_tolerance(zn) * zn * (1 + 1e-10)


def replace_state(st):
    return SolverState(st.k, st.x, st.step, rho=st.rho, zeta=st.zeta)


def test_all_inactive_gives_zero_step():
    prob, A, b, mu = _lasso()
    n = A.shape[1]
    prob_big = CompositeProblem(prob.smooth, L1Norm(1e6, n))
    st = _state(prob_big, np.zeros(n), 1e-3)
    assert np.all(st.step.z == 0)
    for mode in ("exact", "cg"):
        out = NewtonDirection(mode=mode)(replace_state(st), SolverConfig())
        assert np.all(out.s == 0)
    res = bas_gssn(prob_big, np.zeros(n))
    assert res.converged and np.all(res.solution == 0)


def test_zeta_damping_branches():
    z = np.array([1.0, -2.0, 0.0, 0.5])
    eps = 1e-12
    zn, D = zeta_damping(0.3, -z, z, curvature=1.0, eps=eps, q=1.0)
    assert zn == 0.3
    np.testing.assert_allclose(D, [0.3, 0.3 / 4, 0.0, 0.3 / 0.25])
    zn, _ = zeta_damping(0.3, -z, z, curvature=0.0, eps=eps, q=1.0)
    assert zn == 0.6
    zn, _ = zeta_damping(0.3, -z, z, curvature=-1.0, eps=eps, q=0.5)
    assert zn == 0.6
    # ratio -4 everywhere: nu = 4 and zeta -> sqrt(4) zeta
    e = 1e-4
    s4 = -4.0 * (z + e * np.sign(z))
    zn, _ = zeta_damping(0.3, s4, z, curvature=2.0, eps=e, q=1.0)
    assert zn == pytest.approx(0.6, rel=1e-15)
    # q = 1/2 takes the larger of -nu_minus and nu_plus
    s_mixed = np.array([-0.5, 2.0 * 2.0, 0.0, 0.0])  # ratios -0.5, -2, 0
    zn, _ = zeta_damping(1.0, s_mixed, z, curvature=1.0, eps=0.0, q=0.5)
    assert zn == pytest.approx(math.sqrt(2.0))
    s_pos = np.array([3.0, 0.0, 0.0, 0.0])  # ratios 3, 0, 0
    zn, _ = zeta_damping(1.0, s_pos, z, curvature=1.0, eps=0.0, q=0.5)
    assert zn == pytest.approx(math.sqrt(3.0))
    zn, _ = zeta_damping(1.0, s_pos, z, curvature=1.0, eps=0.0, q=1.0)
    assert zn == pytest.approx(1e-4)  # nu = -3 floored at 1e-8


def test_zeta_damping_degenerate_and_errors():
    zn, D = zeta_damping(0.5, np.ones(3), np.zeros(3), curvature=1.0)
    assert zn == 0.5 and np.all(D == 0)
    with pytest.raises(ValueError):
        zeta_damping(0.0, np.ones(2), np.ones(2), 1.0)
    with pytest.raises(ValueError):
        zeta_damping(1.0, np.ones(2), np.ones(2), 1.0, q=0.0)
    np.testing.assert_allclose(damping_diagonal(2.0, [0.0, 2.0]), [0.0, 0.5])


def test_lasso_run_invariants_and_kkt():
    prob, A, b, mu = _lasso(3)
    for mode in ("exact", "cg"):
        res = bas_gssn(prob, np.zeros(A.shape[1]), SolverConfig(direction_mode=mode))
        assert res.converged
        assert res.residual_final <= res.tolerance
        assert lasso_kkt(A, b, mu, res.solution) <= 1e-8
        assert res.info["sum_eta"] <= res.info["eta_bound"]
        assert res.info["min_margin_decrease"] >= -1e-9
        assert res.info["min_margin_sandwich"] >= -1e-9
        assert res.info["stationarity_ok"]
        k = res.log.column("k")
        assert np.all(np.diff(k) == 1)
        lam = res.log.column("lambda")
        assert np.all(lam <= prob.smooth.lipschitz ** -1 * 1e6 * (1 + 1e-12))


def test_nonconvex_run():
    prob, A, b, mu = _lasso(4)
    pq = CompositeProblem(prob.smooth, LqNorm(mu, A.shape[1], 0.5))
    res = bas_gssn(pq, np.zeros(A.shape[1]))
    assert res.converged
    assert res.residual_final <= res.tolerance


def test_statuses():
    prob, A, b, mu = _lasso(5)
    n = A.shape[1]
    res = bas_gssn(prob, np.zeros(n), SolverConfig(max_iter=1))
    assert res.status == "max_iter" and res.iterations == 1
    res = bas_gssn(prob, np.zeros(n), SolverConfig(phi_min=1e300))
    assert res.status == "phi_below_min"

    def useless(state, config):
        return np.zeros(n), math.nan

    res = bas_gssn(prob, np.zeros(n), SolverConfig(decrease_eps=1e3, max_iter=50), useless)
    assert res.status == "stagnation"


def test_invariant_violation_is_detected():
    # an absurd acceptance slack lets envelope increases through; the runtime
    # check (tolerance 1e-9 relative) must catch them
    prob, A, b, mu = _lasso(6)
    n = A.shape[1]
    with pytest.raises(InvariantError):
        bas_gssn(prob, np.zeros(n), SolverConfig(rel_slack=1e3, invariant_rtol=1e-9))


def test_config_validation():
    prob, *_ = _lasso()
    with pytest.raises(ValueError):
        SolverConfig(alpha=1.0).validate()
    with pytest.raises(ValueError):
        SolverConfig(sigma=0.7).validate()
    with pytest.raises(ValueError):
        SolverConfig(rho_min=2.0, rho_max=1.0).validate()
    with pytest.raises(ValueError):
        SolverConfig(direction_mode="newton").validate()
    with pytest.raises(ValueError):
        SolverConfig(lam0=2.0, lam_max=1.0).validate()
    cfg = SolverConfig().resolve(prob)
    assert cfg.lam0 == pytest.approx(1.0 / prob.smooth.lipschitz)
    assert cfg.lam_max == pytest.approx(1e6 * cfg.lam0)
    assert cfg.rho0 == 1e5
    with pytest.raises(ValueError):
        bas_gssn(prob, np.zeros(3))


def test_restricted_least_squares_identity():
    A = LinearOperator.identity(4)
    b = np.array([1.0, 2.0, -1.0, 0.5])
    xbar = np.array([0.5, 0.0, 0.0, 0.0])
    dx = restricted_least_squares(A, b, xbar, np.ones(4, dtype=bool))
    np.testing.assert_allclose(dx, b - xbar, rtol=1e-12)
    dx = restricted_least_squares(A, b, xbar, np.array([True, False, True, False]))
    np.testing.assert_allclose(dx, [0.5, 0.0, -1.0, 0.0], rtol=1e-12)
    assert np.all(restricted_least_squares(A, b, xbar, np.zeros(4, dtype=bool)) == 0)


def test_restricted_least_squares_stops_at_tenth_residual():
    rng = np.random.default_rng(0)
    M = rng.standard_normal((80, 30))
    A = LinearOperator.from_matrix(M)
    b = rng.standard_normal(80)
    x = np.zeros(30)
    dx = restricted_least_squares(A, b, x, np.ones(30, dtype=bool))
    r0 = np.linalg.norm(M.T @ b)
    assert np.linalg.norm(M.T @ (b - M @ dx)) <= 0.1 * r0 * (1 + 1e-12)


def test_heuristic_on_convex_problem_stops_by_equality():
    prob, A, b, mu = _lasso(7)
    res = heuristic_multistart(prob, np.zeros(A.shape[1]))
    phis = res.info["phi_history"]
    assert res.info["passes"] == 3
    assert phis[2] == pytest.approx(phis[1], rel=1e-12)
    assert res.phi_final == min(phis)
    assert res.converged


def test_heuristic_needs_least_squares():
    prob = CompositeProblem(QuadraticForm.shifted_norm(np.zeros(2)), ZeroFunction(2))
    with pytest.raises(TypeError):
        heuristic_multistart(prob, np.zeros(2))


def test_pgm_quadratic_and_identity_lasso():
    c = np.array([1.0, 2.0])
    Q = np.diag([1.0, 4.0])
    prob = CompositeProblem(QuadraticForm(LinearOperator.from_matrix(Q), Q @ c), ZeroFunction(2))
    res = pgm_baseline(prob, np.zeros(2))
    assert res.converged
    np.testing.assert_allclose(res.solution, c, atol=1e-10)
    errs = [np.linalg.norm(forward_backward(prob, np.zeros(2), 0.25).z - c)]
    assert errs[0] < np.linalg.norm(c)
    b = np.array([2.0, 0.5, -3.0])
    lasso = CompositeProblem(LeastSquares(LinearOperator.identity(3), b), L1Norm(1.0, 3))
    res = pgm_baseline(lasso, np.zeros(3))
    # alpha = 0.8 rules out lam = 1, so the iteration contracts linearly
    np.testing.assert_allclose(res.solution, [1.0, 0.0, -2.0], atol=1e-10)
    assert res.converged


def test_pgm_lam_max_and_statuses():
    prob, A, b, mu = _lasso(8)
    n = A.shape[1]
    res = pgm_baseline(prob, np.zeros(n), max_iter=5)
    assert res.status == "max_iter"
    res = pgm_baseline(prob, np.zeros(n), tol=1e-3)
    assert res.converged and res.residual_final <= 1e-3
    capped = pgm_baseline(prob, np.zeros(n), lam_max=0.5 / prob.smooth.lipschitz, tol=1e-3)
    assert np.all(capped.log.column("lambda") <= 0.5 / prob.smooth.lipschitz)


def test_pgm_takes_more_iterations_than_gssn():
    prob, A, b, mu = _lasso(9)
    n = A.shape[1]
    g = bas_gssn(prob, np.zeros(n))
    p = pgm_baseline(prob, np.zeros(n))
    assert g.converged and p.converged
    assert p.iterations > g.iterations


def test_fista_basic_cases():
    c = np.array([1.0, -1.0])
    prob = CompositeProblem(QuadraticForm.shifted_norm(c), ZeroFunction(2))
    tr = fista_baseline(prob, np.zeros(2), max_iter=5, reference=c)
    np.testing.assert_allclose(tr.x_final, c)
    assert tr.rel_error[0] == 0.0
    b = np.array([2.0, 0.5])
    lasso = CompositeProblem(LeastSquares(LinearOperator.identity(2), b), L1Norm(1.0, 2))
    tr = fista_baseline(lasso, np.zeros(2), max_iter=3, reference=np.array([1.0, 0.0]))
    assert tr.rel_error[0] <= 1e-15 and tr.residual[0] <= 1e-15
    assert tr.error_at_time(-1.0) == tr.rel_error[0]
    assert len(tr.time_s) == 3 and np.all(np.diff(tr.time_s) >= 0)


def test_fista_error_decays_on_lasso():
    prob, A, b, mu = _lasso(10)
    n = A.shape[1]
    ref = bas_gssn(prob, np.zeros(n)).solution
    tr = fista_baseline(prob, np.zeros(n), max_iter=3000, reference=ref)
    assert tr.rel_error[-1] < 1e-6
    assert tr.rel_error[-1] < tr.rel_error[0]
    short = fista_baseline(prob, np.zeros(n), max_iter=10**6, time_limit=0.01, record=False)
    assert short.iterations < 10**6 and short.rel_error == []

"""Globalized SCD semismooth* Newton solver and first-order baselines."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse.linalg as spla

from .convergence import ConvergenceLog
from .core import CompositeProblem, LeastSquares
from .fbe import FbStep, descent_ok, forward_backward
from .newton import (
    DENSE_CUTOFF,
    NewtonOutcome,
    build_reduced,
    cg_trust_region,
    chi_tolerance,
    exact_direction,
    make_preconditioner,
    sigma_probe,
    update_radius,
)
from .prox import GraphError

__all__ = [
    "SolverConfig",
    "SolverState",
    "RunResult",
    "InvariantError",
    "NewtonDirection",
    "bas_gssn",
    "direction_provider_newton",
    "zeta_damping",
    "damping_diagonal",
    "heuristic_multistart",
    "restricted_least_squares",
    "pgm_baseline",
    "fista_baseline",
    "FistaTrajectory",
]

STATUSES = ("converged", "max_iter", "phi_below_min", "stagnation")


class InvariantError(AssertionError):
    """A decrease inequality of the method failed beyond rounding tolerance."""


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of :func:`bas_gssn`.

    ``lam0`` and ``lam_max`` left as ``None`` are resolved per problem: ``lam0``
    is ``1/L`` for the Lipschitz estimate ``L`` of the gradient, ``lam_max``
    is ``1e6 * lam0`` (capped below the prox-boundedness threshold).
    ``damping_enabled`` adds the zeta damping to the Newton system when the
    nonsmooth part is an l1 or l_{1/2} term (ignored otherwise).
    ``decrease_eps > 0`` enables the small-decrease stop
    ``eta <= eps (phi_fb^0 - phi_fb^k)``. ``rel_slack`` is the relative
    rounding allowance in the sufficient-decrease test.
    """

    alpha: float = 0.8
    beta: float = 0.2
    sigma: float = 0.1
    lam0: Optional[float] = None
    lam_max: Optional[float] = None
    rho_min: float = 1e-3
    rho_max: float = 1e5
    rho0: Optional[float] = None
    max_iter: int = 1000
    max_inner: int = 100
    tol_factor: float = 1e-13
    typ_val: float = 1e3
    phi_min: float = -math.inf
    decrease_eps: float = 0.0
    damping_enabled: bool = True
    damping_eps: float = 1e-4
    zeta0: float = 1e-2
    direction_mode: str = "cg"
    precond: str = "auto"
    dense_cutoff: int = DENSE_CUTOFF
    rel_slack: float = 1e-13
    check_invariants: bool = True
    invariant_rtol: float = 1e-9

    def validate(self, problem: Optional[CompositeProblem] = None) -> None:
        if not (0 < self.alpha < 1 and 0 < self.beta < 1):
            raise ValueError("alpha and beta must lie in (0, 1)")
        if not 0 < self.sigma <= 0.5:
            raise ValueError("sigma must lie in (0, 1/2]")
        if not 0 < self.rho_min <= self.rho_max:
            raise ValueError("need 0 < rho_min <= rho_max")
        if self.max_iter < 0 or self.max_inner < 1:
            raise ValueError("iteration caps must be nonnegative / positive")
        if self.direction_mode not in ("exact", "cg"):
            raise ValueError(f"unknown direction mode {self.direction_mode!r}")
        if self.lam0 is not None and self.lam_max is not None:
            if not 0 < self.lam0 <= self.lam_max:
                raise ValueError("need 0 < lam0 <= lam_max")
        if problem is not None and self.lam_max is not None:
            if self.lam_max >= problem.nonsmooth.prox_bound_threshold:
                raise ValueError("lam_max must stay below the prox-boundedness threshold")

    def resolve(self, problem: CompositeProblem) -> "SolverConfig":
        """Copy with ``lam0``, ``lam_max`` and ``rho0`` filled in for ``problem``."""
        self.validate(problem)
        lam_g = problem.nonsmooth.prox_bound_threshold
        lam0, lam_max = self.lam0, self.lam_max
        if lam0 is None:
            L = problem.smooth.lipschitz
            lam0 = 1.0 / L if L > 0 else 1.0
            if lam_max is not None:
                lam0 = min(lam0, lam_max)
        if lam_max is None:
            lam_max = 1e6 * lam0
        if math.isfinite(lam_g):
            lam_max = min(lam_max, 0.5 * lam_g)
            lam0 = min(lam0, lam_max)
        rho0 = self.rho_max if self.rho0 is None else min(max(self.rho0, self.rho_min), self.rho_max)
        out = replace(self, lam0=lam0, lam_max=lam_max, rho0=rho0)
        out.validate(problem)
        return out


@dataclass
class SolverState:
    k: int
    x: np.ndarray
    step: FbStep
    s: Optional[np.ndarray] = None
    tau: float = 1.0
    rho: float = 1e5
    zeta: float = 1e-2
    xi: float = math.nan
    r0: float = math.nan
    log: ConvergenceLog = field(default_factory=ConvergenceLog)
    cg_iters: int = 0
    damping: Optional[np.ndarray] = None


@dataclass
class RunResult:
    x_final: np.ndarray
    z_final: np.ndarray
    zstar_final: np.ndarray
    phi_final: float
    residual_final: float
    iterations: int
    status: str
    lam_final: float = math.nan
    r0: float = math.nan
    log: Optional[ConvergenceLog] = None
    tolerance: float = math.nan
    info: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def solution(self) -> np.ndarray:
        return self.z_final


# ---------------------------------------------------------------------------
# damping


def damping_diagonal(zeta: float, z) -> np.ndarray:
    """``D_ii = zeta / z_i^2`` on the support of ``z``, zero elsewhere."""
    z = np.asarray(z, dtype=float)
    d = np.zeros_like(z)
    nz = z != 0
    d[nz] = zeta / z[nz] ** 2
    return d


def zeta_damping(zeta: float, s, z, curvature: float, eps: float = 1e-4, q: float = 1.0,
                 nu_floor: float = 1e-8):
    """Update the damping parameter from the last direction.

    ``curvature`` is ``s^T W s``. Returns ``(zeta_new, D)`` with ``D`` the
    damping diagonal at ``z`` for ``zeta_new``. A nonpositive ratio measure is
    floored at ``nu_floor`` so that ``zeta`` stays positive.
    """
    if not zeta > 0:
        raise ValueError("zeta must be positive")
    if q not in (1, 1.0, 0.5):
        raise ValueError("damping is defined for q = 1 and q = 1/2")
    s = np.asarray(s, dtype=float)
    z = np.asarray(z, dtype=float)
    nz = z != 0
    if not np.any(nz):
        return zeta, np.zeros_like(z)
    ratio = s[nz] / (z[nz] + eps * np.sign(z[nz]))
    nu_minus = float(np.min(ratio))
    nu_plus = float(np.max(ratio))
    nu = -nu_minus if q == 1 else max(-nu_minus, nu_plus)
    if curvature <= 0:
        zeta_new = 2.0 * zeta
    elif not 0.8 <= nu <= 1.2:
        zeta_new = zeta * math.sqrt(max(nu, nu_floor))
    else:
        zeta_new = zeta
    return zeta_new, damping_diagonal(zeta_new, z)


# ---------------------------------------------------------------------------
# directions


class NewtonDirection:
    """SCD semismooth* Newton direction provider.

    Builds the SC element at ``(z, z*_g)``, optionally adds the damping
    diagonal, and solves the reduced system exactly or by trust-region CG.
    """

    def __init__(self, mode: Optional[str] = None, precond: Optional[str] = None,
                 dense_cutoff: Optional[int] = None):
        self.mode = mode
        self.precond = precond
        self.dense_cutoff = dense_cutoff
        self._sigma = None

    def _sigma_for(self, problem):
        if self._sigma is None:
            A = getattr(problem.smooth, "A", None)
            self._sigma = sigma_probe(A) if A is not None else None
        return self._sigma

    def __call__(self, state: SolverState, config: SolverConfig) -> NewtonOutcome:
        step = state.step
        problem = step.problem
        mode = self.mode or config.direction_mode
        cutoff = self.dense_cutoff or config.dense_cutoff
        kind = self.precond or config.precond
        try:
            scd = problem.nonsmooth.scd_element(step.z, step.zstar_g)
        except GraphError:
            return NewtonOutcome(np.zeros(problem.dim), math.nan, 0, "gradient_fallback")
        q = getattr(problem.nonsmooth, "power", None)
        use_damping = config.damping_enabled and q in (1.0, 0.5)
        damping = damping_diagonal(state.zeta, step.z) if use_damping else None
        zstar = step.zstar
        explicit = True if mode == "exact" else "auto"
        sys = build_reduced(problem, step.z, step.zstar_g, zstar, scd, damping=damping,
                            explicit=explicit)
        state.damping = damping
        zs_norm = float(np.linalg.norm(zstar))
        if sys.m == 0 or zs_norm == 0.0:
            out = NewtonOutcome(np.zeros(problem.dim), 0.0, 0, "exact", u=np.zeros(sys.m),
                                curvature=0.0)
        elif mode == "exact" and sys.m <= cutoff:
            out = exact_direction(sys, state.rho, cutoff=cutoff)
        else:
            sigma = None
            if sys.h_diag is None and kind in ("auto", "sigma"):
                sigma = self._sigma_for(problem)
            pre = make_preconditioner(sys, kind, sigma=sigma)
            out = cg_trust_region(sys, state.rho, chi_tolerance(zs_norm), precond=pre)
        if use_damping and out.u is not None and sys.m > 0:
            state.zeta, _ = zeta_damping(state.zeta, out.s, step.z, out.curvature,
                                         eps=config.damping_eps, q=q)
        return out


def direction_provider_newton(state: SolverState, config: SolverConfig):
    """Functional form of :class:`NewtonDirection`; returns ``(s, xi)``."""
    out = NewtonDirection()(state, config)
    return out.s, out.xi


def _unpack_direction(out):
    if isinstance(out, NewtonOutcome):
        return out.s, out.xi, out.cg_iters
    s, xi = out
    return np.asarray(s, dtype=float), float(xi), 0


# ---------------------------------------------------------------------------
# main algorithm


def _result(state: SolverState, status: str, lam: float, tol: float, extra=None) -> RunResult:
    step = state.step
    info = dict(extra or {})
    return RunResult(x_final=step.x, z_final=step.z, zstar_final=step.zstar,
                     phi_final=step.phi_z, residual_final=step.residual, iterations=state.k,
                     status=status, lam_final=lam, r0=state.r0, log=state.log,
                     tolerance=tol, info=info)


def _lipschitz_or_nan(problem):
    try:
        return float(problem.smooth.lipschitz)
    except Exception:  # pragma: no cover - custom smooth parts may not estimate
        return math.nan


def bas_gssn(problem: CompositeProblem, x0, config: Optional[SolverConfig] = None,
             direction_provider: Optional[Callable] = None,
             callback: Optional[Callable[[SolverState], None]] = None) -> RunResult:
    """Globalized SCD semismooth* Newton method.

    Parameters
    ----------
    problem : CompositeProblem
    x0 : array_like
        Starting point.
    config : SolverConfig, optional
    direction_provider : callable, optional
        ``(state, config) -> NewtonOutcome`` or ``(s, xi)``. Defaults to
        :class:`NewtonDirection`.
    callback : callable, optional
        Called with the state after every accepted iteration.

    Returns
    -------
    RunResult
        ``z_final`` is the computed solution; ``x_final`` the last iterate.
    """
    cfg = (config or SolverConfig()).resolve(problem)
    provider = direction_provider or NewtonDirection()
    x0 = np.array(x0, dtype=float)
    if x0.shape != (problem.dim,):
        raise ValueError(f"x0 must have shape ({problem.dim},)")
    alpha, beta, sigma = cfg.alpha, cfg.beta, cfg.sigma
    b1a = beta * (1.0 - alpha)
    t_start = time.perf_counter()

    lam = cfg.lam0
    step = forward_backward(problem, x0, lam)
    halvings = 0
    while not descent_ok(problem, step, alpha):
        halvings += 1
        if halvings > cfg.max_inner:
            state = SolverState(0, x0, step, rho=cfg.rho0, zeta=cfg.zeta0, r0=step.residual)
            return _result(state, "stagnation", lam, math.nan, {"reason": "initial lambda"})
        lam *= 0.5
        step = forward_backward(problem, x0, lam)

    r0 = step.residual
    tol = cfg.tol_factor * max(cfg.typ_val, r0)
    state = SolverState(0, x0, step, rho=cfg.rho0, zeta=cfg.zeta0, r0=r0,
                        log=ConvergenceLog(rtol=cfg.invariant_rtol))
    phi_fb0 = step.phi_fb
    sum_eta = 0.0
    slack_total = 0.0
    min_margin1 = math.inf
    min_margin2 = math.inf

    def check_sandwich(st: FbStep):
        nonlocal min_margin2
        margin = st.phi_fb - (st.phi_z + (1.0 - alpha) * st.eta)
        tol2 = cfg.invariant_rtol * (1.0 + abs(st.phi_fb))
        min_margin2 = min(min_margin2, margin / (1.0 + abs(st.phi_fb)))
        if cfg.check_invariants and margin < -tol2:
            raise InvariantError(f"envelope sandwich violated by {-margin:.3e}")

    check_sandwich(step)
    state.log.append(0, step.phi_fb, step.phi_z, step.step_norm, lam, math.nan, state.rho,
                     math.nan, 0, time.perf_counter() - t_start)

    status = None
    while True:
        # step 3: termination
        if step.residual <= tol or step.dist_sq == 0.0:
            status = "converged"
            break
        if cfg.decrease_eps > 0 and step.eta <= cfg.decrease_eps * (phi_fb0 - step.phi_fb):
            status = "stagnation"
            break
        if step.phi_z <= cfg.phi_min:
            status = "phi_below_min"
            break
        if state.k >= cfg.max_iter:
            status = "max_iter"
            break

        # step 4: direction
        s, xi, cg_iters = _unpack_direction(provider(state, cfg))
        s_norm = float(np.linalg.norm(s))
        if not np.all(np.isfinite(s)):
            s, s_norm = np.zeros_like(step.z), 0.0
        if s_norm > state.rho:
            s = s * (state.rho / s_norm)
            s_norm = state.rho

        # step 5/6: backtracking on tau first, then on lambda
        z = step.z
        tau = 1.0
        lam_p = lam
        target = step.phi_fb - b1a * step.eta
        slack = cfg.rel_slack * (1.0 + abs(step.phi_fb))
        trial = forward_backward(problem, z + s, lam_p)
        inner = 0
        while True:
            dec_fail = trial.phi_fb > target + slack
            if not dec_fail and descent_ok(problem, trial, alpha):
                break
            inner += 1
            if inner > cfg.max_inner:
                status = "stagnation"
                break
            if dec_fail:
                tau *= 0.5
            else:
                lam_p *= 0.5
            trial = forward_backward(problem, z + tau * s, lam_p)
        if status is not None:
            break

        # step 7: increase lambda while the tighter descent test holds
        grow = 0
        while (trial.bregman <= sigma * alpha * trial.eta and 2.0 * lam_p <= cfg.lam_max
               and grow < cfg.max_inner):
            grow += 1
            probe = forward_backward(problem, trial.x, 2.0 * lam_p)
            if not descent_ok(problem, probe, alpha):
                break
            lam_p *= 2.0
            trial = probe

        # invariants
        margin1 = target - trial.phi_fb
        min_margin1 = min(min_margin1, margin1 / (1.0 + abs(step.phi_fb)))
        if cfg.check_invariants and margin1 < -cfg.invariant_rtol * (1.0 + abs(step.phi_fb)):
            raise InvariantError(f"sufficient decrease violated by {-margin1:.3e}")
        check_sandwich(trial)
        sum_eta += step.eta
        slack_total += max(0.0, -margin1)

        # step 8
        state.rho = update_radius(state.rho, s_norm, tau, cfg.rho_min, cfg.rho_max)
        state.k += 1
        state.x = trial.x
        state.step = step = trial
        state.s = s
        state.tau = tau
        state.xi = xi
        state.cg_iters = cg_iters
        lam = lam_p
        state.log.append(state.k, step.phi_fb, step.phi_z, step.step_norm, lam, tau, state.rho,
                         xi, cg_iters, time.perf_counter() - t_start)
        if callback is not None:
            callback(state)

    eta_bound = (phi_fb0 - step.phi_fb + slack_total) / b1a + 1e-8
    if cfg.check_invariants and sum_eta > eta_bound * (1.0 + cfg.invariant_rtol):
        raise InvariantError("sum of eta exceeds the decrease budget")
    info = {"sum_eta": sum_eta, "eta_bound": eta_bound, "min_margin_decrease": min_margin1,
            "min_margin_sandwich": min_margin2, "time_s": time.perf_counter() - t_start}
    res = _result(state, status, lam, tol, info)
    if status == "converged":
        L = _lipschitz_or_nan(problem)
        c = 1.01 * L + 1.0 / lam
        res.info["stationarity_ok"] = bool(np.linalg.norm(step.zstar) <= c * step.step_norm
                                           + 1e-14 * max(1.0, np.linalg.norm(step.grad_x)))
    return res


# ---------------------------------------------------------------------------
# nonconvex heuristic


def restricted_least_squares(A, b, x, support, rtol: float = 0.1) -> np.ndarray:
    """Approximate minimiser ``dx`` of ``1/2 ||A (x + dx) - b||^2`` with ``dx`` zero off ``support``.

    CG on the normal equations, stopped once the normal-equation residual
    drops to ``rtol`` times its initial value.
    """
    x = np.asarray(x, dtype=float)
    idx = np.flatnonzero(support) if np.asarray(support).dtype == bool else np.asarray(support, int)
    dx = np.zeros_like(x)
    if idx.size == 0:
        return dx
    AI = A.columns(idx)
    r = b - A.apply(x)
    rhs = np.asarray(AI.T @ r).ravel()
    if not np.any(rhs):
        return dx
    op = spla.LinearOperator((idx.size, idx.size), dtype=float,
                             matvec=lambda u: np.asarray(AI.T @ (AI @ u)).ravel())
    sol, _ = spla.cg(op, rhs, rtol=rtol, atol=0.0, maxiter=max(10 * idx.size, 100))
    dx[idx] = sol
    return dx


def heuristic_multistart(problem: CompositeProblem, x0, config: Optional[SolverConfig] = None,
                         direction_provider: Optional[Callable] = None,
                         max_passes: int = 50, eq_rtol: float = 1e-12) -> RunResult:
    """Restart local solves from least-squares-corrected points; keep the best.

    The smooth part must be a :class:`LeastSquares`. Returns the best
    :class:`RunResult`; its ``info`` carries ``phi_history``, ``j_opt``,
    ``phi_first`` and ``passes``.
    """
    smooth = problem.smooth
    if not isinstance(smooth, LeastSquares):
        raise TypeError("the heuristic needs a least-squares smooth part")
    A, b = smooth.A, smooth.b
    x = np.array(x0, dtype=float)
    phi_opt = math.inf
    j_opt = 0
    best = None
    phis = []
    j = 0
    while True:
        res = bas_gssn(problem, x, config, direction_provider)
        phi_j = res.phi_final
        phis.append(phi_j)
        if phi_j < phi_opt:
            phi_opt, j_opt, best = phi_j, j, res
        same = j > 1 and math.isclose(phi_j, phis[-2], rel_tol=eq_rtol, abs_tol=0.0)
        if j > max(j_opt + 2, 10) or same or j + 1 >= max_passes:
            break
        xbar = res.z_final
        probe = forward_backward(problem, xbar, _big_lambda(problem, 1000.0 * res.lam_final))
        support = probe.z != 0
        dx = restricted_least_squares(A, b, xbar, support)
        x = xbar + 0.25 * dx
        j += 1
    best.info.update({"phi_history": phis, "j_opt": j_opt, "phi_first": phis[0],
                      "passes": len(phis)})
    return best


def _big_lambda(problem, lam):
    lam_g = problem.nonsmooth.prox_bound_threshold
    return lam if lam < lam_g else 0.5 * lam_g


# ---------------------------------------------------------------------------
# baselines


def pgm_baseline(problem: CompositeProblem, x0, lam_max: Optional[float] = None,
                 max_iter: int = 100000, tol: Optional[float] = None,
                 config: Optional[SolverConfig] = None) -> RunResult:
    """Proximal gradient with the descent-test backtracking on ``lam``.

    ``tol`` is the absolute residual target; by default the GSSN stopping rule
    ``tol_factor * max(typ_val, r0)`` from ``config``.
    """
    cfg = config or SolverConfig()
    if lam_max is not None:
        cfg = replace(cfg, lam_max=lam_max)
    cfg = cfg.resolve(problem)
    alpha = cfg.alpha
    t_start = time.perf_counter()
    x = np.array(x0, dtype=float)
    lam = cfg.lam0
    step = forward_backward(problem, x, lam)
    log = ConvergenceLog(rtol=cfg.invariant_rtol)
    state = SolverState(0, x, step, r0=math.nan, log=log)
    status = None
    k = 0
    r0 = None
    thr = tol
    while True:
        halvings = 0
        while not descent_ok(problem, step, alpha):
            halvings += 1
            if halvings > cfg.max_inner:
                status = "stagnation"
                break
            lam *= 0.5
            step = forward_backward(problem, step.x, lam)
        if status is not None:
            break
        if r0 is None:
            r0 = step.residual
            state.r0 = r0
            if thr is None:
                thr = cfg.tol_factor * max(cfg.typ_val, r0)
        state.step = step
        state.k = k
        log.append(k, step.phi_fb, step.phi_z, step.step_norm, lam, 1.0, math.nan, math.nan, 0,
                   time.perf_counter() - t_start)
        if step.residual <= thr or step.dist_sq == 0.0:
            status = "converged"
            break
        if k >= max_iter:
            status = "max_iter"
            break
        step = forward_backward(problem, step.z, lam)
        k += 1
    state.k = k
    state.step = step
    return _result(state, status, lam, thr if thr is not None else math.nan,
                   {"time_s": time.perf_counter() - t_start})


@dataclass
class FistaTrajectory:
    x_final: np.ndarray
    iterations: int
    rel_error: list
    residual: list
    time_s: list

    def error_at_time(self, t: float) -> float:
        """Relative error of the last iterate finished by wall time ``t``."""
        times = np.asarray(self.time_s)
        i = int(np.searchsorted(times, t, side="right")) - 1
        return self.rel_error[max(i, 0)]


def fista_baseline(problem: CompositeProblem, x0, L_f: Optional[float] = None,
                   max_iter: int = 1000, reference=None, time_limit: Optional[float] = None,
                   record: bool = True) -> FistaTrajectory:
    """Accelerated proximal gradient with fixed step ``1/L_f``.

    Records per iteration the relative infinity-norm error against
    ``reference`` (if given), the residual at ``lam = 1/L_f`` and the
    cumulative wall time spent in the iteration proper (bookkeeping excluded).
    """
    L = float(problem.smooth.lipschitz if L_f is None else L_f)
    lam = 1.0 / L
    x = np.array(x0, dtype=float)
    y = x.copy()
    t = 1.0
    ref = None if reference is None else np.asarray(reference, dtype=float)
    ref_norm = None if ref is None else max(float(np.max(np.abs(ref))), 1e-300)
    errs, res, times = [], [], []
    elapsed = 0.0
    k = 0
    for k in range(1, max_iter + 1):
        t0 = time.perf_counter()
        x_new = forward_backward(problem, y, lam).z
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t = x_new, t_new
        elapsed += time.perf_counter() - t0
        if record:
            times.append(elapsed)
            errs.append(math.nan if ref is None else float(np.max(np.abs(x - ref))) / ref_norm)
            res.append(forward_backward(problem, x, lam).residual)
        if time_limit is not None and elapsed >= time_limit:
            break
    return FistaTrajectory(x, k, errs, res, times)

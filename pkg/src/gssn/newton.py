"""SCD semismooth* Newton directions.

The Newton system ``W s = -P z*`` is solved on ``range P`` through an
orthonormal basis ``Z``: with ``M = Z^T (H + W_g + D) Z`` and ``rhs = Z^T z*``
the direction is ``s = Z u`` for (an approximation of) ``M u = -rhs``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from .core import LinearOperator
from .prox import ScdElement

__all__ = [
    "ReducedSystem",
    "NewtonOutcome",
    "build_reduced",
    "exact_direction",
    "cg_trust_region",
    "two_dim_subproblem",
    "trust_region_small",
    "update_radius",
    "chi_tolerance",
    "sigma_probe",
    "estimate_regularity",
    "second_order_check",
    "IdentityPreconditioner",
    "DiagonalPreconditioner",
    "IncompleteCholesky",
    "make_preconditioner",
    "DENSE_CUTOFF",
]

DENSE_CUTOFF = 2000
ICHOL_NNZ_BUDGET = 50_000

EXIT_REASONS = ("converged", "radius", "negative_curvature", "two_dim_fallback",
                "exact", "gradient_fallback", "iteration_cap")


@dataclass
class ReducedSystem:
    """Newton system restricted to ``range P``.

    ``matvec`` applies ``M``; ``matrix`` is an explicit copy of ``M`` (dense or
    sparse) when the smooth part exposes its Hessian. ``damping`` holds the
    diagonal ``D`` (length ``n``) already folded into ``M``.
    """

    basis: sp.csc_matrix
    matvec: Callable[[np.ndarray], np.ndarray]
    rhs: np.ndarray
    zstar: np.ndarray
    matrix: object = None
    h_diag: Optional[np.ndarray] = None
    w_diag: Optional[np.ndarray] = None
    damping: Optional[np.ndarray] = None
    element: Optional[ScdElement] = None

    @classmethod
    def from_matrix(cls, M, rhs, zstar=None) -> "ReducedSystem":
        """System with ``Z = I`` for a given reduced matrix; ``zstar`` defaults to ``rhs``."""
        M = np.asarray(M, dtype=float)
        rhs = np.asarray(rhs, dtype=float)
        m = rhs.size
        return cls(sp.identity(m, format="csc"), lambda u: M @ u, rhs,
                   rhs.copy() if zstar is None else np.asarray(zstar, dtype=float),
                   matrix=M, h_diag=np.diag(M).copy(), w_diag=np.zeros(m))

    @property
    def m(self) -> int:
        return self.basis.shape[1]

    @property
    def n(self) -> int:
        return self.basis.shape[0]

    def lift(self, u) -> np.ndarray:
        return self.basis @ u

    def dense_matrix(self) -> np.ndarray:
        if self.matrix is not None:
            mat = self.matrix.toarray() if sp.issparse(self.matrix) else np.asarray(self.matrix)
        else:
            eye = np.eye(self.m)
            mat = np.column_stack([self.matvec(eye[:, j]) for j in range(self.m)])
        return 0.5 * (mat + mat.T)

    def model(self, u) -> float:
        return 0.5 * float(u @ self.matvec(u)) + float(self.rhs @ u)

    def curvature(self, u, include_damping: bool = False) -> float:
        """``s^T W s`` for ``s = Z u``, with or without the damping term."""
        val = float(u @ self.matvec(u))
        if not include_damping and self.damping is not None:
            s = self.lift(u)
            val -= float(s @ (self.damping * s))
        return val


@dataclass
class NewtonOutcome:
    s: np.ndarray
    xi: float
    cg_iters: int
    exit_reason: str
    u: Optional[np.ndarray] = None
    curvature: float = math.nan
    model_history: list = field(default_factory=list)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.s))


def build_reduced(problem, z, zstar_g, zstar, scd: ScdElement, damping=None,
                  explicit="auto") -> ReducedSystem:
    """Assemble ``M = Z^T (grad^2 f(z) + W_g + D) Z`` and ``rhs = Z^T z*``.

    ``explicit=True`` forms ``M`` as a matrix when the smooth part allows it;
    ``False`` keeps it as an operator (through a factor ``B`` with
    ``Z^T grad^2 f Z = B^T B`` when available); ``"auto"`` uses the factor for
    dense least-squares data and an explicit matrix otherwise.
    """
    Z = scd.basis
    z = np.asarray(z, dtype=float)
    zstar = np.asarray(zstar, dtype=float)
    smooth = problem.smooth
    Wg = scd.W
    if damping is not None:
        damping = np.asarray(damping, dtype=float)
        Wd = (Wg + sp.diags(damping)).tocsr()
    else:
        Wd = Wg
    m = Z.shape[1]
    rhs = Z.T @ zstar
    if m == 0:
        return ReducedSystem(Z, lambda u: np.zeros(0), rhs, zstar, matrix=np.zeros((0, 0)),
                             h_diag=np.zeros(0), w_diag=np.zeros(0), damping=damping, element=scd)
    ZtWZ = (Z.T @ Wd @ Z).tocsr()
    w_diag = np.asarray(ZtWZ.diagonal()).ravel()

    def matvec(u):
        s = Z @ u
        return Z.T @ (smooth.hessian_action(z, s) + Wd @ s)

    if explicit == "auto" or not explicit:
        B = smooth.reduced_factor(z, Z)
        if B is not None and (not explicit or not sp.issparse(B)):
            Bd = B.toarray() if sp.issparse(B) else np.asarray(B)
            Wred = ZtWZ

            def matvec(u):  # noqa: F811
                return Bd.T @ (Bd @ u) + Wred @ u

            return ReducedSystem(Z, matvec, rhs, zstar, matrix=None,
                                 h_diag=np.einsum("ij,ij->j", Bd, Bd), w_diag=w_diag,
                                 damping=damping, element=scd)
    H = smooth.reduced_hessian(z, Z) if explicit else None
    matrix = None
    h_diag = None
    if H is not None:
        if sp.issparse(H):
            matrix = (H + ZtWZ).tocsr()
            h_diag = np.asarray(H.diagonal()).ravel()
        else:
            matrix = np.asarray(H) + ZtWZ.toarray()
            h_diag = np.diag(H).copy()
        mat = matrix

        def matvec(u):  # noqa: F811
            return np.asarray(mat @ u).ravel()
    else:
        h_diag = smooth.reduced_hessian_diag(z, Z)
    return ReducedSystem(Z, matvec, rhs, zstar, matrix=matrix, h_diag=h_diag,
                         w_diag=w_diag, damping=damping, element=scd)


def _relative_residual(sys: ReducedSystem, u, zs_norm: float) -> float:
    if zs_norm == 0.0:
        return 0.0
    return float(np.linalg.norm(sys.matvec(u) + sys.rhs)) / zs_norm


def exact_direction(sys: ReducedSystem, rho: float, cutoff: int = DENSE_CUTOFF) -> NewtonOutcome:
    """Solve the reduced system densely; fall back to ``-rho P z*/||P z*||`` if singular."""
    m = sys.m
    if m == 0:
        return NewtonOutcome(np.zeros(sys.n), 0.0, 0, "exact", u=np.zeros(0), curvature=0.0)
    if m > cutoff:
        raise ValueError(f"reduced dimension {m} exceeds the dense cutoff {cutoff}")
    zs_norm = float(np.linalg.norm(sys.zstar))
    M = sys.dense_matrix()
    evals, evecs = np.linalg.eigh(M)
    scale = float(np.max(np.abs(evals)))
    if scale == 0.0 or float(np.min(np.abs(evals))) <= m * np.finfo(float).eps * scale:
        prhs = float(np.linalg.norm(sys.rhs))
        if prhs == 0.0:
            u = np.zeros(m)
        else:
            u = -rho * sys.rhs / prhs
        out = NewtonOutcome(sys.lift(u), _relative_residual(sys, u, zs_norm), 0,
                            "gradient_fallback", u=u)
        out.curvature = sys.curvature(u)
        return out
    u = -evecs @ ((evecs.T @ sys.rhs) / evals)
    nu = float(np.linalg.norm(u))
    xi = 0.0
    if nu > rho:
        u = u * (rho / nu)
        xi = _relative_residual(sys, u, zs_norm)
    out = NewtonOutcome(sys.lift(u), xi, 0, "exact", u=u)
    out.curvature = sys.curvature(u)
    return out


def trust_region_small(B, b, rho: float) -> np.ndarray:
    """Global minimiser of ``1/2 y^T B y + b^T y`` over ``||y|| <= rho`` for small dense ``B``.

    Uses the eigendecomposition of ``B`` and a bracketed root find on the
    secular equation ``1/||y(mu)|| = 1/rho``; the hard case is handled
    explicitly.
    """
    B = 0.5 * (np.asarray(B, dtype=float) + np.asarray(B, dtype=float).T)
    b = np.asarray(b, dtype=float)
    lam, V = np.linalg.eigh(B)
    beta = V.T @ b
    lmin = float(lam[0])
    bnorm = float(np.linalg.norm(b))
    if lmin > 0:
        y = -beta / lam
        if np.linalg.norm(y) <= rho:
            return V @ y
    if bnorm == 0.0:
        if lmin >= 0:
            return np.zeros_like(b)
        return rho * V[:, 0]
    lo = max(0.0, -lmin)
    scale = max(1.0, float(np.max(np.abs(lam))))
    degenerate = np.abs(lam - lmin) <= 1e-12 * scale
    hard_zero = np.abs(beta[degenerate]) <= 1e-13 * bnorm
    if lmin <= 0 and np.all(hard_zero):
        # hard case candidate: does mu = -lmin leave the ball unfilled?
        denom = lam[~degenerate] + lo
        y = np.zeros_like(beta)
        y[~degenerate] = -beta[~degenerate] / denom
        ny = float(np.linalg.norm(y))
        if ny <= rho:
            k = int(np.nonzero(degenerate)[0][0])
            y[k] = math.sqrt(max(rho * rho - ny * ny, 0.0))
            return V @ y

    def secular(mu):
        d = lam + mu
        with np.errstate(divide="ignore"):
            comps = np.where(d > 0, beta / np.where(d > 0, d, 1.0), np.where(beta != 0, np.inf, 0.0))
        ny = float(np.linalg.norm(comps))
        if not math.isfinite(ny):
            return -1.0 / rho
        if ny == 0.0:
            return math.inf
        return 1.0 / ny - 1.0 / rho

    hi = lo + bnorm / rho
    while secular(hi) < 0:
        hi = lo + 2.0 * (hi - lo) + 1e-300
    f_lo = secular(lo)
    if f_lo >= 0:
        mu = lo
    else:
        mu = brentq(secular, lo, hi, xtol=1e-15 * max(1.0, hi), rtol=4 * np.finfo(float).eps,
                    maxiter=500)
    d = lam + mu
    y = np.where(d > 0, -beta / np.where(d > 0, d, 1.0), 0.0)
    ny = float(np.linalg.norm(y))
    if ny > 0 and abs(ny - rho) <= 1e-8 * rho:
        y *= rho / ny
    return V @ y


def two_dim_subproblem(matvec, g, rho: float, v1, v2) -> np.ndarray:
    """Minimise ``1/2 s^T W s + <g, s>`` over ``span{v1, v2}`` intersected with the ``rho``-ball.

    ``matvec`` applies ``W``; vectors are in whatever coordinates ``matvec``
    uses. A (numerically) dependent pair degrades to the one-dimensional
    problem on the nonzero vector.
    """
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    g = np.asarray(g, dtype=float)
    cols = []
    for v in (v1, v2):
        nv = float(np.linalg.norm(v))
        if nv == 0.0:
            continue
        w = v / nv
        for q in cols:
            w = w - (q @ w) * q
        nw = float(np.linalg.norm(w))
        if nw > 1e-10:
            cols.append(w / nw)
    if not cols:
        return np.zeros_like(g)
    Q = np.column_stack(cols)
    WQ = np.column_stack([matvec(Q[:, j]) for j in range(Q.shape[1])])
    B = Q.T @ WQ
    y = trust_region_small(B, Q.T @ g, rho)
    return Q @ y


def cg_trust_region(sys: ReducedSystem, rho: float, xi_bar: float, precond=None,
                    max_iter: Optional[int] = None, record_model: bool = False) -> NewtonOutcome:
    """Preconditioned trust-region CG on ``min 1/2 u^T M u + rhs^T u, ||Z u|| <= rho``.

    Exits: relative residual below ``xi_bar`` (``converged``), iterate outside
    the radius (rescaled onto it, ``radius``), or nonpositive curvature
    ``<M p, p> <= 0`` (two-dimensional subproblem on ``span{p_0, p_j}``).
    """
    m = sys.m
    n = sys.n
    if m == 0:
        return NewtonOutcome(np.zeros(n), 0.0, 0, "converged", u=np.zeros(0), curvature=0.0)
    if not rho > 0:
        raise ValueError("rho must be positive")
    if precond is None:
        precond = IdentityPreconditioner()
    if max_iter is None:
        max_iter = max(10 * m, 50)
    zs_norm = float(np.linalg.norm(sys.zstar))
    threshold = xi_bar * zs_norm
    u = np.zeros(m)
    r = sys.rhs.copy()
    y_ = precond.solve(r)
    p = -y_
    p0 = p.copy()
    ry = float(r @ y_)
    history = [0.0] if record_model else []
    j = 0
    reason = None
    while np.linalg.norm(u) <= rho and np.linalg.norm(r) >= threshold:
        if j >= max_iter:
            reason = "iteration_cap"
            break
        yv = sys.matvec(p)
        curv = float(yv @ p)
        if curv <= 0:
            if j == 0:
                ud = two_dim_subproblem(sys.matvec, sys.rhs, rho, p0, np.zeros(m))
                reason = "two_dim_fallback"
            else:
                ud = two_dim_subproblem(sys.matvec, sys.rhs, rho, p0, p)
                reason = "negative_curvature"
            out = NewtonOutcome(sys.lift(ud), _relative_residual(sys, ud, zs_norm), j, reason,
                                u=ud, model_history=history)
            out.curvature = sys.curvature(ud)
            return out
        a = -float(r @ p) / curv
        u = u + a * p
        r = r + a * yv
        y_ = precond.solve(r)
        ry_new = float(r @ y_)
        p = -y_ + (ry_new / ry) * p
        ry = ry_new
        j += 1
        if record_model:
            history.append(sys.model(u))
    nu = float(np.linalg.norm(u))
    if nu > rho:
        u = u * (rho / nu)
        reason = "radius"
        xi = _relative_residual(sys, u, zs_norm)
    else:
        reason = reason or "converged"
        xi = float(np.linalg.norm(r)) / zs_norm if zs_norm > 0 else 0.0
    out = NewtonOutcome(sys.lift(u), xi, j, reason, u=u, model_history=history)
    out.curvature = sys.curvature(u)
    return out


def update_radius(rho: float, s_norm: float, tau: float, rho_min: float, rho_max: float) -> float:
    """Trust-radius rule: shrink after heavy backtracking, grow after a full boundary step."""
    if tau < 0.25:
        return max(rho_min, s_norm / 2.0)
    if tau == 1.0 and math.isclose(s_norm, rho, rel_tol=1e-12):
        return min(rho_max, 1.5 * s_norm)
    return rho


def chi_tolerance(t: float) -> float:
    """CG forcing term ``0.1 / (1 - ln(t / (t + 1)))``."""
    if not t > 0:
        raise ValueError("chi_tolerance needs t > 0")
    return 0.1 / (1.0 - math.log(t / (t + 1.0)))


def sigma_probe(op: LinearOperator, count: int = 10, seed: int = 0) -> float:
    """Mean Rayleigh quotient ``||A x||^2 / ||x||^2`` over random Gaussian probes."""
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(count):
        x = rng.standard_normal(op.cols)
        ax = op.apply(x)
        total += float(ax @ ax) / float(x @ x)
    return total / count


def _smallest_eigenvalue(sys: ReducedSystem, cutoff: int) -> float:
    if sys.m <= cutoff:
        return float(np.linalg.eigvalsh(sys.dense_matrix())[0])
    op = spla.LinearOperator((sys.m, sys.m), matvec=sys.matvec, dtype=float)
    return float(spla.eigsh(op, k=1, which="SA", return_eigenvectors=False)[0])


def estimate_regularity(sys: ReducedSystem, cutoff: int = DENSE_CUTOFF) -> float:
    """``1 / lambda_min(M)`` if ``M`` is positive definite, else ``inf``."""
    if sys.m < 1:
        raise ValueError("empty reduced system")
    lmin = _smallest_eigenvalue(sys, cutoff)
    return 1.0 / lmin if lmin > 0 else math.inf


def second_order_check(A_active, w_bar, cutoff: int = DENSE_CUTOFF, tol: float = 1e-8):
    """Test ``A_I^T A_I + diag(w_bar)`` for positive semidefiniteness.

    Returns ``(ok, lambda_min)``; ``ok`` is ``None`` when the active set exceeds
    ``cutoff``.
    """
    if isinstance(A_active, LinearOperator):
        A_active = A_active.toarray()
    A_active = A_active.toarray() if sp.issparse(A_active) else np.asarray(A_active, dtype=float)
    w_bar = np.asarray(w_bar, dtype=float).ravel()
    k = A_active.shape[1]
    if k == 0:
        raise ValueError("active set is empty")
    if k > cutoff:
        return None, math.nan
    G = A_active.T @ A_active
    scale = float(np.linalg.eigvalsh(G)[-1])
    lmin = float(np.linalg.eigvalsh(G + np.diag(w_bar))[0])
    return lmin >= -tol * max(scale, 1.0), lmin


# ---------------------------------------------------------------------------
# preconditioners


class IdentityPreconditioner:
    kind = "identity"

    def solve(self, r):
        return np.array(r, dtype=float)


class DiagonalPreconditioner:
    kind = "diag"

    def __init__(self, diag):
        diag = np.asarray(diag, dtype=float)
        if np.any(diag <= 0):
            raise ValueError("diagonal preconditioner must be positive")
        self.inv = 1.0 / diag

    def solve(self, r):
        return self.inv * r


class IncompleteCholesky:
    """Zero-fill incomplete Cholesky ``M ~ L L^T`` of a sparse SPD matrix.

    On a nonpositive pivot the factorisation restarts on ``M + a diag(M)``
    with growing ``a``.
    """

    kind = "ichol"

    def __init__(self, M, max_shifts: int = 8):
        M = sp.csr_matrix(M)
        diag = np.asarray(M.diagonal()).ravel()
        if np.any(diag <= 0):
            raise ValueError("incomplete Cholesky needs a positive diagonal")
        shift = 0.0
        for _ in range(max_shifts + 1):
            L = self._factor(M, diag, shift)
            if L is not None:
                self.L = L
                self.LT = L.T.tocsr()
                self.shift = shift
                return
            shift = 1e-3 if shift == 0.0 else 10.0 * shift
        raise np.linalg.LinAlgError("incomplete Cholesky broke down")

    @staticmethod
    def _factor(M, diag, shift):
        low = sp.tril(M, format="csr")
        low.sort_indices()
        n = low.shape[0]
        indptr, indices, data = low.indptr, low.indices, low.data
        rows = []
        ldiag = np.empty(n)
        for i in range(n):
            cols = indices[indptr[i]:indptr[i + 1]]
            vals = data[indptr[i]:indptr[i + 1]]
            li = {}
            dval = 0.0
            for k, a in zip(cols.tolist(), vals.tolist()):
                if k < i:
                    rk = rows[k]
                    s = a
                    for jj, lij in li.items():
                        lkj = rk.get(jj)
                        if lkj is not None:
                            s -= lij * lkj
                    li[k] = s / ldiag[k]
                elif k == i:
                    dval = a + shift * diag[i]
            piv = dval - sum(v * v for v in li.values())
            if not piv > 0:
                return None
            ldiag[i] = math.sqrt(piv)
            rows.append(li)
        r_idx, c_idx, vals = [], [], []
        for i, li in enumerate(rows):
            r_idx.extend([i] * (len(li) + 1))
            c_idx.extend(li.keys())
            c_idx.append(i)
            vals.extend(li.values())
            vals.append(ldiag[i])
        return sp.csr_matrix((vals, (r_idx, c_idx)), shape=(n, n))

    def solve(self, r):
        y = spla.spsolve_triangular(self.L, r, lower=True)
        return spla.spsolve_triangular(self.LT, y, lower=False)


def make_preconditioner(sys: ReducedSystem, kind: str = "auto", sigma: Optional[float] = None):
    """Pick a preconditioner for :func:`cg_trust_region`.

    ``auto``: incomplete Cholesky for an explicit sparse reduced matrix within
    the nonzero budget, else the diagonal of ``M`` when available, else
    ``sigma I`` plus the diagonal of the nonsmooth part.
    """
    if kind == "identity" or sys.m == 0:
        return IdentityPreconditioner()
    if kind in ("auto", "ichol") and sp.issparse(sys.matrix) and sys.matrix.nnz <= ICHOL_NNZ_BUDGET:
        try:
            return IncompleteCholesky(sys.matrix)
        except (ValueError, np.linalg.LinAlgError):
            if kind == "ichol":
                raise
    if kind == "ichol":
        raise ValueError("incomplete Cholesky needs an explicit sparse reduced matrix")
    if kind in ("auto", "diag") and sys.h_diag is not None:
        h = np.asarray(sys.h_diag, dtype=float)
    elif kind in ("auto", "diag", "sigma"):
        if sigma is None:
            return IdentityPreconditioner()
        h = np.full(sys.m, float(sigma))
    else:
        raise ValueError(f"unknown preconditioner kind {kind!r}")
    w = sys.w_diag if sys.w_diag is not None else np.zeros(sys.m)
    d = h + w
    bad = ~(d > 1e-12 * max(float(np.max(np.abs(d))), 1e-300))
    if np.any(bad):
        d[bad] = np.where(h[bad] > 0, h[bad], 1.0)
    return DiagonalPreconditioner(d)

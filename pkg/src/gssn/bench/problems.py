"""Synthetic benchmark instances."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..core import CompositeProblem, LeastSquares, LinearOperator, QuadraticForm
from ..prox import L0Norm, L1Norm, LqNorm, TrescaFriction

__all__ = ["RegressionProblem", "TrescaToyProblem", "gen_lasso", "gen_tresca_toy", "make_rng"]


def make_rng(seed) -> np.random.Generator:
    """Seeded generator (PCG64 bit generator, numpy's default)."""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class RegressionProblem:
    """``1/2 ||A x - b||^2 + mu ||x||_q^q`` with ``q`` in ``{1, 1/2, 0}``."""

    A: LinearOperator
    b: np.ndarray
    mu: float
    q: float = 1.0
    ground_truth: Optional[np.ndarray] = None
    lam_c: Optional[float] = None

    @staticmethod
    def mu_from_lambda_c(A: LinearOperator, b, lam_c: float) -> float:
        return float(lam_c) * float(np.max(np.abs(A.apply_adjoint(b))))

    @classmethod
    def from_lambda_c(cls, A, b, lam_c: float, q: float = 1.0, ground_truth=None):
        if not isinstance(A, LinearOperator):
            A = LinearOperator.from_matrix(A)
        b = np.asarray(b, dtype=float)
        return cls(A, b, cls.mu_from_lambda_c(A, b, lam_c), q, ground_truth, float(lam_c))

    @classmethod
    def identity(cls, b, mu: float, q: float = 1.0):
        """``A = I`` instance, solvable in closed form by one prox."""
        b = np.asarray(b, dtype=float)
        return cls(LinearOperator.identity(b.size), b, float(mu), q)

    @property
    def n(self) -> int:
        return self.A.cols

    def regularizer(self):
        if self.q == 1:
            return L1Norm(self.mu, self.n)
        if self.q == 0.5:
            return LqNorm(self.mu, self.n, 0.5)
        if self.q == 0:
            return L0Norm(self.mu, self.n)
        raise ValueError(f"unsupported q={self.q}")

    def composite(self) -> CompositeProblem:
        return CompositeProblem(LeastSquares(self.A, self.b), self.regularizer())


def gen_lasso(m: int, n: int, k_sparse: int, noise: float = 1e-2, seed: int = 0,
              lam_c: float = 1e-3, q: float = 1.0) -> RegressionProblem:
    """Random sparse regression instance.

    ``A`` has standard normal entries (dense for ``n <= 5000``, otherwise
    sparse with density 0.01), the truth has ``k_sparse`` standard normal
    nonzeros at random positions, and ``b = A x + noise * N(0, I)``.
    """
    if not 0 <= k_sparse <= n:
        raise ValueError("need 0 <= k_sparse <= n")
    rng = make_rng(seed)
    if n <= 5000:
        A = rng.standard_normal((m, n))
    else:
        A = sp.random(m, n, density=0.01, format="csr", random_state=rng,
                      data_rvs=rng.standard_normal)
    x = np.zeros(n)
    support = rng.choice(n, size=k_sparse, replace=False)
    x[support] = rng.standard_normal(k_sparse)
    b = A @ x + noise * rng.standard_normal(m)
    return RegressionProblem.from_lambda_c(LinearOperator.from_matrix(A), b, lam_c, q, x)


@dataclass
class TrescaToyProblem:
    """``1/2 v^T A v - <l, v> + sum_i (F_i ||v^i_12|| + indicator(v^i_3 + d_i >= 0))``.

    The first ``3 p`` coordinates are contact blocks ``(t1, t2, normal)``; the
    remaining ``n_free`` are unconstrained.
    """

    A: sp.csr_matrix
    l: np.ndarray
    p: int
    F: np.ndarray
    d: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_free(self) -> int:
        return self.n - 3 * self.p

    def composite(self) -> CompositeProblem:
        smooth = QuadraticForm(LinearOperator.from_matrix(self.A), self.l)
        return CompositeProblem(smooth, TrescaFriction(self.F, self.d, self.n_free))

    def kkt_residuals(self, z) -> dict:
        """Nodal optimality measures at ``z`` with ``z* = l - A z`` on the contact blocks."""
        z = np.asarray(z, dtype=float)
        force = self.l - self.A @ z
        blk = z[: 3 * self.p].reshape(-1, 3)
        fb = force[: 3 * self.p].reshape(-1, 3)
        ft = np.linalg.norm(fb[:, :2], axis=1)
        vt = np.linalg.norm(blk[:, :2], axis=1)
        gap = blk[:, 2] + self.d
        # sliding nodes: force aligned with the slip direction at full magnitude F
        align = np.where(vt > 0, np.abs(ft - self.F) + np.linalg.norm(
            fb[:, :2] - self.F[:, None] * blk[:, :2] / np.where(vt > 0, vt, 1.0)[:, None], axis=1), 0.0)
        return {
            "tangential_excess": float(np.max(ft - self.F, initial=-np.inf)),
            "slip_alignment": float(np.max(align, initial=0.0)),
            "gap_min": float(np.min(gap, initial=np.inf)),
            "normal_sign": float(np.max(fb[:, 2], initial=-np.inf)),
            "complementarity": float(np.max(np.abs(gap * fb[:, 2]), initial=0.0)),
            "free_residual": float(np.max(np.abs(force[3 * self.p:]), initial=0.0)),
        }


def _grid_width(nodes: int) -> int:
    return max(1, int(np.ceil(np.sqrt(nodes))))


def gen_tresca_toy(p: int, n_free: Optional[int] = None, seed: int = 0,
                   shift: float = 0.05) -> TrescaToyProblem:
    """Toy contact problem on a grid of three-dof nodes.

    ``A`` couples neighbouring grid nodes through random SPD 3x3 blocks in a
    graph-Laplacian pattern, adds a random SPD block on every node and
    ``shift * I``; every row has at most 15 nonzeros. The first ``p`` nodes
    form the contact boundary. Normal loads are drawn from ``[-1.5, 0.75]`` and
    tangential loads get a push of magnitude ``[0.2, 1]``; ``F`` is drawn from
    ``[0.2, 1]`` and gaps from ``[0, 0.1]``.
    """
    if p < 1:
        raise ValueError("p must be at least 1")
    if n_free is None:
        n_free = 3 * p
    if n_free < 0:
        raise ValueError("n_free must be nonnegative")
    rng = make_rng(seed)
    n = 3 * p + n_free
    nodes = -(-n // 3)
    width = _grid_width(nodes)
    rows, cols, vals = [], [], []

    def add_block(i, j, K):
        for a in range(3):
            for c in range(3):
                ri, cj = 3 * i + a, 3 * j + c
                if ri < n and cj < n:
                    rows.append(ri)
                    cols.append(cj)
                    vals.append(K[a, c])

    for node in range(nodes):
        R = rng.standard_normal((3, 3))
        add_block(node, node, 0.1 * ((R @ R.T) / 3.0 + np.eye(3)))
        r, c = divmod(node, width)
        for nb in ((r, c + 1), (r + 1, c)):
            other = nb[0] * width + nb[1]
            if nb[1] >= width or other >= nodes:
                continue
            R = rng.standard_normal((3, 3))
            K = 0.5 * (R @ R.T) / 3.0 + np.eye(3)
            add_block(node, node, K)
            add_block(other, other, K)
            add_block(node, other, -K)
            add_block(other, node, -K)
    A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    A = (A + A.T) * 0.5 + shift * sp.identity(n, format="csr")
    A = A.tocsr()
    A.sum_duplicates()
    l = 0.2 * rng.standard_normal(n)
    blk = l[: 3 * p].reshape(p, 3)
    blk[:, 2] = rng.uniform(-1.5, 0.75, size=p)
    blk[:, :2] += rng.uniform(0.2, 1.0, size=(p, 2)) * rng.choice([-1.0, 1.0], size=(p, 2))
    l[: 3 * p] = blk.ravel()
    F = rng.uniform(0.2, 1.0, size=p)
    d = rng.uniform(0.0, 0.1, size=p)
    prob = TrescaToyProblem(A, l, p, F, d)
    _check_spd(A)
    return prob


def _check_spd(A: sp.csr_matrix, dense_limit: int = 1500) -> None:
    asym = abs(A - A.T)
    if asym.nnz and asym.max() > 1e-12:
        raise ValueError("generated matrix is not symmetric")
    if A.shape[0] <= dense_limit:
        lmin = float(np.linalg.eigvalsh(A.toarray())[0])
    else:
        lmin = float(spla.eigsh(A, k=1, which="SA", return_eigenvectors=False)[0])
    if not lmin > 0:
        raise ValueError(f"generated matrix is not positive definite (lambda_min={lmin:.3e})")

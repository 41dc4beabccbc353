"""Problem model and linear-operator plumbing shared by the solver modules.

Vectors are plain one-dimensional float arrays. Sparsity lives only inside
:class:`LinearOperator`, which wraps either a callable pair or an explicit
matrix (dense ``ndarray`` or coordinate-format sparse storage).
"""

from __future__ import annotations

import threading
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

__all__ = [
    "LinearOperator",
    "SmoothFunction",
    "LeastSquares",
    "QuadraticForm",
    "CompositeProblem",
    "as_vector",
    "lipschitz_estimate",
    "gradient_check",
]


def as_vector(v, n: Optional[int] = None, name: str = "vector") -> np.ndarray:
    """Return ``v`` as a finite 1-D float array, optionally checking its length."""
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if n is not None and arr.shape[0] != n:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected {n}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


class LinearOperator:
    """Real linear map ``R^cols -> R^rows`` with its adjoint.

    Parameters
    ----------
    shape : (int, int)
        ``(rows, cols)``.
    matvec, rmatvec : callable
        ``v -> A v`` and ``u -> A^T u``.
    matrix : ndarray or scipy.sparse matrix, optional
        Explicit representation. Sparse input is stored in coordinate form;
        a compressed-row view is built on first use.
    """

    def __init__(self, shape, matvec=None, rmatvec=None, matrix=None):
        self.shape = (int(shape[0]), int(shape[1]))
        self._dense = None
        self._coo = None
        self._csr = None
        self._csr_lock = threading.Lock()
        if matrix is not None:
            if sp.issparse(matrix):
                self._coo = sp.coo_matrix(matrix, dtype=float)
            else:
                self._dense = np.asarray(matrix, dtype=float)
                if self._dense.ndim != 2:
                    raise ValueError("explicit matrix must be two-dimensional")
            mshape = matrix.shape
            if tuple(mshape) != self.shape:
                raise ValueError(f"matrix shape {mshape} does not match {self.shape}")
        elif matvec is None or rmatvec is None:
            raise ValueError("need either an explicit matrix or matvec and rmatvec")
        self._matvec = matvec
        self._rmatvec = rmatvec

    # constructors -----------------------------------------------------------
    @classmethod
    def from_matrix(cls, matrix) -> "LinearOperator":
        return cls(matrix.shape, matrix=matrix)

    @classmethod
    def identity(cls, n: int) -> "LinearOperator":
        return cls((n, n), matrix=sp.identity(n, format="coo"))

    @classmethod
    def diagonal(cls, d) -> "LinearOperator":
        d = np.asarray(d, dtype=float)
        return cls((d.size, d.size), matrix=sp.diags(d, format="coo"))

    # properties -------------------------------------------------------------
    @property
    def rows(self) -> int:
        return self.shape[0]

    @property
    def cols(self) -> int:
        return self.shape[1]

    @property
    def is_explicit(self) -> bool:
        return self._dense is not None or self._coo is not None

    @property
    def is_dense(self) -> bool:
        return self._dense is not None

    @property
    def coo(self) -> Optional[sp.coo_matrix]:
        """Coordinate representation, or ``None`` for matrix-free operators."""
        if self._coo is not None:
            return self._coo
        if self._dense is not None:
            return sp.coo_matrix(self._dense)
        return None

    @property
    def matrix(self):
        """Explicit matrix: dense ndarray or CSR matrix; ``None`` if matrix-free."""
        if self._dense is not None:
            return self._dense
        if self._coo is None:
            return None
        if self._csr is None:
            with self._csr_lock:
                if self._csr is None:
                    self._csr = self._coo.tocsr()
        return self._csr

    def toarray(self) -> np.ndarray:
        if self._dense is not None:
            return self._dense.copy()
        if self._coo is not None:
            return self._coo.toarray()
        eye = np.eye(self.cols)
        return np.column_stack([self.apply(eye[:, j]) for j in range(self.cols)])

    # actions ----------------------------------------------------------------
    def apply(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.cols,):
            raise ValueError(f"operand has shape {v.shape}, operator expects ({self.cols},)")
        mat = self.matrix
        if mat is not None:
            return np.asarray(mat @ v, dtype=float)
        return np.asarray(self._matvec(v), dtype=float)

    def apply_adjoint(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.rows,):
            raise ValueError(f"operand has shape {u.shape}, adjoint expects ({self.rows},)")
        mat = self.matrix
        if mat is not None:
            return np.asarray(mat.T @ u, dtype=float)
        return np.asarray(self._rmatvec(u), dtype=float)

    def columns(self, idx) -> np.ndarray | sp.spmatrix:
        """Explicit column block ``A[:, idx]`` (requires an explicit matrix)."""
        mat = self.matrix
        if mat is None:
            raise ValueError("column extraction needs an explicit matrix")
        if sp.issparse(mat):
            return mat.tocsc()[:, idx]
        return mat[:, idx]

    def __matmul__(self, v):
        return self.apply(v)

    def __repr__(self):
        kind = "dense" if self.is_dense else ("sparse" if self._coo is not None else "matrix-free")
        return f"LinearOperator({self.rows}x{self.cols}, {kind})"


def lipschitz_estimate(op: LinearOperator, iters: int = 30, seed: int = 0) -> float:
    """Largest eigenvalue of ``A^T A`` by power iteration.

    Returns the Rayleigh quotient ``||A v||^2`` of the last normalised iterate,
    which never overestimates the true value. A zero operator gives 0.
    """
    if iters < 1:
        raise ValueError("iters must be at least 1")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.cols)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        av = op.apply(v)
        est = float(av @ av)
        w = op.apply_adjoint(av)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return est
        v = w / nw
    av = op.apply(v)
    return max(est, float(av @ av))


def selection_indices(basis):
    """Row indices if the sparse ``basis`` selects coordinates (one unit entry per column)."""
    if not sp.issparse(basis):
        return None
    csc = sp.csc_matrix(basis)
    m = csc.shape[1]
    if csc.nnz != m or not np.all(np.diff(csc.indptr) == 1) or not np.all(csc.data == 1.0):
        return None
    return csc.indices.copy()


class SmoothFunction:
    """Twice differentiable ``f`` given by callables.

    Subclasses override :meth:`value`, :meth:`gradient` and
    :meth:`hessian_action`. :meth:`bregman` returns
    ``f(z) - f(x) - <grad f(x), z - x>``; quadratic subclasses compute it
    without cancellation.
    """

    def __init__(self, dim: int, value=None, gradient=None, hessian_action=None,
                 lipschitz_hint: Optional[float] = None):
        self.dim = int(dim)
        self._value = value
        self._gradient = gradient
        self._hessian_action = hessian_action
        self._lipschitz = lipschitz_hint
        self._lip_lock = threading.Lock()

    def value(self, x) -> float:
        return float(self._value(x))

    def gradient(self, x) -> np.ndarray:
        return np.asarray(self._gradient(x), dtype=float)

    def hessian_action(self, x, v) -> np.ndarray:
        if self._hessian_action is None:
            raise NotImplementedError("no Hessian action supplied")
        return np.asarray(self._hessian_action(x, v), dtype=float)

    def bregman(self, x, z, grad_x=None, f_x=None) -> float:
        if grad_x is None:
            grad_x = self.gradient(x)
        if f_x is None:
            f_x = self.value(x)
        return self.value(z) - f_x - float(grad_x @ (z - x))

    def reduced_hessian(self, x, basis):
        """Explicit ``Z^T H Z`` for a sparse basis ``Z``, or ``None``."""
        return None

    def reduced_factor(self, x, basis):
        return None

    def reduced_hessian_diag(self, x, basis):
        """Diagonal of ``Z^T H Z`` when cheaply available, else ``None``."""
        return None

    def _estimate_lipschitz(self) -> float:
        raise NotImplementedError("no Lipschitz estimate available; pass lipschitz_hint")

    @property
    def lipschitz(self) -> float:
        """Estimate of Lip(grad f), computed once and cached."""
        if self._lipschitz is None:
            with self._lip_lock:
                if self._lipschitz is None:
                    self._lipschitz = float(self._estimate_lipschitz())
        return self._lipschitz


class LeastSquares(SmoothFunction):
    """``f(x) = 1/2 ||A x - b||^2``."""

    def __init__(self, A: LinearOperator, b, lipschitz_hint: Optional[float] = None):
        super().__init__(A.cols, lipschitz_hint=lipschitz_hint)
        self.A = A
        self.b = as_vector(b, A.rows, "b")

    def value(self, x) -> float:
        res = self.A.apply(x) - self.b
        return 0.5 * float(res @ res)

    def gradient(self, x) -> np.ndarray:
        return self.A.apply_adjoint(self.A.apply(x) - self.b)

    def value_and_gradient(self, x):
        res = self.A.apply(x) - self.b
        return 0.5 * float(res @ res), self.A.apply_adjoint(res)

    def hessian_action(self, x, v) -> np.ndarray:
        return self.A.apply_adjoint(self.A.apply(v))

    def bregman(self, x, z, grad_x=None, f_x=None) -> float:
        ad = self.A.apply(np.asarray(z) - np.asarray(x))
        return 0.5 * float(ad @ ad)

    def _columns(self, basis):
        if not self.A.is_explicit:
            return None
        idx = selection_indices(basis)
        if idx is not None:
            return self.A.columns(idx)
        return self.A.matrix @ basis

    def reduced_factor(self, x, basis):
        """``B = A Z`` with reduced Hessian ``B^T B``, or ``None`` if ``A`` is matrix-free."""
        return self._columns(basis)

    def reduced_hessian(self, x, basis):
        az = self._columns(basis)
        if az is None:
            return None
        if sp.issparse(az):
            return (az.T @ az).tocsr()
        return az.T @ az

    def reduced_hessian_diag(self, x, basis):
        az = self._columns(basis)
        if az is None:
            return None
        if sp.issparse(az):
            return np.asarray(az.multiply(az).sum(axis=0)).ravel()
        return np.einsum("ij,ij->j", az, az)

    def _estimate_lipschitz(self) -> float:
        return lipschitz_estimate(self.A, 30)


class QuadraticForm(SmoothFunction):
    """``f(x) = 1/2 x^T Q x - <c, x> + const`` with symmetric ``Q``."""

    def __init__(self, Q: LinearOperator, c, const: float = 0.0,
                 lipschitz_hint: Optional[float] = None):
        if Q.rows != Q.cols:
            raise ValueError("Q must be square")
        super().__init__(Q.cols, lipschitz_hint=lipschitz_hint)
        self.Q = Q
        self.c = as_vector(c, Q.cols, "c")
        self.const = float(const)

    @classmethod
    def shifted_norm(cls, center) -> "QuadraticForm":
        """``1/2 ||x - center||^2``."""
        center = as_vector(center)
        return cls(LinearOperator.identity(center.size), center,
                   const=0.5 * float(center @ center), lipschitz_hint=1.0)

    def value(self, x) -> float:
        return 0.5 * float(x @ self.Q.apply(x)) - float(self.c @ x) + self.const

    def gradient(self, x) -> np.ndarray:
        return self.Q.apply(x) - self.c

    def value_and_gradient(self, x):
        qx = self.Q.apply(x)
        return 0.5 * float(x @ qx) - float(self.c @ x) + self.const, qx - self.c

    def hessian_action(self, x, v) -> np.ndarray:
        return self.Q.apply(v)

    def bregman(self, x, z, grad_x=None, f_x=None) -> float:
        d = np.asarray(z) - np.asarray(x)
        return 0.5 * float(d @ self.Q.apply(d))

    def reduced_hessian(self, x, basis):
        mat = self.Q.matrix
        if mat is None:
            return None
        if sp.issparse(mat):
            return (basis.T @ mat @ basis).tocsr()
        return basis.T @ (mat @ basis)

    def reduced_hessian_diag(self, x, basis):
        red = self.reduced_hessian(x, basis)
        if red is None:
            return None
        return np.asarray(red.diagonal()).ravel()

    def _estimate_lipschitz(self) -> float:
        # Q symmetric: the top eigenvalue of Q^T Q is ||Q||^2.
        return float(np.sqrt(lipschitz_estimate(self.Q, 30)))


def gradient_check(f: SmoothFunction, x, h: float = 1e-6) -> float:
    """Max relative deviation between ``f.gradient`` and central differences."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=float)
    g = f.gradient(x)
    err = 0.0
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        fd = (f.value(x + e) - f.value(x - e)) / (2.0 * h)
        scale = max(1.0, abs(g[i]), abs(fd))
        err = max(err, abs(g[i] - fd) / scale)
    return err


class CompositeProblem:
    """``phi(x) = f(x) + g(x)`` with smooth ``f`` and prox-friendly ``g``."""

    def __init__(self, smooth: SmoothFunction, nonsmooth):
        if smooth.dim != nonsmooth.dim:
            raise ValueError(
                f"smooth part has dimension {smooth.dim}, nonsmooth part {nonsmooth.dim}")
        self.smooth = smooth
        self.nonsmooth = nonsmooth
        self.dim = smooth.dim

    def objective(self, x) -> float:
        return self.smooth.value(x) + self.nonsmooth.value(x)

    __call__ = objective

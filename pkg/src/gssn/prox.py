"""Nonsmooth terms with proximal mappings and SC-derivative elements.

Every catalog member is separable over small blocks, so an SC-derivative
element ``(P, W)`` is stored as groups of equally sized blocks. All members
shipped here produce diagonal 0/1 projections; the basis extraction still
handles general symmetric projection blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "GraphError",
    "BlockGroup",
    "ScdElement",
    "ProxFunction",
    "ZeroFunction",
    "L1Norm",
    "LqNorm",
    "L0Norm",
    "TrescaFriction",
    "SeparableSum",
    "prox_l1",
    "scd_l1",
    "prox_lhalf",
    "scd_lq",
    "prox_l0",
    "scd_l0",
    "prox_tresca_block",
    "scd_tresca_block",
    "separable_sum",
]

GRAPH_TOL = 1e-8


class GraphError(ValueError):
    """A point pair does not lie on the graph of the subdifferential."""


@dataclass(frozen=True)
class BlockGroup:
    """``nb`` blocks of size ``k``: ``index[b]`` are the coordinates of block ``b``."""

    index: np.ndarray  # (nb, k) int
    P: np.ndarray  # (nb, k, k)
    W: np.ndarray  # (nb, k, k)

    @classmethod
    def diagonal(cls, index, p, w) -> "BlockGroup":
        index = np.asarray(index, dtype=np.intp).reshape(-1, 1)
        p = np.asarray(p, dtype=float).reshape(-1, 1, 1)
        w = np.asarray(w, dtype=float).reshape(-1, 1, 1)
        return cls(index, p, w)

    @property
    def size(self) -> int:
        return self.index.shape[1]

    def remap(self, coords: np.ndarray) -> "BlockGroup":
        return BlockGroup(coords[self.index], self.P, self.W)


class ScdElement:
    """Block-diagonal pair ``(P, W)`` with ``P^2 = P`` and ``W (I - P) = I - P``."""

    def __init__(self, dim: int, groups: Sequence[BlockGroup]):
        self.dim = int(dim)
        self.groups = [g for g in groups if g.index.shape[0] > 0]

    @classmethod
    def diagonal(cls, p, w) -> "ScdElement":
        p = np.asarray(p, dtype=float)
        return cls(p.size, [BlockGroup.diagonal(np.arange(p.size), p, w)])

    def blocks(self):
        """Yield ``(index_set, P_block, W_block)`` for every block."""
        for g in self.groups:
            for b in range(g.index.shape[0]):
                yield g.index[b], g.P[b], g.W[b]

    def _assemble(self, attr: str) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        for g in self.groups:
            k = g.size
            mats = getattr(g, attr)
            rows.append(np.repeat(g.index, k, axis=1).ravel())
            cols.append(np.tile(g.index, (1, k)).ravel())
            vals.append(mats.reshape(mats.shape[0], -1).ravel())
        if not rows:
            return sp.csr_matrix((self.dim, self.dim))
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.dim, self.dim))

    @cached_property
    def P(self) -> sp.csr_matrix:
        return self._assemble("P")

    @cached_property
    def W(self) -> sp.csr_matrix:
        return self._assemble("W")

    @cached_property
    def basis(self) -> sp.csc_matrix:
        """Orthonormal basis ``Z`` of ``range P`` as an ``n x m`` sparse matrix."""
        rows, cols, vals = [], [], []
        m = 0
        for g in self.groups:
            nb, k = g.index.shape
            diag = g.P[:, np.arange(k), np.arange(k)]
            offdiag = g.P - diag[:, :, None] * np.eye(k)
            if not np.any(offdiag) and np.all((diag == 0.0) | (diag == 1.0)):
                b_idx, j_idx = np.nonzero(diag == 1.0)
                rows.append(g.index[b_idx, j_idx])
                vals.append(np.ones(b_idx.size))
                cols.append(m + np.arange(b_idx.size))
                m += b_idx.size
                continue
            evals, evecs = np.linalg.eigh(g.P)
            for b in range(nb):
                for j in np.nonzero(evals[b] > 0.5)[0]:
                    rows.append(g.index[b])
                    vals.append(evecs[b][:, j])
                    cols.append(np.full(k, m))
                    m += 1
        if m == 0:
            return sp.csc_matrix((self.dim, 0))
        return sp.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.dim, m))

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @cached_property
    def active_coordinates(self):
        """Coordinates spanned by ``Z`` when ``Z`` is a coordinate selection, else ``None``."""
        Z = self.basis
        if Z.nnz != Z.shape[1] or not np.all(Z.data == 1.0):
            return None
        return Z.indices.copy()

    def apply_p(self, v) -> np.ndarray:
        return self.P @ np.asarray(v, dtype=float)

    def apply_w(self, v) -> np.ndarray:
        return self.W @ np.asarray(v, dtype=float)

    def defects(self) -> dict:
        """Largest per-block violation of each defining identity (spectral norm)."""
        out = {"idempotent": 0.0, "p_symmetric": 0.0, "w_symmetric": 0.0, "w_complement": 0.0}
        for g in self.groups:
            k = g.size
            eye = np.eye(k)
            P, W = g.P, g.W
            comp = eye - P
            pairs = {
                "idempotent": P @ P - P,
                "p_symmetric": P - np.swapaxes(P, 1, 2),
                "w_symmetric": W - np.swapaxes(W, 1, 2),
                "w_complement": W @ comp - comp,
            }
            for key, mat in pairs.items():
                out[key] = max(out[key], float(np.max(np.linalg.norm(mat, ord=2, axis=(1, 2)))))
        return out


class ProxFunction:
    """Base class of the catalog.

    Attributes
    ----------
    dim : int
    prox_bound_threshold : float
        Threshold of prox-boundedness; every member here is nonnegative,
        hence bounded for all step sizes.
    """

    prox_bound_threshold = math.inf
    power = None  # exponent q for the l_q family, used by the damping rule

    def __init__(self, dim: int):
        self.dim = int(dim)

    def value(self, x) -> float:
        raise NotImplementedError

    def prox(self, lam: float, x) -> np.ndarray:
        raise NotImplementedError

    def scd_element(self, z, zstar) -> ScdElement:
        raise NotImplementedError

    def graph_residual(self, z, zstar) -> float:
        """Distance-like measure of ``zstar`` from ``partial g(z)``; 0 on the graph."""
        raise NotImplementedError

    def __call__(self, x) -> float:
        return self.value(x)


def _check_positive(**kw):
    for name, val in kw.items():
        if not val > 0:
            raise ValueError(f"{name} must be positive, got {val}")


# ---------------------------------------------------------------------------
# zero function


class ZeroFunction(ProxFunction):
    def value(self, x) -> float:
        return 0.0

    def prox(self, lam, x):
        return np.array(x, dtype=float)

    def scd_element(self, z, zstar):
        n = self.dim
        return ScdElement.diagonal(np.ones(n), np.zeros(n))

    def graph_residual(self, z, zstar):
        zstar = np.asarray(zstar, dtype=float)
        return float(np.max(np.abs(zstar), initial=0.0))


# ---------------------------------------------------------------------------
# l1


def prox_l1(mu: float, lam: float, x) -> np.ndarray:
    """Soft thresholding at level ``lam * mu``."""
    _check_positive(mu=mu, lam=lam)
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - lam * mu, 0.0)


def _l1_graph_residual(mu, z, zstar):
    z = np.asarray(z, dtype=float)
    zstar = np.asarray(zstar, dtype=float)
    nz = z != 0
    res = np.where(nz, np.abs(zstar - mu * np.sign(z)), np.maximum(np.abs(zstar) - mu, 0.0))
    return float(np.max(res, initial=0.0))


def scd_l1(mu: float, z, zstar) -> ScdElement:
    z = np.asarray(z, dtype=float)
    res = _l1_graph_residual(mu, z, zstar)
    if res > GRAPH_TOL:
        raise GraphError(f"(z, z*) off the graph of the l1 subdifferential by {res:.3e}")
    p = (z != 0).astype(float)
    return ScdElement.diagonal(p, 1.0 - p)


class L1Norm(ProxFunction):
    """``mu * ||x||_1``."""

    power = 1.0

    def __init__(self, mu: float, dim: int):
        super().__init__(dim)
        _check_positive(mu=mu)
        self.mu = float(mu)

    def value(self, x):
        return self.mu * float(np.sum(np.abs(x)))

    def prox(self, lam, x):
        return prox_l1(self.mu, lam, x)

    def scd_element(self, z, zstar):
        return scd_l1(self.mu, z, zstar)

    def graph_residual(self, z, zstar):
        return _l1_graph_residual(self.mu, z, zstar)


# ---------------------------------------------------------------------------
# l_q, 0 < q < 1


def prox_lhalf(mu: float, lam: float, x) -> np.ndarray:
    """Global minimiser of ``(s - x)^2 / (2 lam) + mu |s|^(1/2)`` per coordinate.

    Closed-form half thresholding: with ``t = lam * mu`` the nonzero branch is
    the largest real root of the cubic stationarity condition in ``sqrt|s|``,
    taken when ``|x| > 1.5 t^(2/3)``. Ties go to 0.
    """
    _check_positive(mu=mu, lam=lam)
    x = np.asarray(x, dtype=float)
    t = lam * mu
    ax = np.abs(x)
    out = np.zeros_like(x)
    big = ax > 1.5 * t ** (2.0 / 3.0)
    if np.any(big):
        axb = ax[big]
        arg = np.minimum((t / 4.0) * (axb / 3.0) ** -1.5, 1.0)
        phi = np.arccos(arg)
        s = (2.0 / 3.0) * axb * (1.0 + np.cos(2.0 * np.pi / 3.0 - 2.0 * phi / 3.0))
        # keep the nonzero root only where it strictly beats s = 0
        gain = 0.5 * axb ** 2 - (0.5 * (s - axb) ** 2 + t * np.sqrt(s))
        out[big] = np.where(gain > 0.0, np.sign(x[big]) * s, 0.0)
    return out


def _lq_graph_residual(mu, q, z, zstar):
    z = np.asarray(z, dtype=float)
    zstar = np.asarray(zstar, dtype=float)
    nz = z != 0
    if not np.any(nz):
        return 0.0
    az = np.abs(z[nz])
    target = mu * q * az ** (q - 1.0) * np.sign(z[nz])
    return float(np.max(np.abs(zstar[nz] - target) / np.maximum(1.0, np.abs(target))))


def scd_lq(mu: float, q: float, z, zstar) -> ScdElement:
    """Diagonal element ``(1, mu q (q-1) |z_i|^(q-2))`` on the support, ``(0, 1)`` off it."""
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    z = np.asarray(z, dtype=float)
    nz = z != 0
    p = nz.astype(float)
    w = np.ones_like(z)
    w[nz] = mu * q * (q - 1.0) * np.abs(z[nz]) ** (q - 2.0)
    return ScdElement.diagonal(p, w)


class LqNorm(ProxFunction):
    """``mu * sum |x_i|^q``; the prox is implemented for ``q = 1/2``."""

    def __init__(self, mu: float, dim: int, q: float = 0.5):
        super().__init__(dim)
        _check_positive(mu=mu)
        if not 0.0 < q < 1.0:
            raise ValueError("q must lie in (0, 1)")
        self.mu = float(mu)
        self.q = float(q)
        self.power = self.q

    def value(self, x):
        return self.mu * float(np.sum(np.abs(x) ** self.q))

    def prox(self, lam, x):
        if self.q != 0.5:
            raise NotImplementedError("closed-form prox available for q = 1/2 only")
        return prox_lhalf(self.mu, lam, x)

    def scd_element(self, z, zstar):
        return scd_lq(self.mu, self.q, z, zstar)

    def graph_residual(self, z, zstar):
        return _lq_graph_residual(self.mu, self.q, z, zstar)


# ---------------------------------------------------------------------------
# l0


def prox_l0(mu: float, lam: float, x) -> np.ndarray:
    """Hard thresholding: keep ``x_i`` iff ``x_i^2 > 2 lam mu``."""
    _check_positive(mu=mu, lam=lam)
    x = np.asarray(x, dtype=float)
    return np.where(x * x > 2.0 * lam * mu, x, 0.0)


def _l0_graph_residual(z, zstar):
    z = np.asarray(z, dtype=float)
    zstar = np.asarray(zstar, dtype=float)
    res = np.where(z != 0, np.abs(zstar), 0.0)
    return float(np.max(res, initial=0.0))


def scd_l0(mu: float, z, zstar) -> ScdElement:
    """Same 0/1 structure as l1. At ``(0, 0)`` the inactive element is selected."""
    z = np.asarray(z, dtype=float)
    res = _l0_graph_residual(z, zstar)
    if res > GRAPH_TOL:
        raise GraphError(f"(z, z*) off the graph of the l0 subdifferential by {res:.3e}")
    p = (z != 0).astype(float)
    return ScdElement.diagonal(p, 1.0 - p)


class L0Norm(ProxFunction):
    """``mu * #{i : x_i != 0}``."""

    def __init__(self, mu: float, dim: int):
        super().__init__(dim)
        _check_positive(mu=mu)
        self.mu = float(mu)

    def value(self, x):
        return self.mu * float(np.count_nonzero(x))

    def prox(self, lam, x):
        return prox_l0(self.mu, lam, x)

    def scd_element(self, z, zstar):
        return scd_l0(self.mu, z, zstar)

    def graph_residual(self, z, zstar):
        return _l0_graph_residual(z, zstar)


# ---------------------------------------------------------------------------
# Tresca friction blocks


def _split_tresca(F, d, v):
    F = np.asarray(F, dtype=float).ravel()
    d = np.asarray(d, dtype=float).ravel()
    v = np.asarray(v, dtype=float)
    p = F.size
    if d.size != p:
        raise ValueError("F and d must have one entry per contact node")
    if v.size < 3 * p:
        raise ValueError(f"vector of length {v.size} too short for {p} contact blocks")
    return F, d, v[: 3 * p].reshape(p, 3), v[3 * p:]


def prox_tresca_block(F, d, lam: float, v) -> np.ndarray:
    """Prox of ``sum_i F_i ||v^i_12|| + indicator(v^i_3 + d_i >= 0)``; the free tail is copied."""
    _check_positive(lam=lam)
    F, d, blk, tail = _split_tresca(F, d, v)
    t = blk[:, :2]
    nt = np.linalg.norm(t, axis=1)
    thr = lam * F
    scale = np.zeros_like(nt)
    slip = nt > thr
    scale[slip] = 1.0 - thr[slip] / nt[slip]
    out = np.empty_like(blk)
    out[:, :2] = scale[:, None] * t
    out[:, 2] = np.maximum(blk[:, 2], -d)
    return np.concatenate([out.ravel(), tail])


def _tresca_graph_residual(F, d, z, zstar):
    F, d, zb, ztail = _split_tresca(F, d, z)
    _, _, sb, stail = _split_tresca(F, d, zstar)
    res = [np.max(np.abs(stail), initial=0.0)]
    t, st = zb[:, :2], sb[:, :2]
    nt = np.linalg.norm(t, axis=1)
    slip = nt > 0
    if np.any(slip):
        target = F[slip, None] * t[slip] / nt[slip, None]
        res.append(np.max(np.abs(st[slip] - target)))
    if np.any(~slip):
        res.append(np.max(np.maximum(np.linalg.norm(st[~slip], axis=1) - F[~slip], 0.0)))
    gap = zb[:, 2] + d
    if np.any(gap < 0):
        return math.inf
    free = gap > 0
    res.append(np.max(np.where(free, np.abs(sb[:, 2]), np.maximum(sb[:, 2], 0.0)), initial=0.0))
    return float(max(res))


def scd_tresca_block(F, d, z, zstar) -> ScdElement:
    F, d, zb, ztail = _split_tresca(F, d, z)
    res = _tresca_graph_residual(F, d, z, zstar)
    if res > GRAPH_TOL:
        raise GraphError(f"(z, z*) off the graph of the Tresca subdifferential by {res:.3e}")
    p = F.size
    nodes = np.arange(p)
    t = zb[:, :2]
    nt = np.linalg.norm(t, axis=1)
    slip = nt > 0
    Pt = np.zeros((p, 2, 2))
    Wt = np.tile(np.eye(2), (p, 1, 1))
    Pt[slip] = np.eye(2)
    u = t[slip] / nt[slip, None]
    Wt[slip] = (F[slip] / nt[slip])[:, None, None] * (np.eye(2) - u[:, :, None] * u[:, None, :])
    tang = BlockGroup(np.stack([3 * nodes, 3 * nodes + 1], axis=1), Pt, Wt)
    free = zb[:, 2] + d > 0
    normal = BlockGroup.diagonal(3 * nodes + 2, free.astype(float), (~free).astype(float))
    groups = [tang, normal]
    if ztail.size:
        groups.append(BlockGroup.diagonal(3 * p + np.arange(ztail.size),
                                          np.ones(ztail.size), np.zeros(ztail.size)))
    return ScdElement(3 * p + ztail.size, groups)


class TrescaFriction(ProxFunction):
    """Friction and gap terms on ``p`` contact blocks of three, plus ``n_free`` free coordinates."""

    def __init__(self, F, d, n_free: int = 0):
        self.F = np.asarray(F, dtype=float).ravel()
        self.d = np.asarray(d, dtype=float).ravel()
        if np.any(self.F < 0):
            raise ValueError("friction coefficients must be nonnegative")
        if self.d.size != self.F.size:
            raise ValueError("F and d must have equal length")
        self.n_contact = self.F.size
        self.n_free = int(n_free)
        super().__init__(3 * self.n_contact + self.n_free)

    def value(self, x):
        blk = np.asarray(x, dtype=float)[: 3 * self.n_contact].reshape(-1, 3)
        if np.any(blk[:, 2] + self.d < 0):
            return math.inf
        return float(self.F @ np.linalg.norm(blk[:, :2], axis=1))

    def prox(self, lam, x):
        return prox_tresca_block(self.F, self.d, lam, x)

    def scd_element(self, z, zstar):
        return scd_tresca_block(self.F, self.d, z, zstar)

    def graph_residual(self, z, zstar):
        return _tresca_graph_residual(self.F, self.d, z, zstar)


# ---------------------------------------------------------------------------
# direct sums


class SeparableSum(ProxFunction):
    """Direct sum of catalog members acting on disjoint coordinate sets."""

    def __init__(self, parts):
        parts = [(np.asarray(idx, dtype=np.intp).ravel(), fn) for idx, fn in parts]
        if not parts:
            raise ValueError("need at least one part")
        for idx, fn in parts:
            if idx.size != fn.dim:
                raise ValueError(f"index set of size {idx.size} for a term of dimension {fn.dim}")
        allidx = np.concatenate([idx for idx, _ in parts])
        n = allidx.size
        if np.unique(allidx).size != n:
            raise ValueError("index sets overlap")
        if allidx.min() != 0 or allidx.max() != n - 1:
            raise ValueError("index sets do not cover 0..n-1")
        super().__init__(n)
        self.parts = parts
        self.prox_bound_threshold = min(fn.prox_bound_threshold for _, fn in parts)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return float(sum(fn.value(x[idx]) for idx, fn in self.parts))

    def prox(self, lam, x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        for idx, fn in self.parts:
            out[idx] = fn.prox(lam, x[idx])
        return out

    def scd_element(self, z, zstar):
        z = np.asarray(z, dtype=float)
        zstar = np.asarray(zstar, dtype=float)
        groups = []
        for idx, fn in self.parts:
            elem = fn.scd_element(z[idx], zstar[idx])
            groups.extend(g.remap(idx) for g in elem.groups)
        return ScdElement(self.dim, groups)

    def graph_residual(self, z, zstar):
        z = np.asarray(z, dtype=float)
        zstar = np.asarray(zstar, dtype=float)
        return float(max(fn.graph_residual(z[idx], zstar[idx]) for idx, fn in self.parts))


def separable_sum(parts) -> SeparableSum:
    return SeparableSum(parts)

"""Forward-backward step, envelope value, descent test and residual."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .core import CompositeProblem

__all__ = ["FbStep", "forward_backward", "psi_fb", "descent_ok", "residual", "subgradients"]


@dataclass(frozen=True, eq=False)
class FbStep:
    """One forward-backward evaluation ``z in T_lam(x)`` and derived quantities.

    ``z*_g = -grad f(x) - (z - x)/lam`` is a subgradient of ``g`` at ``z`` and
    ``z* = grad f(z) + z*_g`` one of ``phi``. Quantities at ``z`` are computed
    on first access.
    """

    problem: CompositeProblem
    x: np.ndarray
    lam: float
    z: np.ndarray
    f_x: float
    grad_x: np.ndarray
    g_z: float

    @cached_property
    def diff(self) -> np.ndarray:
        return self.z - self.x

    @cached_property
    def dist_sq(self) -> float:
        d = self.diff
        return float(d @ d)

    @property
    def step_norm(self) -> float:
        return math.sqrt(self.dist_sq)

    @cached_property
    def eta(self) -> float:
        return self.dist_sq / (2.0 * self.lam)

    @cached_property
    def phi_fb(self) -> float:
        """Envelope value ``psi_lam(x, z)``."""
        if not math.isfinite(self.g_z):
            return math.inf
        return self.f_x + float(self.grad_x @ self.diff) + self.eta + self.g_z

    @cached_property
    def bregman(self) -> float:
        """``f(z) - l_f(x, z)``."""
        return self.problem.smooth.bregman(self.x, self.z, grad_x=self.grad_x, f_x=self.f_x)

    @cached_property
    def f_z(self) -> float:
        return self.problem.smooth.value(self.z)

    @cached_property
    def phi_z(self) -> float:
        return self.f_z + self.g_z

    @cached_property
    def grad_z(self) -> np.ndarray:
        return self.problem.smooth.gradient(self.z)

    @cached_property
    def zstar_g(self) -> np.ndarray:
        return -self.grad_x - self.diff / self.lam

    @cached_property
    def zstar(self) -> np.ndarray:
        return self.grad_z + self.zstar_g

    @property
    def residual(self) -> float:
        return residual(self)


def forward_backward(problem: CompositeProblem, x, lam: float) -> FbStep:
    """Evaluate ``z = prox_{lam g}(x - lam grad f(x))``."""
    if not lam > 0:
        raise ValueError("lam must be positive")
    if lam >= problem.nonsmooth.prox_bound_threshold:
        raise ValueError("lam must stay below the prox-boundedness threshold")
    x = np.asarray(x, dtype=float)
    smooth = problem.smooth
    if hasattr(smooth, "value_and_gradient"):
        f_x, grad_x = smooth.value_and_gradient(x)
    else:
        f_x, grad_x = smooth.value(x), smooth.gradient(x)
    if not np.all(np.isfinite(grad_x)):
        raise FloatingPointError("non-finite gradient")
    z = problem.nonsmooth.prox(lam, x - lam * grad_x)
    return FbStep(problem, x, float(lam), z, float(f_x), grad_x, problem.nonsmooth.value(z))


def psi_fb(problem: CompositeProblem, x, z, lam: float) -> float:
    """``f(x) + <grad f(x), z - x> + ||z - x||^2/(2 lam) + g(z)``, possibly ``+inf``."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    gz = problem.nonsmooth.value(z)
    if not math.isfinite(gz):
        return math.inf
    d = z - x
    return (problem.smooth.value(x) + float(problem.smooth.gradient(x) @ d)
            + float(d @ d) / (2.0 * lam) + gz)


def descent_ok(problem: CompositeProblem, step: FbStep, alpha: float) -> bool:
    """``f(z) <= l_f(x, z) + alpha ||z - x||^2 / (2 lam)``."""
    return step.bregman <= alpha * step.eta


def residual(step: FbStep) -> float:
    """``(1 + 1/lam) ||x - z||``."""
    return (1.0 + 1.0 / step.lam) * step.step_norm


def subgradients(step: FbStep):
    """Return ``(z*_g, z*)``."""
    return step.zstar_g, step.zstar

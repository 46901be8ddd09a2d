"""Canonical-link GLM machinery: cumulant functions, deviance loss, Newton solver.

The loss minimised throughout the package is the per-row deviance
``b(x'beta) - y * x'beta`` where ``b`` is the cumulant function of the family.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import InsufficientDataError, SingularDesignError

BINOMIAL_CLIP = 1e-6
_RANK_TOL = 1e-10


@dataclass(frozen=True)
class GlmFamily:
    """Exponential family with canonical link, described by its cumulant ``b``."""

    kind: Literal["gaussian", "binomial"]

    def b(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "gaussian":
            return 0.5 * t * t
        # log(1 + e^t) = max(t, 0) + log1p(e^{-|t|}) avoids overflow for large |t|
        return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))

    def b_prime(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "gaussian":
            return t.copy()
        out = np.empty_like(t)
        pos = t >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
        et = np.exp(t[~pos])
        out[~pos] = et / (1.0 + et)
        return out

    def b_double_prime(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "gaussian":
            return np.ones_like(t)
        mu = self.b_prime(t)
        return mu * (1.0 - mu)

    def clip_response(self, q):
        """Clamp imputed responses into the family's mean space."""
        q = np.asarray(q, dtype=float)
        if self.kind == "binomial":
            return np.clip(q, BINOMIAL_CLIP, 1.0 - BINOMIAL_CLIP)
        return q


GAUSSIAN = GlmFamily("gaussian")
BINOMIAL = GlmFamily("binomial")


def get_family(name: str | GlmFamily) -> GlmFamily:
    if isinstance(name, GlmFamily):
        return name
    try:
        return {"gaussian": GAUSSIAN, "binomial": BINOMIAL}[name.lower()]
    except KeyError:
        raise ValueError(f"unknown family {name!r}; expected 'gaussian' or 'binomial'") from None


@dataclass(frozen=True)
class GlmFit:
    beta: np.ndarray
    converged: bool
    iterations: int
    final_gradient_norm: float


def deviance_loss(x_row, y, beta, family: GlmFamily) -> float:
    """Deviance ``b(x'beta) - y x'beta`` of a single observation."""
    eta = float(np.dot(x_row, beta))
    return float(family.b(np.array([eta]))[0] - y * eta)


def mean_deviance(x, y, beta, family: GlmFamily) -> float:
    eta = np.asarray(x) @ np.asarray(beta)
    return float(np.mean(family.b(eta) - np.asarray(y) * eta))


def deviance_gradient(x, y, beta, family: GlmFamily) -> np.ndarray:
    """Gradient of the mean deviance, ``E_n[(b'(X'beta) - Y) X]``."""
    eta = x @ beta
    return x.T @ (family.b_prime(eta) - y) / x.shape[0]


def check_design(x: np.ndarray) -> None:
    n, p = x.shape
    if n <= p:
        raise InsufficientDataError(f"need n > p, got n={n}, p={p}")
    s = np.linalg.svd(x / np.sqrt(n), compute_uv=False)
    if s[-1] <= _RANK_TOL * max(s[0], 1.0):
        raise SingularDesignError(f"design is rank deficient (smallest singular value {s[-1]:.3g})")


def _newton(x, y, family, tol, max_iter, beta0=None) -> GlmFit:
    n, p = x.shape
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float)
    obj = mean_deviance(x, y, beta, family)
    grad = deviance_gradient(x, y, beta, family)
    gnorm = float(np.max(np.abs(grad)))
    it = 0
    while gnorm > tol and it < max_iter:
        it += 1
        w = family.b_double_prime(x @ beta)
        hess = (x * w[:, None]).T @ x / n
        try:
            step = np.linalg.solve(hess, grad)
            if not np.all(np.isfinite(step)) or np.linalg.cond(hess) > 1e14:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            # Hessian numerically singular (e.g. separated data): plain gradient step
            step = grad
        t = 1.0
        while True:
            cand = beta - t * step
            cand_obj = mean_deviance(x, y, cand, family)
            if np.isfinite(cand_obj) and cand_obj <= obj + 1e-12 * abs(obj):
                break
            t *= 0.5
            if t < 1e-10:
                cand, cand_obj = beta, obj
                break
        if cand is beta:
            break
        beta, obj = cand, cand_obj
        grad = deviance_gradient(x, y, beta, family)
        gnorm = float(np.max(np.abs(grad)))
    if gnorm <= tol and it > 0:
        # one extra Newton step: the stopping rule is on the gradient, this
        # pushes the coefficients themselves to working precision
        w = family.b_double_prime(x @ beta)
        try:
            cand = beta - np.linalg.solve((x * w[:, None]).T @ x / n, grad)
        except np.linalg.LinAlgError:
            cand = beta
        cand_grad = deviance_gradient(x, y, cand, family)
        if np.all(np.isfinite(cand)) and np.max(np.abs(cand_grad)) < gnorm:
            beta, gnorm = cand, float(np.max(np.abs(cand_grad)))
    return GlmFit(beta=beta, converged=gnorm <= tol, iterations=it, final_gradient_norm=gnorm)


def minimize_deviance(x, target, family: GlmFamily, tol: float = 1e-8, max_iter: int = 100,
                      beta0=None) -> GlmFit:
    """Minimise ``E_n[b(X'beta) - target X'beta]`` for an arbitrary real target.

    Unlike :func:`fit_glm_imputed` the target is not clipped, which is what
    pseudo-outcome (AIPW) solvers need.
    """
    x = np.asarray(x, dtype=float)
    target = np.asarray(target, dtype=float)
    if x.shape[0] != target.shape[0]:
        raise ValueError("x and response have different row counts")
    check_design(x)
    return _newton(x, target, family, tol, max_iter, beta0=beta0)


def fit_glm(x, y, family: GlmFamily, tol: float = 1e-8, max_iter: int = 100) -> GlmFit:
    """Deviance minimiser on fully observed ``(x, y)``.

    Non-convergence is reported through ``GlmFit.converged`` and never raised.
    """
    return minimize_deviance(x, y, family, tol=tol, max_iter=max_iter)


def fit_glm_imputed(x, q_hat, family: GlmFamily, tol: float = 1e-8, max_iter: int = 100) -> GlmFit:
    """Fit the GLM with the outcome replaced by imputed conditional means ``q_hat``.

    For the binomial family ``q_hat`` is clipped to ``[1e-6, 1 - 1e-6]`` first.
    """
    q = np.asarray(q_hat, dtype=float)
    if not np.all(np.isfinite(q)):
        raise ValueError("q_hat contains non-finite values")
    return minimize_deviance(x, family.clip_response(q), family, tol=tol, max_iter=max_iter)

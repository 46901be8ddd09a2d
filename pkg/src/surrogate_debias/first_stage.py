"""First step: surrogate-assisted imputation, initial fit and projection vector."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InsufficientDataError, SingularDesignError
from .glm import GlmFamily, fit_glm_imputed
from .kernels import SmootherFit, default_bandwidth, nw_fit, nw_predict
from .sdr import ReducedBasis, augment, estimate_subspace, select_dimension

RIDGE = 1e-10
DEFAULT_D_MAX = 3


@dataclass(frozen=True)
class Dataset:
    """Observed data ``(X, Z, R, RY)``.

    ``y`` may hold anything (including NaN) where ``r == 0``; those entries are
    never read. ``z=None`` is the surrogate-free variant.
    """

    x: np.ndarray
    z: np.ndarray | None
    r: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        r = np.asarray(self.r).astype(int).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        if x.ndim != 2:
            raise ValueError("x must be 2-d")
        n = x.shape[0]
        if r.shape[0] != n or y.shape[0] != n:
            raise ValueError("x, r and y must have the same number of rows")
        if not np.isin(r, (0, 1)).all():
            raise ValueError("r must be binary")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "y", y)
        if self.z is not None:
            z = np.asarray(self.z, dtype=float).ravel()
            if z.shape[0] != n:
                raise ValueError("z must have one entry per row")
            object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def observed(self) -> np.ndarray:
        return self.r == 1

    @property
    def xt(self) -> np.ndarray:
        return augment(self.x, self.z)

    def y_filled(self, fill: float = 0.0) -> np.ndarray:
        """Outcome with unobserved entries replaced by ``fill``."""
        return np.where(self.observed, self.y, fill)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.x[idx], None if self.z is None else self.z[idx], self.r[idx], self.y[idx])

    def without_surrogate(self) -> "Dataset":
        return Dataset(self.x, None, self.r, self.y)

    def check_observed(self) -> None:
        n_obs = int(self.r.sum())
        if n_obs < self.p + 2:
            raise InsufficientDataError(f"{n_obs} observed rows; need at least {self.p + 2}")


@dataclass(frozen=True)
class FirstStageFit:
    basis: ReducedBasis
    g_hat: SmootherFit
    q_hat: np.ndarray
    beta_init: np.ndarray
    v_hat: np.ndarray
    target_index: int
    diagnostics: Counter = field(default_factory=Counter, compare=False)

    @property
    def d(self) -> int:
        return self.basis.d

    def for_target(self, target_index: int, x, family: GlmFamily) -> "FirstStageFit":
        """Same imputation and initial fit, projection vector for another coordinate."""
        v = projection_vector(x, self.beta_init, family, target_index)
        return replace(self, v_hat=v, target_index=target_index)


def projection_vector(x, beta, family: GlmFamily, target_index: int) -> np.ndarray:
    """``v = (1, -w)`` placed so that ``v[target_index] == 1``.

    ``w`` is the ``b''(X'beta)``-weighted least-squares coefficient of the target
    column on the remaining columns, computed over all rows.
    """
    x = np.asarray(x, dtype=float)
    n, p = x.shape
    if not 0 <= target_index < p:
        raise IndexError(f"target_index {target_index} out of range for p={p}")
    wts = family.b_double_prime(x @ beta)
    rest = np.delete(np.arange(p), target_index)
    xr = x[:, rest]
    gram = (xr * wts[:, None]).T @ xr / n
    rhs = (xr * wts[:, None]).T @ x[:, target_index] / n
    v = np.zeros(p)
    v[target_index] = 1.0
    if rest.size == 0:
        return v
    ev = np.linalg.eigvalsh(gram)
    if ev[0] <= 1e-12 * max(ev[-1], 1e-300):
        raise SingularDesignError("weighted design for the projection vector is singular")
    w = np.linalg.solve(gram + RIDGE * np.eye(rest.size), rhs)
    v[rest] = -w
    return v


def fit_imputation(data: Dataset, d: int, bandwidth: float | None = None) -> tuple[ReducedBasis, SmootherFit]:
    """Central subspace and Nadaraya-Watson link on the observed rows."""
    data.check_observed()
    obs = data.observed
    xt = data.xt
    basis = estimate_subspace(xt[obs], data.y[obs], d)
    u = basis.project(xt[obs])
    h = default_bandwidth(u) if bandwidth is None else bandwidth
    return basis, nw_fit(u, data.y[obs], h)


def choose_dimension(data: Dataset, d_max: int = DEFAULT_D_MAX, n_folds: int = 5, seed=0) -> int:
    data.check_observed()
    obs = data.observed
    xt = data.xt
    return select_dimension(xt[obs], data.y[obs], min(d_max, xt.shape[1]), n_folds, seed)


def fit_first_stage(data: Dataset, family: GlmFamily, target_index: int = 0, d: int | None = None,
                    q_override=None, d_max: int = DEFAULT_D_MAX) -> FirstStageFit:
    """Subspace, imputation model, initial coefficients and projection vector.

    ``q_override`` substitutes the imputed responses (a hook used to check the
    pipeline against full-data fits).
    """
    if not 0 <= target_index < data.p:
        raise IndexError(f"target_index {target_index} out of range for p={data.p}")
    if d is None:
        d = choose_dimension(data, d_max)
    basis, g_hat = fit_imputation(data, d)
    diag = Counter()
    if q_override is None:
        q_hat = family.clip_response(nw_predict(g_hat, basis.project(data.xt), diag))
    else:
        q_hat = family.clip_response(np.asarray(q_override, dtype=float))
    if not np.all(np.isfinite(q_hat)):
        raise ValueError("imputed responses are not finite")
    beta = fit_glm_imputed(data.x, q_hat, family).beta
    v_hat = projection_vector(data.x, beta, family, target_index)
    return FirstStageFit(basis, g_hat, q_hat, beta, v_hat, target_index, diag)


def refit_g_excluding(data: Dataset, basis: ReducedBasis, fold, bandwidth: float | None = None) -> SmootherFit:
    """Link refit on observed rows outside ``fold``; the basis is kept fixed.

    ``bandwidth`` defaults to the rule-of-thumb value on all observed rows, i.e.
    the bandwidth the first-stage link was fitted with.
    """
    if bandwidth is None:
        bandwidth = default_bandwidth(basis.project(data.xt[data.observed]))
    train = data.observed.copy()
    train[np.asarray(fold, dtype=int)] = False
    if not train.any():
        raise InsufficientDataError("no observed rows outside the fold")
    return nw_fit(basis.project(data.xt[train]), data.y[train], bandwidth)

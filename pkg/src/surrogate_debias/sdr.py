"""Sliced inverse regression for the central subspace of Y given (Z, X).

The basis is expressed in per-coordinate standardised units, so rescaling a
column of the predictors leaves its span unchanged. ``ReducedBasis.project``
maps raw predictor rows to the reduced coordinates used by the smoothers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, SingularDesignError
from .kernels import default_bandwidth, nw_fit, nw_predict

_ZERO_VAR = 1e-12
_EIG_TOL = 1e-10


@dataclass(frozen=True)
class ReducedBasis:
    gamma: np.ndarray          # (p+1) x d, orthonormal in standardised units
    d: int
    eigenvalues: np.ndarray    # top-d SIR eigenvalues, descending
    mean: np.ndarray
    scale: np.ndarray          # per-coordinate sd; inf marks a dropped constant column
    whitening: np.ndarray      # inverse square root of the correlation of kept columns

    def standardize(self, xt) -> np.ndarray:
        return (np.asarray(xt, dtype=float) - self.mean) / self.scale

    def project(self, xt) -> np.ndarray:
        """Reduced coordinates ``gamma' standardize(xt)``, shape ``(n, d)``."""
        return self.standardize(xt) @ self.gamma

    def directions(self) -> np.ndarray:
        """Orthonormal basis of the same index space in raw predictor units."""
        raw = self.gamma / self.scale[:, None]
        q, _ = np.linalg.qr(raw)
        return q

    def projector(self) -> np.ndarray:
        return self.gamma @ self.gamma.T


def augment(x, z=None) -> np.ndarray:
    """Stack the surrogate in front of the covariates; ``z=None`` returns ``x``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError("x must be a 2-d array")
    if z is None:
        return x.copy()
    z = np.asarray(z, dtype=float).ravel()
    if z.shape[0] != x.shape[0]:
        raise ValueError(f"z has {z.shape[0]} rows, x has {x.shape[0]}")
    return np.column_stack([z, x]) if x.shape[0] else np.empty((0, x.shape[1] + 1))


def _slice_labels(y: np.ndarray, n_slices: int) -> np.ndarray:
    levels = np.unique(y)
    if levels.size <= n_slices:
        return np.searchsorted(levels, y)
    labels = np.empty(y.shape[0], dtype=int)
    order = np.argsort(y, kind="stable")
    for h, chunk in enumerate(np.array_split(order, n_slices)):
        labels[chunk] = h
    return labels


def _sign_fix(vecs: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def default_slices(y) -> int:
    return 2 if np.unique(y).size <= 2 else 10


def estimate_subspace(xt, y, d: int, n_slices: int | None = None) -> ReducedBasis:
    """Slice-mean SIR estimate of a ``d``-dimensional central subspace.

    Binary responses are sliced by class; otherwise ``n_slices`` equal-count
    slices of the sorted response are used (default 10).
    """
    xt = np.asarray(xt, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n, q = xt.shape
    if y.shape[0] != n:
        raise ValueError("xt and y have different row counts")
    if not 1 <= d <= q:
        raise ValueError(f"d must lie in [1, {q}], got {d}")
    if n < q + 1:
        raise InsufficientDataError(f"SIR needs at least {q + 1} observed rows, got {n}")
    if n_slices is None:
        n_slices = default_slices(y)
    if n_slices < 2:
        raise ValueError("n_slices must be at least 2")

    mean = xt.mean(axis=0)
    sd = xt.std(axis=0)
    keep = sd > _ZERO_VAR * max(1.0, float(np.abs(mean).max(initial=0.0)))
    if not keep.any():
        raise SingularDesignError("all predictor columns are constant")
    scale = np.where(keep, sd, np.inf)
    std = (xt[:, keep] - mean[keep]) / sd[keep]
    corr = std.T @ std / n
    evals, evecs = np.linalg.eigh(corr)
    if evals[0] <= _EIG_TOL * evals[-1]:
        raise SingularDesignError("predictor correlation matrix is singular")
    whitening = (evecs / np.sqrt(evals)) @ evecs.T
    white = std @ whitening

    labels = _slice_labels(y, n_slices)
    k = int(labels.max()) + 1
    counts = np.bincount(labels, minlength=k)
    if np.any(counts == 0):
        raise InsufficientDataError("a slice is empty")
    sums = np.zeros((k, white.shape[1]))
    np.add.at(sums, labels, white)
    means = sums / counts[:, None]
    kernel = (means * (counts / n)[:, None]).T @ means

    mvals, mvecs = np.linalg.eigh(kernel)
    order = np.argsort(mvals)[::-1]
    mvals, mvecs = mvals[order], mvecs[:, order]

    n_kept = int(keep.sum())
    d_eff = min(d, n_kept)
    dirs = whitening @ mvecs[:, :d_eff]
    qmat, _ = np.linalg.qr(dirs)
    gamma = np.zeros((q, d))
    gamma[keep, :d_eff] = _sign_fix(qmat)
    if d_eff < d:
        # constant columns carry no information; pad with unit vectors on them
        spare = np.flatnonzero(~keep)[: d - d_eff]
        gamma[spare, np.arange(d_eff, d_eff + spare.size)] = 1.0
    eig = np.zeros(d)
    eig[:d_eff] = np.clip(mvals[:d_eff], 0.0, None)
    return ReducedBasis(gamma=gamma, d=d, eigenvalues=eig, mean=mean, scale=scale,
                        whitening=whitening)


def cv_folds(n: int, n_folds: int, seed) -> list[np.ndarray]:
    """Seeded random partition of ``range(n)`` into near-equal folds."""
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, n_folds)]


def cv_errors(xt, y, d_max: int, n_folds: int = 5, seed=0, n_slices: int | None = None) -> np.ndarray:
    """Mean held-out squared error of SIR + Nadaraya-Watson for ``d = 1..d_max``."""
    xt = np.asarray(xt, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if n_slices is None:
        n_slices = default_slices(y)
    folds = cv_folds(y.shape[0], n_folds, seed)
    errs = np.zeros(d_max)
    for hold in folds:
        train = np.ones(y.shape[0], dtype=bool)
        train[hold] = False
        for d in range(1, d_max + 1):
            basis = estimate_subspace(xt[train], y[train], d, n_slices)
            u_tr = basis.project(xt[train])
            fit = nw_fit(u_tr, y[train], default_bandwidth(u_tr))
            pred = nw_predict(fit, basis.project(xt[hold]))
            errs[d - 1] += np.sum((pred - y[hold]) ** 2)
    return errs / y.shape[0]


def select_dimension(xt, y, d_max: int, n_folds: int = 5, seed=0, n_slices: int | None = None) -> int:
    """Reduced dimension minimising K-fold prediction error; ties go to smaller d."""
    xt = np.asarray(xt, dtype=float)
    if d_max > xt.shape[1]:
        raise ValueError(f"d_max={d_max} exceeds the predictor dimension {xt.shape[1]}")
    if n_folds < 2:
        raise ValueError("n_folds must be at least 2")
    if n_slices is None:
        n_slices = default_slices(y)
    # slice means span at most (slices - 1) directions
    d_max = min(d_max, max(1, min(n_slices, np.unique(y).size) - 1))
    if d_max <= 1:
        return 1
    errs = cv_errors(xt, y, d_max, n_folds, seed, n_slices)
    return int(np.argmin(errs)) + 1

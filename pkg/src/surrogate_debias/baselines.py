"""Comparison estimators: cross-fitted AIPW (kernel or logistic propensity) and
the proposed pipeline with or without the surrogate, behind one result type."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .debias import Z95, _fold_seed, _replicate_seeds, _MAX_ATTEMPTS, bootstrap_many, estimate_targets, make_folds, pseudo_outcome
from .errors import EstimationError, NonConvergenceError
from .first_stage import Dataset, choose_dimension
from .glm import BINOMIAL, GlmFamily, fit_glm, minimize_deviance
from .kernels import default_bandwidth, nw_fit, nw_predict
from .sdr import estimate_subspace

PROPENSITY_FLOOR = 1e-3

Method = Literal["dml_kernel", "dml_logistic", "proposed_no_z", "proposed_with_z"]


@dataclass
class BaselineEstimate:
    method: str
    beta: np.ndarray
    se: np.ndarray
    per_coordinate_ci: np.ndarray   # p x 2, NaN rows where no interval was computed
    clip_fraction: float = 0.0
    diagnostics: dict = field(default_factory=dict)


def _intervals(beta, se) -> np.ndarray:
    return np.column_stack([beta - Z95 * se, beta + Z95 * se])


def _propensity(xt_train, r_train, xt_eval, kind: str) -> np.ndarray:
    if r_train.min() == r_train.max():
        # no variation in R: the fitted propensity is that constant
        return np.full(xt_eval.shape[0], float(r_train[0]))
    if kind == "logistic":
        design = np.column_stack([np.ones(xt_train.shape[0]), xt_train])
        beta = fit_glm(design, r_train, BINOMIAL).beta
        return BINOMIAL.b_prime(np.column_stack([np.ones(xt_eval.shape[0]), xt_eval]) @ beta)
    if kind == "kernel":
        basis = estimate_subspace(xt_train, r_train, 1, n_slices=2)
        u = basis.project(xt_train)
        fit = nw_fit(u, r_train, default_bandwidth(u))
        return nw_predict(fit, basis.project(xt_eval))
    raise ValueError(f"unknown propensity kind {kind!r}")


def dml_point(data: Dataset, family: GlmFamily, propensity_kind: str, k_folds: int, fold_seed,
              d: int) -> tuple[np.ndarray, dict]:
    """Cross-fitted AIPW solution of ``E_n[S(beta; pi_hat, Q_hat)] = 0`` for the full vector.

    Raises :class:`NonConvergenceError` when Newton cannot find a root.
    """
    xt = data.xt
    n = data.n
    q = np.empty(n)
    pi = np.empty(n)
    pi_raw = np.empty(n)
    for fold in make_folds(n, k_folds, fold_seed):
        train = np.ones(n, dtype=bool)
        train[fold] = False
        obs = train & data.observed
        if obs.sum() < xt.shape[1] + 1:
            raise EstimationError("too few observed rows outside a fold")
        basis = estimate_subspace(xt[obs], data.y[obs], d)
        u = basis.project(xt[obs])
        g = nw_fit(u, data.y[obs], default_bandwidth(u))
        q[fold] = family.clip_response(nw_predict(g, basis.project(xt[fold])))
        pi_raw[fold] = _propensity(xt[train], data.r[train].astype(float), xt[fold], propensity_kind)
    pi[:] = np.clip(pi_raw, PROPENSITY_FLOOR, 1.0)
    target = pseudo_outcome(data.r, data.y_filled(), q, 1.0 / pi)
    fit = minimize_deviance(data.x, target, family)
    if not fit.converged:
        # with extreme weights the pseudo-outcomes can leave the mean space and the
        # binomial objective is then unbounded below
        raise NonConvergenceError(
            f"AIPW score has no reachable root (gradient norm {fit.final_gradient_norm:.3g})")
    clipped = (pi_raw < PROPENSITY_FLOOR) | (pi_raw > 1.0)
    diag = {"propensity": pi, "clip_fraction": float(clipped.mean()), "converged": fit.converged,
            "gradient_norm": fit.final_gradient_norm}
    return fit.beta, diag


def fit_dml(data: Dataset, family: GlmFamily, propensity_kind: Literal["kernel", "logistic"] = "kernel",
            k_folds: int = 5, b_reps: int = 200, rng_seed=0, d: int | None = None) -> BaselineEstimate:
    """Double machine learning baseline with bootstrap intervals for every coordinate.

    The imputation model is SIR followed by Nadaraya-Watson on the observed rows;
    the propensity is either SIR on R (two slices) plus Nadaraya-Watson, or a
    logistic regression on ``(1, Z, X)``. Propensities are clipped to ``[0.001, 1]``.
    """
    if d is None:
        d = choose_dimension(data)
    beta, diag = dml_point(data, family, propensity_kind, k_folds, _fold_seed(rng_seed), d)
    draws = np.empty((max(b_reps, 0), data.p))
    redraws = 0
    for b, ss in enumerate(_replicate_seeds(rng_seed, b_reps) if b_reps >= 2 else []):
        rng = np.random.default_rng(ss)
        for _ in range(_MAX_ATTEMPTS):
            idx = rng.integers(0, data.n, data.n)
            try:
                draws[b], _ = dml_point(data.subset(idx), family, propensity_kind, k_folds,
                                        int(rng.integers(2**63)), d)
            except (EstimationError, np.linalg.LinAlgError):
                redraws += 1
                continue
            break
        else:
            raise EstimationError(f"bootstrap replicate {b} failed {_MAX_ATTEMPTS} times")
    se = draws.std(axis=0, ddof=1) if b_reps >= 2 else np.full(data.p, np.nan)
    diag.update(d=d, redraws=redraws)
    return BaselineEstimate(method=f"dml_{propensity_kind}", beta=beta, se=se,
                            per_coordinate_ci=_intervals(beta, se),
                            clip_fraction=diag["clip_fraction"], diagnostics=diag)


def fit_proposed(data: Dataset, family: GlmFamily, target_index=None, k_folds: int = 5,
                 b_reps: int = 200, rng_seed=0, d: int | None = None) -> BaselineEstimate:
    """Proposed estimator packaged like the baselines.

    Every coordinate gets a one-step point estimate; bootstrap intervals are
    computed only for ``target_index`` (all coordinates when ``None``).
    """
    p = data.p
    targets = list(range(p)) if target_index is None else (
        [int(target_index)] if np.isscalar(target_index) else [int(j) for j in target_index])
    if d is None:
        d = choose_dimension(data)
    point = estimate_targets(data, family, range(p), d, k_folds, _fold_seed(rng_seed))
    beta = np.array([e.beta_tilde for e in point])
    se = np.full(p, np.nan)
    if b_reps >= 2:
        boot = bootstrap_many(data, family, targets, k_folds, b_reps, rng_seed, d)
        for e in boot:
            se[e.target_index] = e.se
        redraws = boot[0].redraws
    else:
        redraws = 0
    diag = {
        "d": d, "redraws": redraws, "beta_init": point[0].beta_init,
        "trim_fraction": float(np.mean([e.trim_fraction for e in point])),
        "negative_weight_fraction": float(np.mean([e.negative_weight_fraction for e in point])),
        "c_n": point[0].c_n,
    }
    method = "proposed_with_z" if data.z is not None else "proposed_no_z"
    return BaselineEstimate(method=method, beta=beta, se=se, per_coordinate_ci=_intervals(beta, se),
                            diagnostics=diag)


def fit_proposed_no_z(data: Dataset, family: GlmFamily, target_index=None, k_folds: int = 5,
                      b_reps: int = 200, rng_seed=0, d: int | None = None) -> BaselineEstimate:
    """The proposed pipeline run on ``X`` alone (surrogate dropped everywhere)."""
    return fit_proposed(data.without_surrogate(), family, target_index, k_folds, b_reps, rng_seed, d)

"""Second step: trimmed low-dimensional weights and the cross-fitted one-step estimator."""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInformationError, EstimationError
from .first_stage import Dataset, FirstStageFit, fit_first_stage, choose_dimension, refit_g_excluding
from .glm import GlmFamily
from .kernels import default_bandwidth, kernel_matrix, kernel_weighted_mean, nw_predict

Z95 = 1.96
GAMMA_M = 1.0
GAMMA_D = 0.4
MAX_REDRAW_FRACTION = 0.10
_MAX_ATTEMPTS = 50


def score_row(x_row, y, r: int, beta, q: float, inv_pi: float, family: GlmFamily) -> np.ndarray:
    """Doubly robust score ``S(beta; pi, Q)`` of one observation (a p-vector).

    ``y`` is ignored when ``r == 0`` and may be ``None`` or NaN there.
    """
    x_row = np.asarray(x_row, dtype=float)
    mu = float(family.b_prime(np.array([x_row @ beta]))[0])
    if r == 0:
        return (mu - q) * x_row
    return (inv_pi * (mu - y) - (inv_pi - 1.0) * (mu - q)) * x_row


def pseudo_outcome(r, y, q, inv_pi) -> np.ndarray:
    """``q + r * inv_pi * (y - q)``; the score equals ``(b'(X'beta) - this) X``."""
    r = np.asarray(r)
    resid = np.where(r == 1, np.asarray(y, dtype=float) - q, 0.0)
    return q + np.where(r == 1, inv_pi, 0.0) * resid


def make_folds(n: int, k_folds: int, seed) -> list[np.ndarray]:
    """Random partition into ``k_folds`` blocks whose sizes differ by at most one."""
    if k_folds < 2:
        raise ValueError("k_folds must be at least 2")
    if n < k_folds:
        raise ValueError("fewer rows than folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k_folds)]


def trimming_threshold(n: int, bandwidth: float, d: int, kernel_order: int = 2,
                       gamma_m: float = GAMMA_M, gamma_d: float = GAMMA_D) -> tuple[float, float]:
    """Return ``(delta_n, c_n)`` with ``c_n = delta_n^(2/(2+gamma_m))``.

    ``delta_n = (n h^d / log n)^(-1/2) + h^nu + n^(-gamma_d)``.
    """
    delta = (n * bandwidth ** d / np.log(n)) ** -0.5 + bandwidth ** kernel_order + n ** -gamma_d
    return float(delta), float(delta ** (2.0 / (2.0 + gamma_m)))


@dataclass
class WeightModel:
    """Fold-excluded pieces of the trimmed weighting function.

    ``evaluate_inv_pi`` increments the counters; everything else is fixed at fit time.
    """

    j1_inputs: np.ndarray
    j1_weights: np.ndarray
    j0_inputs: np.ndarray
    j0_weights: np.ndarray
    bandwidth: float
    kernel_order: int
    rho_hat: float
    c_n: float
    no_missing: bool = False
    trim_count: int = 0
    eval_count: int = 0
    negative_count: int = 0

    def j1(self, u) -> np.ndarray:
        return kernel_weighted_mean(self.j1_inputs, self.j1_weights, self.bandwidth, u, self.kernel_order)

    def j0(self, u) -> np.ndarray:
        if self.j0_inputs.shape[0] == 0:
            return np.zeros(np.atleast_2d(u).shape[0])
        return kernel_weighted_mean(self.j0_inputs, self.j0_weights, self.bandwidth, u, self.kernel_order)


def fit_weight_model(data: Dataset, first: FirstStageFit, fold, bandwidth: float | None = None,
                     gamma_m: float = GAMMA_M, gamma_d: float = GAMMA_D, kernel_order: int = 2,
                     u_all=None) -> WeightModel:
    """Kernel estimates of ``J_1`` and ``J_0`` on the rows outside ``fold``.

    ``rho_hat`` is the observed fraction over the full sample. Without any
    unobserved rows outside the fold, ``J_0`` is identically zero and flagged.
    """
    if u_all is None:
        u_all = first.basis.project(data.xt)
    if bandwidth is None:
        bandwidth = default_bandwidth(u_all)
    keep = np.ones(data.n, dtype=bool)
    keep[np.asarray(fold, dtype=int)] = False
    xv = data.x @ first.v_hat
    obs = keep & data.observed
    mis = keep & ~data.observed
    if not obs.any():
        raise EstimationError("no observed rows outside the fold")
    _, c_n = trimming_threshold(data.n, bandwidth, first.d, kernel_order, gamma_m, gamma_d)
    return WeightModel(
        j1_inputs=u_all[obs], j1_weights=xv[obs],
        j0_inputs=u_all[mis], j0_weights=xv[mis],
        bandwidth=float(bandwidth), kernel_order=kernel_order,
        rho_hat=float(data.r.mean()), c_n=c_n, no_missing=not mis.any(),
    )


def evaluate_inv_pi(model: WeightModel, reduced_point) -> np.ndarray:
    """Trimmed weight ``1 + J0 (1 - rho) / (J1 rho)``, or ``1/rho`` where ``|J1| <= c_n``."""
    u = np.atleast_2d(np.asarray(reduced_point, dtype=float))
    if u.shape[1] != model.j1_inputs.shape[1] and u.shape[0] == model.j1_inputs.shape[1]:
        u = u.T
    out, trimmed = _trimmed_inverse(model.j1(u), model.j0(u), model.rho_hat, model.c_n)
    model.trim_count += int(trimmed.sum())
    model.eval_count += int(u.shape[0])
    model.negative_count += int((out < 0).sum())
    return out


def _trimmed_inverse(j1, j0, rho, c_n):
    trimmed = ~(np.abs(j1) > c_n)
    safe = np.where(trimmed, 1.0, j1)
    return np.where(trimmed, 1.0 / rho, 1.0 + j0 * (1.0 - rho) / (safe * rho)), trimmed


@dataclass
class DebiasedEstimate:
    target_index: int
    beta_init: np.ndarray
    beta_tilde: float
    i_bar: float
    s_bar: float
    fold_scores: np.ndarray
    d: int
    c_n: float
    trim_fraction: float
    negative_weight_fraction: float
    se: float = float("nan")
    ci_low: float = float("nan")
    ci_high: float = float("nan")
    n_boot: int = 0
    redraws: int = 0
    boot_draws: np.ndarray | None = None
    warnings: list[str] = field(default_factory=list)

    def with_se(self, se: float) -> "DebiasedEstimate":
        self.se = float(se)
        self.ci_low = self.beta_tilde - Z95 * self.se
        self.ci_high = self.beta_tilde + Z95 * self.se
        return self


def _fold_score(family, x_fold, beta, r, y, q, inv_pi, xv) -> float:
    """Fold mean of ``S(beta; pi, Q)' v``."""
    mu = family.b_prime(x_fold @ beta)
    return float(np.mean((mu - pseudo_outcome(r, y, q, inv_pi)) * xv))


def information(x, beta, family: GlmFamily, target_index: int, v) -> float:
    """``E_n[b''(X'beta) X_j X'v]``."""
    return float(np.mean(family.b_double_prime(x @ beta) * x[:, target_index] * (x @ v)))


def _cross_fit(data: Dataset, firsts: list[FirstStageFit], family: GlmFamily, k_folds: int,
               fold_seed, q_override=None, kernel_order: int = 2,
               gamma_m: float = GAMMA_M, gamma_d: float = GAMMA_D) -> list[DebiasedEstimate]:
    """One-step estimates for several targets sharing one first stage and one fold split."""
    base = firsts[0]
    folds = make_folds(data.n, k_folds, fold_seed)
    xt = data.xt
    u_all = base.basis.project(xt)
    h_w = default_bandwidth(u_all)
    h_g = base.g_hat.bandwidth
    diag = Counter()
    q_folds = []
    for fold in folds:
        if q_override is not None:
            q_folds.append(np.asarray(q_override, dtype=float)[fold])
        else:
            g_k = refit_g_excluding(data, base.basis, fold, h_g)
            q_folds.append(family.clip_response(nw_predict(g_k, u_all[fold], diag)))
    y0 = data.y_filled()
    # kernel blocks depend only on the fold, not on the target coordinate
    xvs = np.column_stack([data.x @ f.v_hat for f in firsts])
    rho = float(data.r.mean())
    _, c_n = trimming_threshold(data.n, h_w, base.d, kernel_order, gamma_m, gamma_d)
    scores = np.empty((len(firsts), k_folds))
    trims = np.zeros(len(firsts))
    negs = np.zeros(len(firsts))
    for k, fold in enumerate(folds):
        keep = np.ones(data.n, dtype=bool)
        keep[fold] = False
        obs = keep & data.observed
        mis = keep & ~data.observed
        if not obs.any():
            raise EstimationError("no observed rows outside the fold")
        j1 = kernel_matrix(u_all[obs], u_all[fold], h_w, kernel_order) @ xvs[obs] / obs.sum()
        if mis.any():
            j0 = kernel_matrix(u_all[mis], u_all[fold], h_w, kernel_order) @ xvs[mis] / mis.sum()
        else:
            j0 = np.zeros_like(j1)
        inv_pi, trimmed = _trimmed_inverse(j1, j0, rho, c_n)
        trims += trimmed.sum(axis=0)
        negs += (inv_pi < 0).sum(axis=0)
        for t, first in enumerate(firsts):
            scores[t, k] = _fold_score(family, data.x[fold], first.beta_init, data.r[fold], y0[fold],
                                       q_folds[k], inv_pi[:, t], xvs[fold, t])
    out = []
    for t, first in enumerate(firsts):
        j = first.target_index
        i_bar = information(data.x, first.beta_init, family, j, first.v_hat)
        if abs(i_bar) < 1e-10:
            raise DegenerateInformationError(f"|I| = {abs(i_bar):.3g} is too small to invert")
        s_bar = float(scores[t].mean())
        out.append(DebiasedEstimate(
            target_index=j, beta_init=first.beta_init.copy(),
            beta_tilde=float(first.beta_init[j] - s_bar / i_bar), i_bar=i_bar, s_bar=s_bar,
            fold_scores=scores[t].copy(), d=first.d, c_n=c_n,
            trim_fraction=float(trims[t] / data.n), negative_weight_fraction=float(negs[t] / data.n),
        ))
    return out


def one_step_estimate(data: Dataset, first: FirstStageFit, family: GlmFamily, k_folds: int = 5,
                      rng_seed=0, q_override=None, kernel_order: int = 2) -> DebiasedEstimate:
    """Cross-fitted one-step estimate ``beta_j - S_bar / I_bar`` for ``first.target_index``.

    ``se`` and the interval are left unset; see :func:`bootstrap_inference`.
    """
    return _cross_fit(data, [first], family, k_folds, rng_seed, q_override, kernel_order)[0]


def _targets_list(target_index, p: int) -> list[int]:
    if target_index is None or target_index == "all":
        return list(range(p))
    if np.isscalar(target_index):
        return [int(target_index)]
    return [int(j) for j in target_index]


def estimate_targets(data: Dataset, family: GlmFamily, targets, d: int, k_folds: int, seed,
                     kernel_order: int = 2) -> list[DebiasedEstimate]:
    """Full two-step pipeline for several coordinates with a fixed reduced dimension."""
    targets = _targets_list(targets, data.p)
    first = fit_first_stage(data, family, targets[0], d=d)
    firsts = [first] + [first.for_target(j, data.x, family) for j in targets[1:]]
    return _cross_fit(data, firsts, family, k_folds, seed, kernel_order=kernel_order)


def _replicate_seeds(rng_seed, b_reps: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(rng_seed).spawn(b_reps + 1)[1:]


def _fold_seed(rng_seed) -> np.random.SeedSequence:
    return np.random.SeedSequence(rng_seed).spawn(1)[0]


def bootstrap_many(data: Dataset, family: GlmFamily, targets=None, k_folds: int = 5, b_reps: int = 200,
                   rng_seed=0, d: int | None = None, kernel_order: int = 2) -> list[DebiasedEstimate]:
    """Point estimates plus nonparametric-bootstrap standard errors for several coordinates.

    Each resample reruns the whole pipeline (subspace, link, initial fit,
    weights) with the reduced dimension of the original fit. Resamples on which
    the pipeline cannot run are redrawn and counted.
    """
    if b_reps < 2:
        raise ValueError("b_reps must be at least 2")
    targets = _targets_list(targets, data.p)
    if d is None:
        d = choose_dimension(data)
    ests = estimate_targets(data, family, targets, d, k_folds, _fold_seed(rng_seed), kernel_order)
    draws = np.empty((b_reps, len(targets)))
    redraws = 0
    for b, ss in enumerate(_replicate_seeds(rng_seed, b_reps)):
        rng = np.random.default_rng(ss)
        for attempt in range(_MAX_ATTEMPTS):
            idx = rng.integers(0, data.n, data.n)
            try:
                rep = estimate_targets(data.subset(idx), family, targets, d, k_folds,
                                       int(rng.integers(2**63)), kernel_order)
            except (EstimationError, np.linalg.LinAlgError):
                redraws += 1
                continue
            draws[b] = [e.beta_tilde for e in rep]
            break
        else:
            raise EstimationError(f"bootstrap replicate {b} failed {_MAX_ATTEMPTS} times")
    msgs = []
    if redraws > MAX_REDRAW_FRACTION * b_reps:
        msgs.append(f"unstable bootstrap: {redraws} redraws for {b_reps} replicates")
        warnings.warn(msgs[-1], RuntimeWarning, stacklevel=2)
    for k, est in enumerate(ests):
        est.with_se(np.std(draws[:, k], ddof=1))
        est.n_boot = b_reps
        est.redraws = redraws
        est.boot_draws = draws[:, k].copy()
        est.warnings.extend(msgs)
    return ests


def bootstrap_inference(data: Dataset, family: GlmFamily, target_index: int = 0, k_folds: int = 5,
                        b_reps: int = 200, rng_seed=0, d: int | None = None) -> DebiasedEstimate:
    """One-step estimate for one coordinate with a bootstrap normal interval."""
    return bootstrap_many(data, family, [target_index], k_folds, b_reps, rng_seed, d)[0]

"""Simulation scenarios: data generation, pseudo-true coefficients, metrics, sweeps."""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .baselines import BaselineEstimate, fit_dml, fit_proposed
from .first_stage import Dataset, FirstStageFit
from .glm import BINOMIAL, GAUSSIAN, GlmFamily, fit_glm

METHODS = ("baseline1", "baseline2", "proposed_no_z", "proposed_with_z")
REPORTED_COORDS = (0, 1, 2, 3)
DEFAULT_DELTA = {"continuous": 0.5, "binary": 0.25}
MIXTURE_WEIGHT = 0.7
SHIFTED_MEAN = 1.0
SHIFTED_VAR = 1.5
NOISE_VAR = 2.0


@dataclass(frozen=True)
class ScenarioConfig:
    outcome: Literal["continuous", "binary"] = "continuous"
    missing_rate: float = 0.5
    n: int = 500
    p: int = 8
    delta: float | None = None
    n_replicates: int = 200
    b_reps: int = 200
    k_folds: int = 5
    master_seed: int = 0
    test_n: int = 10_000
    oracle_n: int = 1_000_000
    noise: Literal["variance", "sd"] = "variance"   # how N(0, 2) for the outcome noise is read

    def __post_init__(self):
        if self.outcome not in DEFAULT_DELTA:
            raise ValueError(f"outcome must be 'continuous' or 'binary', got {self.outcome!r}")
        if not 0.0 < self.missing_rate < 1.0:
            raise ValueError("missing_rate must lie in (0, 1)")
        if self.p < 4:
            raise ValueError("p must be at least 4")
        if self.noise not in ("variance", "sd"):
            raise ValueError("noise must be 'variance' or 'sd'")
        if self.delta is None:
            object.__setattr__(self, "delta", DEFAULT_DELTA[self.outcome])

    @property
    def family(self) -> GlmFamily:
        return GAUSSIAN if self.outcome == "continuous" else BINOMIAL

    @property
    def name(self) -> str:
        return f"{self.outcome}_miss{round(self.missing_rate * 100)}_n{self.n}"

    @property
    def noise_sd(self) -> float:
        return math.sqrt(NOISE_VAR) if self.noise == "variance" else NOISE_VAR

    def population_key(self) -> str:
        """Hash of everything the population distribution depends on."""
        key = {"outcome": self.outcome, "missing_rate": self.missing_rate, "p": self.p,
               "delta": self.delta, "noise": self.noise}
        return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:16]


def true_beta0(p: int) -> np.ndarray:
    b = np.zeros(p)
    b[:4] = (1.0, 1.0, -1.0, -1.0)
    return b


def generate(config: ScenarioConfig, seed, n: int | None = None) -> Dataset:
    """Draw ``R`` first, then ``X | R``, then ``Y`` and ``Z`` given ``X``.

    ``X | R=0 ~ N(0, I)``; ``X | R=1`` is the mixture ``0.7 N(0, I) + 0.3 N(1, 1.5 I)``.
    ``Y`` is stored for every row.
    """
    n = config.n if n is None else n
    p = config.p
    rng = np.random.default_rng(seed)
    r = (rng.random(n) < 1.0 - config.missing_rate).astype(int)
    x = rng.standard_normal((n, p))
    shifted = (rng.random(n) >= MIXTURE_WEIGHT) & (r == 1)
    x[shifted] = SHIFTED_MEAN + math.sqrt(SHIFTED_VAR) * x[shifted]
    lin = x @ true_beta0(p)
    nonlin = np.abs(x[:, 4:]).sum(axis=1) / 4.0
    eps = config.noise_sd * rng.standard_normal(n)
    if config.outcome == "continuous":
        y = lin + nonlin + eps
    else:
        y = (0.5 * lin + nonlin + eps > 0).astype(float)
    z = config.delta * lin + nonlin + rng.standard_normal(n)
    return Dataset(x, z, r, y)


def oracle_with_se(config: ScenarioConfig, oracle_n: int | None = None, seed=None) -> tuple[np.ndarray, np.ndarray]:
    """Pseudo-true ``beta*`` from a large fully observed sample, with sandwich Monte Carlo SEs."""
    oracle_n = config.oracle_n if oracle_n is None else oracle_n
    seed = [config.master_seed, 0x0AC1E] if seed is None else seed
    data = generate(config, seed, n=oracle_n)
    fam = config.family
    fit = fit_glm(data.x, data.y, fam)
    eta = data.x @ fit.beta
    w = fam.b_double_prime(eta)
    hess = (data.x * w[:, None]).T @ data.x / oracle_n
    sc = data.x * (fam.b_prime(eta) - data.y)[:, None]
    meat = sc.T @ sc / oracle_n
    hinv = np.linalg.inv(hess)
    cov = hinv @ meat @ hinv / oracle_n
    return fit.beta, np.sqrt(np.diag(cov))


def oracle_beta_star(config: ScenarioConfig, oracle_n: int | None = None, seed=None,
                     cache_dir: str | os.PathLike | None = None) -> np.ndarray:
    """``argmin E[b(X'beta) - Y X'beta]`` approximated on ``oracle_n`` draws.

    With ``cache_dir`` the vector is stored as JSON keyed by the population hash,
    sample size and seed, and reused on later calls.
    """
    return cached_oracle(config, oracle_n, seed, cache_dir)[0]


def _cache_path(config: ScenarioConfig, oracle_n: int, seed, cache_dir) -> Path:
    tag = hashlib.sha256(json.dumps([config.population_key(), oracle_n, repr(seed)]).encode()).hexdigest()[:16]
    return Path(cache_dir) / f"oracle_{config.outcome}_{tag}.json"


def cached_oracle(config: ScenarioConfig, oracle_n: int | None = None, seed=None,
                  cache_dir=None) -> tuple[np.ndarray, np.ndarray, bool]:
    """Return ``(beta_star, mc_se, from_cache)``."""
    oracle_n = config.oracle_n if oracle_n is None else oracle_n
    seed = [config.master_seed, 0x0AC1E] if seed is None else seed
    path = None
    if cache_dir is not None:
        path = _cache_path(config, oracle_n, seed, cache_dir)
        if path.exists():
            blob = json.loads(path.read_text())
            return np.array(blob["beta_star"]), np.array(blob["mc_se"]), True
    beta, se = oracle_with_se(config, oracle_n, seed)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        blob = {"population": config.population_key(), "outcome": config.outcome,
                "missing_rate": config.missing_rate, "delta": config.delta, "noise": config.noise,
                "oracle_n": oracle_n, "seed": repr(seed),
                "beta_star": [float(v) for v in beta], "mc_se": [float(v) for v in se]}
        path.write_text(json.dumps(blob, indent=2) + "\n")
    return beta, se, False


def test_deviance(beta, config: ScenarioConfig, seed, first: FirstStageFit | None = None,
                  test_n: int | None = None) -> float:
    """Mean deviance of ``beta`` on a fresh, fully observed test sample.

    With ``first`` the outcome is replaced by that fit's imputation
    ``g_hat(Gamma_hat' X~)`` on the test rows.
    """
    from .kernels import nw_predict

    test_n = config.test_n if test_n is None else test_n
    data = generate(config, seed, n=test_n)
    fam = config.family
    y = data.y
    if first is not None:
        y = fam.clip_response(nw_predict(first.g_hat, first.basis.project(data.xt)))
    eta = data.x @ np.asarray(beta, dtype=float)
    return float(np.mean(fam.b(eta) - y * eta))


@dataclass
class ReplicateResult:
    scenario: str
    method: str
    replicate: int
    coord: int
    estimate: float
    ci_low: float
    ci_high: float
    covered: bool
    deviance: float
    d: int = -1
    trim_fraction: float = float("nan")
    clip_fraction: float = float("nan")
    error: str = ""


def replicate_seeds(master_seed: int, n_replicates: int) -> list[int]:
    """Distinct per-replicate integer seeds derived from the master seed."""
    children = np.random.SeedSequence(master_seed).spawn(n_replicates)
    seeds = [int(c.generate_state(2, np.uint32).astype(np.uint64) @ np.array([1, 2**32], dtype=np.uint64))
             for c in children]
    assert len(set(seeds)) == len(seeds)
    return seeds


def run_method(method: str, data: Dataset, config: ScenarioConfig, seed: int) -> BaselineEstimate:
    fam = config.family
    kw = dict(k_folds=config.k_folds, b_reps=config.b_reps, rng_seed=seed)
    if method == "baseline1":
        return fit_dml(data, fam, "kernel", **kw)
    if method == "baseline2":
        return fit_dml(data, fam, "logistic", **kw)
    if method == "proposed_no_z":
        return fit_proposed(data.without_surrogate(), fam, list(REPORTED_COORDS), **kw)
    if method == "proposed_with_z":
        return fit_proposed(data, fam, list(REPORTED_COORDS), **kw)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def run_replicate(config: ScenarioConfig, methods: Sequence[str], replicate: int, seed: int,
                  beta_star: np.ndarray) -> list[ReplicateResult]:
    data = generate(config, [seed, 1])
    rows = []
    for mi, method in enumerate(methods):
        try:
            est = run_method(method, data, config, seed + mi)
            dev = test_deviance(est.beta, config, [seed, 2])
        except Exception as exc:  # recorded, never aborts the sweep
            label = f"{type(exc).__name__}: {exc}".replace("\n", " ")
            rows.extend(ReplicateResult(config.name, method, replicate, j, math.nan, math.nan, math.nan,
                                        False, math.nan, error=label) for j in REPORTED_COORDS)
            continue
        for j in REPORTED_COORDS:
            lo, hi = est.per_coordinate_ci[j]
            rows.append(ReplicateResult(
                config.name, method, replicate, j, float(est.beta[j]), float(lo), float(hi),
                bool(lo <= beta_star[j] <= hi), dev, d=int(est.diagnostics.get("d", -1)),
                trim_fraction=float(est.diagnostics.get("trim_fraction", math.nan)),
                clip_fraction=float(est.clip_fraction) if method.startswith("baseline") else math.nan,
            ))
    return rows


def _replicate_job(args):
    return run_replicate(*args)


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    beta_star: np.ndarray
    rows: list[ReplicateResult]
    aggregates: list[dict] = field(default_factory=list)


def aggregate(rows: Sequence[ReplicateResult]) -> list[dict]:
    """Coverage per (scenario, method, coord) and deviance mean/sd per (scenario, method)."""
    out = []
    keys = sorted({(r.scenario, r.method) for r in rows}, key=lambda k: (k[0], METHODS.index(k[1]) if k[1] in METHODS else 99, k[1]))
    for scen, method in keys:
        sub = [r for r in rows if r.scenario == scen and r.method == method]
        ok = [r for r in sub if not r.error]
        failed_reps = {r.replicate for r in sub if r.error}
        reps = {r.replicate for r in sub}
        dev = np.array([r.deviance for r in ok if r.coord == REPORTED_COORDS[0]])
        rec = {"scenario": scen, "method": method, "n_replicates": len(reps),
               "failure_rate": len(failed_reps) / max(len(reps), 1)}
        for j in REPORTED_COORDS:
            cov = [r.covered for r in ok if r.coord == j]
            rec[f"coverage_beta{j + 1}"] = float(np.mean(cov)) if cov else math.nan
        rec["deviance_mean"] = float(dev.mean()) if dev.size else math.nan
        rec["deviance_sd"] = float(dev.std(ddof=1)) if dev.size > 1 else math.nan
        out.append(rec)
    return out


def run_scenario(config: ScenarioConfig, methods: Sequence[str] = METHODS, threads: int = 1,
                 beta_star: np.ndarray | None = None, cache_dir=None, progress=None) -> ScenarioResult:
    """Run every replicate of one scenario; failures are recorded per replicate."""
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ValueError(f"unknown methods {bad}; expected a subset of {METHODS}")
    if beta_star is None:
        beta_star = oracle_beta_star(config, cache_dir=cache_dir)
    seeds = replicate_seeds(config.master_seed, config.n_replicates)
    jobs = [(config, tuple(methods), i, s, beta_star) for i, s in enumerate(seeds)]
    results: list[list[ReplicateResult]] = []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for res in pool.map(_replicate_job, jobs):
                results.append(res)
                if progress:
                    progress(len(results), len(jobs))
    else:
        for job in jobs:
            results.append(_replicate_job(job))
            if progress:
                progress(len(results), len(jobs))
    rows = [r for rep in results for r in rep]
    return ScenarioResult(config, np.asarray(beta_star), rows, aggregate(rows))


def scenario_grid(**overrides) -> list[ScenarioConfig]:
    """The eight scenarios: outcome x missing rate x sample size."""
    return [ScenarioConfig(outcome=o, missing_rate=m, n=n, **overrides)
            for o in ("continuous", "binary") for m in (0.5, 0.9) for n in (500, 1000)]


def config_dict(config: ScenarioConfig) -> dict:
    return asdict(config)


def with_overrides(config: ScenarioConfig, **kw) -> ScenarioConfig:
    return replace(config, **kw)

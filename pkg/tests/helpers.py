"""Shared oracles for unit and acceptance tests."""

import numpy as np
from scipy.stats import norm

from surrogate_debias.debias import _trimmed_inverse
from surrogate_debias.simulation import MIXTURE_WEIGHT, SHIFTED_MEAN, SHIFTED_VAR, ScenarioConfig, true_beta0

TEST_FUNCTIONS = {
    "1": lambda u: np.ones_like(u),
    "u": lambda u: u,
    "u^2": lambda u: u ** 2,
    "sin u": np.sin,
}


def discrete_population(seed=0):
    """Twelve-atom population for (Z, X1, X2) with outcome index u = gamma' xt.

    R depends on the full atom (missing at random given xt, not given u),
    so the naive weight 1/rho is wrong while the reduced weight is exact.
    """
    rng = np.random.default_rng(seed)
    atoms = np.array([[z, x1, x2] for z in (-1.0, 0.0, 1.0) for x1 in (-1.0, 1.0) for x2 in (0.0, 1.0)])
    probs = rng.dirichlet(np.full(len(atoms), 5.0))
    gamma = np.array([1.0, 0.5, 0.0])
    u_atoms = atoms @ gamma
    prop = 0.25 + 0.5 / (1.0 + np.exp(-(atoms[:, 0] - atoms[:, 2] + 0.5 * atoms[:, 1])))
    x_atoms = np.column_stack([np.ones(len(atoms)), atoms[:, 1:]])
    v = np.array([1.0, -0.4, 0.3])
    xv = x_atoms @ v
    rho = float(np.sum(probs * prop))
    levels = np.unique(u_atoms)
    j1 = np.array([np.sum(probs * prop * xv * (u_atoms == lv)) / rho for lv in levels])
    j0 = np.array([np.sum(probs * (1 - prop) * xv * (u_atoms == lv)) / (1 - rho) for lv in levels])
    inv_pi_level, _ = _trimmed_inverse(j1, j0, rho, 0.0)
    inv_pi_atom = inv_pi_level[np.searchsorted(levels, u_atoms)]
    return dict(atoms=atoms, probs=probs, u=u_atoms, prop=prop, xv=xv, rho=rho, j1=j1,
                inv_pi=inv_pi_atom)


def moment_check(n=100_000, seed=1):
    """Empirical moments of (R inv_pi - 1) f(u) X'v with their Monte Carlo SEs."""
    pop = discrete_population()
    rng = np.random.default_rng(seed)
    k = rng.choice(len(pop["probs"]), size=n, p=pop["probs"])
    r = (rng.random(n) < pop["prop"][k]).astype(float)
    u = pop["u"][k]
    base = (r * pop["inv_pi"][k] - 1.0) * pop["xv"][k]
    out = {}
    for name, f in TEST_FUNCTIONS.items():
        terms = base * f(u)
        out[name] = (float(terms.mean()), float(terms.std(ddof=1) / np.sqrt(n)))
    naive = (r / pop["rho"] - 1.0) * pop["xv"][k]
    out["naive"] = (float(naive.mean()), float(naive.std(ddof=1) / np.sqrt(n)))
    return out


def _abs_moments(mu, sd):
    """E|X| and E[X|X|] for X ~ N(mu, sd^2)."""
    a = mu / sd
    e_abs = sd * np.sqrt(2 / np.pi) * np.exp(-a * a / 2) + mu * (1 - 2 * norm.cdf(-a))
    e_xabs = (mu * mu + sd * sd) * (2 * norm.cdf(a) - 1) + 2 * mu * sd * norm.pdf(a)
    return e_abs, e_xabs


def population_beta_star(config: ScenarioConfig) -> np.ndarray:
    """Closed-form least-squares limit for the continuous outcome (no intercept).

    X is a mixture of N(0, I) with weight 1 - pi_s and N(1, 1.5 I) with weight
    pi_s = 0.3 (1 - missing_rate); Y = X'beta0 + sum_{j>=5} |X_j| / 4 + noise.
    """
    p = config.p
    ps = (1 - MIXTURE_WEIGHT) * (1 - config.missing_rate)
    comps = [(1 - ps, 0.0, 1.0), (ps, SHIFTED_MEAN, SHIFTED_VAR)]
    exx = np.zeros((p, p))
    exy = np.zeros(p)
    b0 = true_beta0(p)
    for w, mu, var in comps:
        sd = np.sqrt(var)
        m = np.full(p, mu)
        second = var * np.eye(p) + np.outer(m, m)
        exx += w * second
        e_abs, e_xabs = _abs_moments(mu, sd)
        cross = np.full(p, mu * e_abs)          # E[X_k |X_j|], k != j
        lin_part = second @ b0
        nonlin = np.zeros(p)
        for j in range(4, p):
            col = cross.copy()
            col[j] = e_xabs
            nonlin += col / 4
        exy += w * (lin_part + nonlin)
    return np.linalg.solve(exx, exy)


ACCEPTANCE_LOG: list[str] = []


def report(criterion: str, passed: bool, detail: str) -> bool:
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE_LOG.append(line)
    print("\n" + line, flush=True)
    return passed

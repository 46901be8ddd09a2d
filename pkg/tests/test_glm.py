import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from surrogate_debias.errors import EstimationError, SingularDesignError
from surrogate_debias.glm import (
    BINOMIAL,
    GAUSSIAN,
    deviance_gradient,
    deviance_loss,
    fit_glm,
    fit_glm_imputed,
    get_family,
    mean_deviance,
)


def test_gaussian_link_functions():
    t = np.linspace(-5, 5, 11)
    np.testing.assert_allclose(GAUSSIAN.b(t), t ** 2 / 2)
    np.testing.assert_allclose(GAUSSIAN.b_prime(t), t)
    np.testing.assert_allclose(GAUSSIAN.b_double_prime(t), 1.0)


def test_binomial_link_functions_ranges():
    t = np.linspace(-40, 40, 801)
    mu = BINOMIAL.b_prime(t)
    v = BINOMIAL.b_double_prime(t)
    assert np.all((mu >= 0) & (mu <= 1))
    assert np.all((v >= 0) & (v <= 0.25))
    np.testing.assert_allclose(BINOMIAL.b(np.array([0.0])), np.log(2.0))


def test_binomial_b_is_stable_for_large_arguments():
    t = np.array([-800.0, 800.0])
    out = BINOMIAL.b(t)
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0.0, 800.0], atol=1e-12)


def test_get_family_by_name():
    assert get_family("gaussian") is GAUSSIAN
    assert get_family(BINOMIAL) is BINOMIAL
    with pytest.raises(ValueError):
        get_family("poisson")


@pytest.mark.parametrize("family,x,y,beta,expected", [
    (GAUSSIAN, [1.0, 0.0, 0.0], 0.0, [0.0, 0.0, 0.0], 0.0),
    (BINOMIAL, [1.0, 0.0], 1.0, [0.0, 3.0], 0.6931471805599453),
    (GAUSSIAN, [1.0, 1.0], 1.0, [1.5, 0.5], 0.0),
])
def test_deviance_loss_examples(family, x, y, beta, expected):
    assert deviance_loss(np.array(x), y, np.array(beta), family) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("family", [GAUSSIAN, BINOMIAL])
def test_b_double_prime_matches_finite_difference(family):
    t = np.linspace(-10, 10, 201)
    h = 1e-5
    fd = (family.b_prime(t + h) - family.b_prime(t - h)) / (2 * h)
    np.testing.assert_allclose(fd, family.b_double_prime(t), atol=1e-6)


def _instance(seed, family, n=150, p=5):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    eta = x @ rng.normal(0, 0.5, p)
    y = eta + rng.standard_normal(n) if family is GAUSSIAN else (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    return x, y


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), fam=st.sampled_from(["gaussian", "binomial"]))
def test_gradient_matches_central_differences(seed, fam):
    family = get_family(fam)
    x, y = _instance(seed, family)
    beta = np.random.default_rng(seed + 1).normal(0, 0.7, x.shape[1])
    g = deviance_gradient(x, y, beta, family)
    h = 1e-6
    fd = np.array([(mean_deviance(x, y, beta + h * e, family) - mean_deviance(x, y, beta - h * e, family)) / (2 * h)
                   for e in np.eye(x.shape[1])])
    assert np.max(np.abs(fd - g)) / max(np.max(np.abs(g)), 1e-3) < 1e-5


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), lam=st.floats(0.0, 1.0), fam=st.sampled_from(["gaussian", "binomial"]))
def test_deviance_is_convex(seed, lam, fam):
    family = get_family(fam)
    x, y = _instance(seed, family, n=60, p=3)
    rng = np.random.default_rng(seed + 7)
    b1, b2 = rng.normal(0, 2, 3), rng.normal(0, 2, 3)
    lhs = mean_deviance(x, y, lam * b1 + (1 - lam) * b2, family)
    rhs = lam * mean_deviance(x, y, b1, family) + (1 - lam) * mean_deviance(x, y, b2, family)
    assert lhs <= rhs + 1e-10


def test_gaussian_exact_interpolation(rng):
    x = rng.standard_normal((50, 4))
    beta0 = np.array([1.0, -2.0, 0.5, 3.0])
    fit = fit_glm(x, x @ beta0, GAUSSIAN)
    assert fit.converged
    np.testing.assert_allclose(fit.beta, beta0, atol=1e-8)


def test_binomial_intercept_only_is_logit_of_mean():
    y = np.array([1.0] * 30 + [0.0] * 70)
    fit = fit_glm(np.ones((100, 1)), y, BINOMIAL)
    assert fit.beta[0] == pytest.approx(np.log(0.3 / 0.7), abs=1e-8)


def test_binomial_balanced_intercept_is_zero():
    y = np.array([0.0, 1.0] * 50)
    fit = fit_glm(np.ones((100, 1)), y, BINOMIAL)
    assert fit.beta[0] == pytest.approx(0.0, abs=1e-10)


def test_gaussian_matches_normal_equations(rng):
    x = rng.standard_normal((200, 8))
    y = rng.standard_normal(200)
    fit = fit_glm(x, y, GAUSSIAN)
    oracle = np.linalg.solve(x.T @ x, x.T @ y)
    np.testing.assert_allclose(fit.beta, oracle, atol=1e-8)
    assert fit.converged and fit.final_gradient_norm <= 1e-8


def test_converged_implies_small_gradient(rng):
    x = rng.standard_normal((300, 4))
    y = (rng.random(300) < 0.4).astype(float)
    fit = fit_glm(x, y, BINOMIAL)
    assert fit.converged
    assert np.max(np.abs(deviance_gradient(x, y, fit.beta, BINOMIAL))) <= 1e-8


def test_rank_deficient_design_raises(rng):
    x = rng.standard_normal((40, 3))
    x = np.column_stack([x, x[:, 0] + x[:, 1]])
    with pytest.raises(SingularDesignError):
        fit_glm(x, rng.standard_normal(40), GAUSSIAN)


def test_too_few_rows_raises():
    with pytest.raises(EstimationError):
        fit_glm(np.ones((2, 3)), np.zeros(2), GAUSSIAN)


def test_non_convergence_is_a_flag_not_an_exception(rng):
    x = rng.standard_normal((100, 3))
    y = (rng.random(100) < 0.5).astype(float)
    fit = fit_glm(x, y, BINOMIAL, max_iter=1)
    assert not fit.converged
    assert fit.iterations == 1


def test_separated_logistic_data_does_not_crash():
    x = np.column_stack([np.ones(20), np.linspace(-1, 1, 20)])
    y = (x[:, 1] > 0).astype(float)
    fit = fit_glm(x, y, BINOMIAL)
    assert np.all(np.isfinite(fit.beta))


def test_imputed_fit_recovers_beta_from_exact_means(rng):
    x = rng.standard_normal((400, 4))
    beta0 = np.array([0.5, -1.0, 0.25, 0.0])
    fit = fit_glm_imputed(x, BINOMIAL.b_prime(x @ beta0), BINOMIAL)
    np.testing.assert_allclose(fit.beta, beta0, atol=1e-7)


def test_imputed_half_target_gives_zero_coefficients():
    grid = np.array([[a, b] for a in (-1.0, 1.0) for b in (-1.0, 1.0)] * 10)
    x = np.column_stack([np.ones(len(grid)), grid])
    fit = fit_glm_imputed(x, np.full(len(x), 0.5), BINOMIAL)
    np.testing.assert_allclose(fit.beta, 0.0, atol=1e-10)


def test_imputed_gaussian_matches_linear_solve(rng):
    x = rng.standard_normal((120, 5))
    q = rng.standard_normal(120)
    fit = fit_glm_imputed(x, q, GAUSSIAN)
    np.testing.assert_allclose(fit.beta, np.linalg.lstsq(x, q, rcond=None)[0], atol=1e-8)


def test_imputed_binomial_clips_targets(rng):
    x = np.column_stack([np.ones(50), rng.standard_normal(50)])
    q = np.where(np.arange(50) < 25, -0.3, 1.4)
    fit = fit_glm_imputed(x, q, BINOMIAL)
    clipped = fit_glm_imputed(x, np.clip(q, 1e-6, 1 - 1e-6), BINOMIAL)
    np.testing.assert_array_equal(fit.beta, clipped.beta)


def test_imputed_rejects_non_finite():
    with pytest.raises(ValueError):
        fit_glm_imputed(np.ones((5, 1)), np.array([0.1, np.nan, 0.2, 0.3, 0.4]), GAUSSIAN)

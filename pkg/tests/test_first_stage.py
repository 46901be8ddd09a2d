import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from surrogate_debias.errors import InsufficientDataError
from surrogate_debias.first_stage import Dataset, fit_first_stage, projection_vector, refit_g_excluding
from surrogate_debias.glm import BINOMIAL, GAUSSIAN, fit_glm
from surrogate_debias.kernels import nw_predict
from surrogate_debias.sdr import augment

from conftest import random_gaussian_instance


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), None, np.array([0, 1, 2]), np.zeros(3))
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), np.zeros(2), np.ones(3), np.zeros(3))


def test_unobserved_outcomes_are_never_read(cont_data):
    poisoned = Dataset(cont_data.x, cont_data.z, cont_data.r, np.where(cont_data.observed, cont_data.y, np.nan))
    a = fit_first_stage(cont_data, GAUSSIAN, d=1)
    b = fit_first_stage(poisoned, GAUSSIAN, d=1)
    np.testing.assert_array_equal(a.beta_init, b.beta_init)
    np.testing.assert_array_equal(a.v_hat, b.v_hat)


def test_too_few_observed_rows():
    data = random_gaussian_instance(0, n=50)
    r = np.zeros(50, dtype=int)
    r[:9] = 1
    with pytest.raises(InsufficientDataError):
        fit_first_stage(Dataset(data.x, data.z, r, data.y), GAUSSIAN, d=1)


def test_full_data_hook_matches_glm():
    data = random_gaussian_instance(1)
    first = fit_first_stage(data, GAUSSIAN, d=1, q_override=data.y)
    np.testing.assert_allclose(first.beta_init, fit_glm(data.x, data.y, GAUSSIAN).beta, atol=1e-10)


@pytest.mark.parametrize("j", [0, 3, 7])
def test_gaussian_projection_is_ols(j):
    data = random_gaussian_instance(2)
    first = fit_first_stage(data, GAUSSIAN, target_index=j, d=1)
    rest = np.delete(np.arange(data.p), j)
    w = np.linalg.solve(data.x[:, rest].T @ data.x[:, rest], data.x[:, rest].T @ data.x[:, j])
    assert first.v_hat[j] == 1.0
    np.testing.assert_allclose(first.v_hat[rest], -w, atol=1e-8)


def test_projection_near_unit_vector_under_independence():
    rng = np.random.default_rng(3)
    n = 5000
    x = rng.standard_normal((n, 6))
    v = projection_vector(x, rng.normal(size=6), GAUSSIAN, 2)
    assert np.max(np.abs(np.delete(v, 2))) < 0.05


@pytest.mark.parametrize("family_name", ["continuous", "binary"])
def test_projection_orthogonality(family_name, cont_data, bin_data):
    data, family = (cont_data, GAUSSIAN) if family_name == "continuous" else (bin_data, BINOMIAL)
    for j in (0, 5):
        first = fit_first_stage(data, family, target_index=j, d=1)
        wts = family.b_double_prime(data.x @ first.beta_init)
        moments = np.mean((wts * (data.x @ first.v_hat))[:, None] * data.x, axis=0)
        assert np.max(np.abs(np.delete(moments, j))) < 1e-6


def test_binomial_q_hat_is_clipped(bin_data):
    first = fit_first_stage(bin_data, BINOMIAL, d=1)
    assert np.all((first.q_hat >= 1e-6) & (first.q_hat <= 1 - 1e-6))
    assert np.all(np.isfinite(first.q_hat))


def test_for_target_keeps_the_imputation(cont_data):
    first = fit_first_stage(cont_data, GAUSSIAN, d=1)
    other = first.for_target(4, cont_data.x, GAUSSIAN)
    direct = fit_first_stage(cont_data, GAUSSIAN, target_index=4, d=1)
    np.testing.assert_array_equal(other.q_hat, first.q_hat)
    np.testing.assert_allclose(other.v_hat, direct.v_hat, atol=1e-14)


def test_target_index_out_of_range(cont_data):
    with pytest.raises(IndexError):
        fit_first_stage(cont_data, GAUSSIAN, target_index=8, d=1)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 1000))
def test_row_permutation_invariance(seed, cont_data):
    perm = np.random.default_rng(seed).permutation(cont_data.n)
    a = fit_first_stage(cont_data, GAUSSIAN, d=2)
    b = fit_first_stage(cont_data.subset(perm), GAUSSIAN, d=2)
    np.testing.assert_allclose(a.beta_init, b.beta_init, atol=1e-10)
    np.testing.assert_allclose(a.v_hat, b.v_hat, atol=1e-10)
    np.testing.assert_allclose(a.basis.projector(), b.basis.projector(), atol=1e-10)


def test_surrogate_free_path_uses_x_only(cont_data):
    first = fit_first_stage(cont_data.without_surrogate(), GAUSSIAN, d=1)
    assert first.basis.gamma.shape == (cont_data.p, 1)


def test_refit_with_empty_fold_is_first_stage_fit(cont_data):
    first = fit_first_stage(cont_data, GAUSSIAN, d=1)
    g = refit_g_excluding(cont_data, first.basis, np.array([], dtype=int))
    np.testing.assert_array_equal(g.train_inputs, first.g_hat.train_inputs)
    np.testing.assert_array_equal(g.train_responses, first.g_hat.train_responses)
    assert g.bandwidth == first.g_hat.bandwidth


def test_refit_excluding_unobserved_rows_is_first_stage_fit(cont_data):
    first = fit_first_stage(cont_data, GAUSSIAN, d=1)
    g = refit_g_excluding(cont_data, first.basis, np.flatnonzero(~cont_data.observed))
    u = first.basis.project(cont_data.xt)
    np.testing.assert_array_equal(nw_predict(g, u), nw_predict(first.g_hat, u))


def reference_nw(train_u, train_y, h, query_u):
    out = []
    for q in query_u:
        w = np.exp(-0.5 * np.sum(((train_u - q) / h) ** 2, axis=1))
        out.append(np.dot(w, train_y) / w.sum())
    return np.array(out)


def test_two_fold_refits_match_reference(cont_data):
    first = fit_first_stage(cont_data, GAUSSIAN, d=1)
    halves = np.array_split(np.random.default_rng(0).permutation(cont_data.n), 2)
    u = first.basis.project(cont_data.xt)
    preds = []
    for fold in halves:
        g = refit_g_excluding(cont_data, first.basis, fold)
        train = cont_data.observed.copy()
        train[fold] = False
        ref = reference_nw(u[train], cont_data.y[train], g.bandwidth, u[:50])
        np.testing.assert_allclose(nw_predict(g, u[:50]), ref, rtol=1e-10)
        preds.append(nw_predict(g, u[:50]))
    assert not np.allclose(preds[0], preds[1])


def test_refit_without_training_rows(cont_data):
    first = fit_first_stage(cont_data, GAUSSIAN, d=1)
    with pytest.raises(InsufficientDataError):
        refit_g_excluding(cont_data, first.basis, np.arange(cont_data.n))


def test_constant_surrogate_does_not_crash(cont_data):
    data = Dataset(cont_data.x, np.full(cont_data.n, 2.0), cont_data.r, cont_data.y)
    first = fit_first_stage(data, GAUSSIAN)
    assert np.all(np.isfinite(first.beta_init))
    np.testing.assert_array_equal(augment(cont_data.x, data.z)[:, 0], 2.0)

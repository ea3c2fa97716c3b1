import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bartborrow.bart import InputError, McmcConfig
from bartborrow.effects import (
    EffectSummary,
    PosteriorDraws,
    conditional_effect_draws,
    dirichlet_weights,
    estimate_cate,
    estimate_pate,
    test_superiority as superiority,
)
from bartborrow.models import METHODS, fit_method
from bartborrow.simgen import ScenarioSpec, generate_scenario


class ConstantDraws(PosteriorDraws):
    def __init__(self, f1, f0, L=50):
        self.f1, self.f0, self.L = f1, f0, L

    @property
    def n_draws(self):
        return self.L

    def control_surface(self, X, source=0):
        return np.full((self.L, np.atleast_2d(X).shape[0]), self.f0)

    def treatment_surface(self, X):
        return np.full((self.L, np.atleast_2d(X).shape[0]), self.f1)


class LinearToy(PosteriorDraws):
    """f1(x) = a_l + x, f0(x) = b_l x with random per-draw coefficients."""

    def __init__(self, L=200, seed=0):
        rng = np.random.default_rng(seed)
        self.a, self.b = rng.normal(size=L), rng.normal(size=L)

    @property
    def n_draws(self):
        return self.a.size

    def control_surface(self, X, source=0):
        return self.b[:, None] * np.atleast_2d(X)[:, 0]

    def treatment_surface(self, X):
        return self.a[:, None] + np.atleast_2d(X)[:, 0]


def test_equal_surfaces_give_zero():
    post = ConstantDraws(1.5, 1.5)
    np.testing.assert_array_equal(conditional_effect_draws(post, [0.3]), 0.0)


def test_constant_surfaces():
    post = ConstantDraws(2.0, 0.5)
    np.testing.assert_array_equal(conditional_effect_draws(post, [0.3, 1.0]), 1.5)
    s = estimate_cate(post, np.zeros((4, 2)))
    assert s.mean == 1.5 and s.ci_length == 0.0


def test_vector_vs_matrix_shapes():
    post = LinearToy()
    assert conditional_effect_draws(post, [0.5]).shape == (200,)
    assert conditional_effect_draws(post, np.zeros((3, 1))).shape == (200, 3)


def test_single_patient_cate_is_the_conditional_effect():
    post = LinearToy()
    x = np.array([[0.4]])
    np.testing.assert_array_equal(estimate_cate(post, x).draws, conditional_effect_draws(post, x[0]))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 12))
def test_cate_is_the_mean_of_conditional_effects(seed, n):
    post = LinearToy(seed=seed)
    X = np.random.default_rng(seed).normal(size=(n, 1))
    np.testing.assert_array_equal(estimate_cate(post, X).draws, conditional_effect_draws(post, X).mean(axis=1))


def test_pate_of_constant_effect_is_exact():
    s = estimate_pate(ConstantDraws(3.0, 1.0), np.random.default_rng(0).normal(size=(9, 1)), seed=1)
    np.testing.assert_allclose(s.draws, 2.0, rtol=0, atol=1e-12)


def test_pate_is_seeded():
    post, X = LinearToy(), np.linspace(0, 1, 7)[:, None]
    np.testing.assert_array_equal(estimate_pate(post, X, 3).draws, estimate_pate(post, X, 3).draws)
    assert not np.array_equal(estimate_pate(post, X, 3).draws, estimate_pate(post, X, 4).draws)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 30))
def test_dirichlet_weights_are_a_simplex(seed, n):
    w = dirichlet_weights(n, 40, np.random.default_rng(seed))
    assert np.all(w >= 0)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)


def test_dirichlet_weights_have_mean_one_over_n():
    n, L = 8, 20_000
    w = dirichlet_weights(n, L, np.random.default_rng(0))
    # flat Dirichlet: Var(w_i) = (n - 1) / (n^2 (n + 1))
    se = np.sqrt((n - 1) / (n**2 * (n + 1)) / L)
    # the two-sided 3-SE level, Bonferroni-split over the n components
    z = stats.norm.isf(stats.norm.sf(3.0) / n)
    assert np.all(np.abs(w.mean(axis=0) - 1 / n) < z * se)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), l1=st.floats(0.5, 0.98), l2=st.floats(0.5, 0.98))
def test_wider_level_never_shrinks_interval(seed, l1, l2):
    s = EffectSummary(np.random.default_rng(seed).standard_t(3, 300))
    lo_a, hi_a = s.interval(min(l1, l2))
    lo_b, hi_b = s.interval(max(l1, l2))
    assert lo_b <= lo_a and hi_a <= hi_b


def test_interval_contains_median():
    s = EffectSummary(np.random.default_rng(1).gamma(2.0, size=500))
    assert s.ci_low <= np.median(s.draws) <= s.ci_high


def test_summary_rejects_empty_and_bad_level():
    with pytest.raises(InputError):
        EffectSummary(np.array([]))
    with pytest.raises(InputError):
        EffectSummary(np.ones(5)).interval(1.0)


class TestSuperiority:
    def test_all_above(self):
        t = superiority(EffectSummary(np.full(100, 0.3)), 0.1)
        assert t.posterior_prob == 1.0 and t.reject

    def test_symmetric_draws(self):
        d = np.r_[np.linspace(-1, -0.01, 50), np.linspace(0.01, 1, 50)]
        t = superiority(EffectSummary(d), 0.0)
        assert t.posterior_prob == 0.5 and not t.reject

    def test_strict_inequality_at_level(self):
        d = np.r_[np.ones(95), -np.ones(5)]
        assert not superiority(EffectSummary(d), 0.0, 0.95).reject


@pytest.mark.parametrize("method", METHODS)
def test_every_method_goes_through_the_same_summaries(method):
    gen = generate_scenario(ScenarioSpec(3, "cond-indep", seed=2))
    post = fit_method(method, gen.dataset, McmcConfig(150, 50, 1))
    X = gen.dataset.trial_covariates
    delta = conditional_effect_draws(post, X)
    assert delta.shape == (100, X.shape[0]) and np.all(np.isfinite(delta))
    cate = estimate_cate(post, X)
    pate = estimate_pate(post, X, seed=0)
    assert cate.ci_low <= cate.mean <= cate.ci_high
    assert abs(cate.mean - 0.5) < 0.2 and abs(pate.mean - 0.5) < 0.2

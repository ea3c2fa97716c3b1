import numpy as np
import pytest

from bartborrow.bart import BartHyper, InputError, McmcConfig
from bartborrow.data import TrialDataset
from bartborrow.diagnostics import permutation_test_ci, pseudo_r2
from bartborrow.simgen import ScenarioSpec, generate_scenario

FAST = McmcConfig(150, 50)
SMALL = BartHyper(m=20)


class TestPseudoR2:
    def test_perfect_fit(self):
        assert pseudo_r2([1.0, 2.0, 4.0], [1.0, 2.0, 4.0]) == 1.0

    def test_mean_fit(self):
        y = np.array([1.0, 2.0, 4.0])
        assert pseudo_r2(y, np.full(3, y.mean())) == pytest.approx(0.0, abs=1e-15)

    def test_arithmetic(self):
        assert pseudo_r2([0.0, 1.0, 2.0], [0.0, 1.0, 1.0]) == 0.5

    def test_constant_y(self):
        with pytest.raises(InputError):
            pseudo_r2([2.0, 2.0], [1.0, 3.0])

    def test_lengths(self):
        with pytest.raises(InputError):
            pseudo_r2([1.0, 2.0], [1.0])
        with pytest.raises(InputError):
            pseudo_r2([1.0], [1.0])


def scenario3(variant, seed):
    return generate_scenario(ScenarioSpec(3, variant, seed=seed)).dataset


def test_shifted_source_gives_small_p():
    res = permutation_test_ci(scenario3("violated", 1), n_perm=20, mcmc=FAST, seed=1, hyper=SMALL)
    assert res.p_value < 0.1
    assert res.observed_r2 > max(res.null_r2)


def test_p_value_is_a_multiple_of_one_over_n_perm():
    res = permutation_test_ci(scenario3("cond-indep", 2), n_perm=8, mcmc=FAST, seed=3, hyper=SMALL)
    assert 0.0 <= res.p_value <= 1.0
    assert res.p_value * 8 == round(res.p_value * 8)
    assert len(res.null_r2) == res.n_perm == 8
    assert res.p_value == sum(r >= res.observed_r2 for r in res.null_r2) / 8


def test_deterministic_given_seed():
    ds = scenario3("cond-indep", 4)
    a = permutation_test_ci(ds, n_perm=4, mcmc=FAST, seed=7, hyper=SMALL)
    b = permutation_test_ci(ds, n_perm=4, mcmc=FAST, seed=7, hyper=SMALL)
    assert a == b


def test_ties_count_against_rejection():
    # a constant-in-source outcome fitted identically under every permutation
    rng = np.random.default_rng(0)
    n = 40
    X = rng.uniform(size=(n, 1))
    ds = TrialDataset(X[:, 0] * 2, np.zeros(n, int), np.r_[np.zeros(20, int), np.ones(20, int)], X)
    res = permutation_test_ci(ds, n_perm=3, mcmc=McmcConfig(20, 10), seed=0, hyper=BartHyper(m=1))
    ties = sum(r == res.observed_r2 for r in res.null_r2)
    assert res.p_value >= ties / 3


def test_single_source_rejected():
    ds = scenario3("cond-indep", 0).trial_only()
    with pytest.raises(InputError):
        permutation_test_ci(ds, n_perm=2)


def test_uses_control_rows_only():
    ds = scenario3("violated", 5)
    a = permutation_test_ci(ds, n_perm=3, mcmc=FAST, seed=2, hyper=SMALL)
    b = permutation_test_ci(ds.controls(), n_perm=3, mcmc=FAST, seed=2, hyper=SMALL)
    assert a == b

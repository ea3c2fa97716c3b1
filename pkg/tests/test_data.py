from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bartborrow.bart import InputError
from bartborrow.data import (
    ACUPUNCTURE_SCHEMA,
    DatasetError,
    TrialDataset,
    load_dataset,
    outcome_shift,
    synthesize_external,
    write_dataset,
)
from bartborrow.simgen import ScenarioSpec, generate_scenario

FIXTURE = Path(__file__).parent / "data" / "acupuncture_fixture.csv"


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoad:
    def test_acupuncture_fixture(self):
        ds = load_dataset(FIXTURE, ACUPUNCTURE_SCHEMA)
        assert ds.n == 19  # one row has a missing 12-month score
        assert ds.covariate_names == ("pk1", "age", "sex", "migraine", "chronicity")
        assert ds.binary == (False, False, True, True, False)
        assert np.all(ds.source == 0)
        # outcome is the decrease: baseline minus 12-month score
        np.testing.assert_allclose(ds.outcome[0], 24.0 - 26.22)

    def test_round_trip(self, tmp_path):
        ds = generate_scenario(ScenarioSpec(2, "multi-source", seed=1)).dataset
        p = tmp_path / "rt.csv"
        write_dataset(ds, p)
        back = load_dataset(p)
        np.testing.assert_array_equal(back.outcome, ds.outcome)
        np.testing.assert_array_equal(back.arm, ds.arm)
        np.testing.assert_array_equal(back.source, ds.source)
        np.testing.assert_array_equal(back.covariates, ds.covariates)
        assert back.covariate_names == ds.covariate_names

    @settings(max_examples=25, deadline=None)
    @given(vals=st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=4, max_size=4))
    def test_round_trip_exact_floats(self, tmp_path_factory, vals):
        ds = TrialDataset(vals, [0, 1, 0, 0], [0, 0, 1, 1], np.array(vals)[:, None] / 3)
        p = tmp_path_factory.mktemp("rt") / "d.csv"
        write_dataset(ds, p)
        back = load_dataset(p)
        np.testing.assert_array_equal(back.outcome, ds.outcome)
        np.testing.assert_array_equal(back.covariates, ds.covariates)

    def test_external_treated_row_rejected(self, tmp_path):
        p = write(tmp_path, "outcome,arm,source,x\n1,0,0,0.1\n2,1,0,0.2\n3,1,1,0.3\n")
        with pytest.raises(DatasetError, match="row 3"):
            load_dataset(p)

    def test_non_numeric_cell(self, tmp_path):
        p = write(tmp_path, "outcome,arm,source,x\n1,0,0,abc\n2,1,0,0.2\n")
        with pytest.raises(DatasetError, match=r"row 1, column 'x'"):
            load_dataset(p)

    def test_missing_value(self, tmp_path):
        p = write(tmp_path, "outcome,arm,source,x\n1,0,0,0.1\n,1,0,0.2\n")
        with pytest.raises(DatasetError, match=r"row 2, column 'outcome'"):
            load_dataset(p)

    def test_missing_column(self, tmp_path):
        p = write(tmp_path, "outcome,arm,x\n1,0,0.1\n")
        with pytest.raises(DatasetError, match="source"):
            load_dataset(p)

    def test_ragged_row(self, tmp_path):
        p = write(tmp_path, "outcome,arm,source,x\n1,0,0\n")
        with pytest.raises(DatasetError, match="row 1"):
            load_dataset(p)

    def test_two_level_binary_coerced(self, tmp_path):
        p = write(tmp_path, "y,arm,sex\n1,0,1\n2,1,2\n3,0,2\n")
        ds = load_dataset(p, {"outcome": "y", "source": None, "binary": ["sex"]})
        np.testing.assert_array_equal(ds.covariates[:, 0], [0, 1, 1])

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetError):
            load_dataset(tmp_path / "nope.csv")

    def test_unknown_schema_key(self):
        with pytest.raises(DatasetError):
            load_dataset(FIXTURE, {"outcom": "y"})


class TestDataset:
    def test_bad_arm(self):
        with pytest.raises(DatasetError):
            TrialDataset([1.0, 2.0], [0, 0.5], [0, 0], [[0.0], [1.0]])

    def test_trial_needs_both_arms(self):
        ds = TrialDataset([1.0, 2.0], [0, 0], [0, 1], [[0.0], [1.0]])
        with pytest.raises(DatasetError):
            ds.validate()

    def test_binary_detection(self):
        ds = TrialDataset([1.0, 2.0, 3.0], [0, 1, 0], [0, 0, 0], [[0, 0.3], [1, 0.2], [1, 0.9]])
        assert ds.binary == (True, False)


class TestSynthesize:
    def trial(self):
        rng = np.random.default_rng(0)
        n = 200
        X = np.column_stack([rng.uniform(10, 60, n), rng.normal(45, 10, n), rng.integers(0, 2, n)])
        arm = np.r_[np.zeros(n // 2, int), np.ones(n // 2, int)]
        y = 0.2 * X[:, 0] + 3 * arm + rng.normal(0, 2, n)
        return TrialDataset(y, arm, np.zeros(n, int), X, ("pk1", "age", "sex"))

    def test_outcome_shift_endpoints(self):
        assert outcome_shift(100.0) == 0.0
        assert outcome_shift(0.0) == 5.0

    def test_mimic_means_match_controls(self):
        trial = self.trial()
        ctrl = trial.subset(trial.arm == 0)
        ext = synthesize_external(trial, 2000, "mimic", seed=1)
        assert np.all(ext.source == 1) and np.all(ext.arm == 0)
        cols = np.column_stack([ctrl.outcome, ctrl.covariates])
        syn = np.column_stack([ext.outcome, ext.covariates])
        # resampling oracle: the synthetic mean has SE about sd / sqrt(n_ctrl)
        se = cols.std(axis=0, ddof=1) / np.sqrt(ctrl.n)
        assert np.all(np.abs(syn.mean(axis=0) - cols.mean(axis=0)) < 4 * se)
        assert set(np.unique(ext.covariates[:, 2])) <= {0.0, 1.0}

    def test_covariate_shift_favours_low_baseline(self):
        trial = self.trial()
        ext = synthesize_external(trial, 2000, "covariate-shift", seed=1, baseline="pk1")
        assert ext.covariates[:, 0].mean() < trial.controls().covariates[:, 0].mean() - 3

    def test_outcome_shift_adds_formula(self):
        trial = self.trial()
        a = synthesize_external(trial, 300, "mimic", seed=4, baseline="pk1")
        b = synthesize_external(trial, 300, "outcome-shift", seed=4, baseline="pk1")
        np.testing.assert_allclose(b.outcome - a.outcome, 5 - 0.05 * a.covariates[:, 0])

    def test_errors(self):
        trial = self.trial()
        with pytest.raises(InputError):
            synthesize_external(trial, 0)
        with pytest.raises(InputError):
            synthesize_external(trial, 10, "other")
        with pytest.raises(InputError):
            synthesize_external(trial.subset(np.arange(trial.n) >= 95), 10)

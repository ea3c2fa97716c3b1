"""Trial datasets: validation, delimited-text I/O and synthetic external controls."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bart.trees import InputError


class DatasetError(InputError):
    """A dataset file or table that violates the expected layout."""


@dataclass
class TrialDataset:
    """Rows of ``(outcome, arm, source, covariates)``.

    Source 0 is the current trial; sources ``1..J`` are external datasets,
    whose patients all received the control.
    """

    outcome: np.ndarray
    arm: np.ndarray
    source: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple = ()
    binary: tuple = ()

    def __post_init__(self):
        self.outcome = np.asarray(self.outcome, dtype=float).ravel()
        n = self.outcome.shape[0]
        arm, source = np.asarray(self.arm).ravel(), np.asarray(self.source).ravel()
        if np.any((arm != 0) & (arm != 1)):
            raise DatasetError("arm must be 0 or 1")
        if np.any(source != np.round(source)):
            raise DatasetError("source levels must be integers")
        self.arm = arm.astype(np.int64)
        self.source = source.astype(np.int64)
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X.reshape(n, -1) if n else X.reshape(0, 0)
        self.covariates = X
        q = X.shape[1]
        if not self.covariate_names:
            self.covariate_names = tuple(f"x{k + 1}" for k in range(q))
        self.covariate_names = tuple(self.covariate_names)
        if not self.binary:
            self.binary = tuple(bool(n) and bool(np.all((X[:, k] == 0) | (X[:, k] == 1))) for k in range(q))
        self.binary = tuple(bool(b) for b in self.binary)

    def validate(self, require_both_arms: bool = True) -> TrialDataset:
        n = self.outcome.shape[0]
        if n == 0:
            raise DatasetError("dataset has no rows")
        if self.arm.shape[0] != n or self.source.shape[0] != n or self.covariates.shape[0] != n:
            raise DatasetError("column lengths differ")
        if len(self.covariate_names) != self.n_covariates or len(self.binary) != self.n_covariates:
            raise DatasetError("covariate metadata does not match the covariate matrix")
        if not np.all(np.isfinite(self.outcome)) or not np.all(np.isfinite(self.covariates)):
            raise DatasetError("missing or non-finite values")
        if not np.all((self.arm == 0) | (self.arm == 1)):
            raise DatasetError("arm must be 0 or 1")
        if np.any(self.source < 0):
            raise DatasetError("source must be >= 0")
        bad = np.flatnonzero((self.source > 0) & (self.arm == 1))
        if bad.size:
            raise DatasetError(f"row {bad[0] + 1}: external patients must be in the control arm")
        for k, is_bin in enumerate(self.binary):
            if is_bin and not np.all((self.covariates[:, k] == 0) | (self.covariates[:, k] == 1)):
                raise DatasetError(f"binary column {self.covariate_names[k]!r} has values other than 0/1")
        if require_both_arms:
            trial = self.source == 0
            if not np.any(trial & (self.arm == 0)) or not np.any(trial & (self.arm == 1)):
                raise DatasetError("the current trial (source 0) needs patients in both arms")
        return self

    @property
    def n(self) -> int:
        return self.outcome.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_external_sources(self) -> int:
        ext = self.source[self.source > 0]
        return int(np.unique(ext).size)

    @property
    def trial(self) -> np.ndarray:
        return self.source == 0

    @property
    def trial_covariates(self) -> np.ndarray:
        return self.covariates[self.trial]

    def subset(self, mask) -> TrialDataset:
        mask = np.asarray(mask)
        return TrialDataset(
            self.outcome[mask],
            self.arm[mask],
            self.source[mask],
            self.covariates[mask],
            self.covariate_names,
            self.binary,
        )

    def trial_only(self) -> TrialDataset:
        return self.subset(self.trial)

    def controls(self) -> TrialDataset:
        return self.subset(self.arm == 0)

    def concat(self, other: TrialDataset) -> TrialDataset:
        if other.covariate_names != self.covariate_names:
            raise DatasetError("covariate columns differ")
        return TrialDataset(
            np.r_[self.outcome, other.outcome],
            np.r_[self.arm, other.arm],
            np.r_[self.source, other.source],
            np.vstack([self.covariates, other.covariates]),
            self.covariate_names,
            tuple(a and b for a, b in zip(self.binary, other.binary)),
        )


# --------------------------------------------------------------------------
# delimited text

#: Column roles for the public acupuncture headache trial. The outcome is the
#: decrease in headache score, baseline minus 12 months, as given by
#: ``pk1 - pk5``; patients with a missing value in any used column are dropped.
ACUPUNCTURE_SCHEMA = {
    "outcome": ["pk1", "pk5"],
    "arm": "group",
    "source": None,
    "covariates": ["pk1", "age", "sex", "migraine", "chronicity"],
    "binary": ["sex", "migraine"],
    "complete_cases": True,
}

_MISSING = {"", "na", "nan", "null", "none", "."}


@dataclass
class Schema:
    """Which file columns play which role.

    ``outcome`` is a column name, or a pair ``[a, b]`` meaning ``a - b``.
    ``source`` may be omitted (every row is then trial data). Covariates
    default to every remaining column.
    """

    outcome: object = "outcome"
    arm: str = "arm"
    source: str | None = "source"
    covariates: list | None = None
    binary: list | None = None
    complete_cases: bool = False

    @classmethod
    def from_mapping(cls, mapping: dict | None) -> Schema:
        if mapping is None:
            return cls()
        unknown = set(mapping) - set(cls.__dataclass_fields__)
        if unknown:
            raise DatasetError(f"unknown schema keys: {sorted(unknown)}")
        return cls(**mapping)


def _parse_cell(text: str, row: int, col: str) -> float:
    t = text.strip()
    if t.lower() in _MISSING:
        return math.nan
    try:
        return float(t)
    except ValueError:
        raise DatasetError(f"row {row}, column {col!r}: non-numeric value {t!r}") from None


def load_dataset(path, schema: dict | Schema | None = None, require_both_arms: bool = True) -> TrialDataset:
    """Read a comma-delimited dataset with a header row.

    Errors name the offending row (1-based, header excluded) and column.
    """
    schema = schema if isinstance(schema, Schema) else Schema.from_mapping(schema)
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path}: no such file")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        rows = [r for r in reader if any(cell.strip() for cell in r)]

    out_cols = list(schema.outcome) if isinstance(schema.outcome, (list, tuple)) else [schema.outcome]
    role_cols = out_cols + [schema.arm] + ([schema.source] if schema.source else [])
    covs = list(schema.covariates) if schema.covariates is not None else [c for c in header if c not in role_cols]
    for col in dict.fromkeys(role_cols + covs):
        if col not in header:
            raise DatasetError(f"{path}: missing column {col!r}")
    used = list(dict.fromkeys(role_cols + covs))
    index = {c: header.index(c) for c in used}

    table = np.empty((len(rows), len(used)))
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise DatasetError(f"row {r}: expected {len(header)} fields, found {len(row)}")
        for k, col in enumerate(used):
            table[r - 1, k] = _parse_cell(row[index[col]], r, col)

    missing = np.isnan(table)
    if missing.any():
        if schema.complete_cases:
            table = table[~missing.any(axis=1)]
        else:
            r, k = np.argwhere(missing)[0]
            raise DatasetError(f"row {r + 1}, column {used[k]!r}: missing value")
    col = {c: table[:, k] for k, c in enumerate(used)}
    y = col[out_cols[0]] - col[out_cols[1]] if len(out_cols) == 2 else col[out_cols[0]]
    arm = col[schema.arm]
    if not np.all((arm == 0) | (arm == 1)):
        r = int(np.flatnonzero((arm != 0) & (arm != 1))[0]) + 1
        raise DatasetError(f"row {r}, column {schema.arm!r}: arm must be 0 or 1")
    source = col[schema.source] if schema.source else np.zeros(len(y))
    if not np.all(source == np.round(source)):
        raise DatasetError(f"column {schema.source!r}: source levels must be integers")
    X = np.column_stack([col[c] for c in covs]) if covs else np.zeros((len(y), 0))
    binary = tuple(c in (schema.binary or []) for c in covs) if schema.binary is not None else ()
    if schema.binary is not None:
        for c in schema.binary:
            v = col[c]
            if not np.all((v == 0) | (v == 1)):
                # coerce two-level codings (e.g. 1/2) onto 0/1
                lv = np.unique(v)
                if lv.size != 2:
                    raise DatasetError(f"column {c!r}: binary covariate with {lv.size} levels")
                X[:, covs.index(c)] = (v == lv[1]).astype(float)
    ds = TrialDataset(y, arm, source, X, tuple(covs), binary)
    return ds.validate(require_both_arms)


def _fmt(v: float) -> str:
    return repr(float(v))


def dataset_to_csv(ds: TrialDataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["outcome", "arm", "source", *ds.covariate_names])
    for i in range(ds.n):
        cov = [str(int(v)) if b else _fmt(v) for v, b in zip(ds.covariates[i], ds.binary)]
        w.writerow([_fmt(ds.outcome[i]), int(ds.arm[i]), int(ds.source[i]), *cov])
    return buf.getvalue()


def write_dataset(ds: TrialDataset, path) -> None:
    """Write the canonical ``outcome,arm,source,<covariates>`` layout; floats
    are written with round-trip precision."""
    Path(path).write_text(dataset_to_csv(ds))


# --------------------------------------------------------------------------
# synthetic external controls

SYNTH_MODES = ("mimic", "covariate-shift", "outcome-shift")
JITTER_FRACTION = 0.05


def synthesize_external(
    trial: TrialDataset,
    n_ext: int,
    mode: str = "mimic",
    seed=None,
    baseline: str | int = 0,
    source: int = 1,
) -> TrialDataset:
    """Generate external control patients that resemble the trial controls.

    ``mimic`` resamples control patients, jitters continuous covariates by
    ``0.05 * column SD`` and takes each outcome from the nearest trial control
    (standardized covariate distance) plus a little residual-scale noise.
    ``covariate-shift`` does the same with resampling weights that favour low
    values of the ``baseline`` covariate. ``outcome-shift`` is ``mimic``
    followed by ``y + 5 - 0.05 * baseline``.
    """
    if mode not in SYNTH_MODES:
        raise InputError(f"mode must be one of {SYNTH_MODES}")
    if n_ext < 1:
        raise InputError("n_ext must be >= 1")
    ctrl = trial.subset((trial.source == 0) & (trial.arm == 0))
    if ctrl.n < 10:
        raise InputError("need at least 10 trial control patients")
    rng = np.random.default_rng(seed)
    X, y = ctrl.covariates, ctrl.outcome
    b = baseline if isinstance(baseline, int) else ctrl.covariate_names.index(baseline)
    sd = X.std(axis=0, ddof=1)
    sd[sd == 0] = 1.0

    if mode == "covariate-shift":
        z = (X[:, b] - X[:, b].mean()) / sd[b]
        w = np.exp(-z)
        pick = rng.choice(ctrl.n, size=n_ext, p=w / w.sum())
    else:
        pick = rng.integers(0, ctrl.n, size=n_ext)

    Xs = X[pick].copy()
    cont = ~np.asarray(ctrl.binary, dtype=bool)
    Xs[:, cont] += rng.normal(0.0, 1.0, (n_ext, cont.sum())) * (JITTER_FRACTION * sd[cont])

    A = np.column_stack([np.ones(ctrl.n), X])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    dof = max(ctrl.n - np.linalg.matrix_rank(A), 1)
    resid_sd = float(np.sqrt(np.sum((y - A @ coef) ** 2) / dof))
    dist = (((Xs[:, None, :] - X[None, :, :]) / sd) ** 2).sum(axis=2)
    nearest = dist.argmin(axis=1)
    ys = y[nearest] + rng.normal(0.0, JITTER_FRACTION * resid_sd, n_ext)
    if mode == "outcome-shift":
        ys = ys + outcome_shift(Xs[:, b])
    return TrialDataset(ys, np.zeros(n_ext), np.full(n_ext, source), Xs, ctrl.covariate_names, ctrl.binary)


def outcome_shift(baseline) -> np.ndarray:
    return 5.0 - 0.05 * np.asarray(baseline, dtype=float)

"""Simulation scenarios with known truth, per-fit metrics and the replication runner."""

from __future__ import annotations

import csv
import io
import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import norm

from .bart import BartHyper, InputError, McmcConfig
from .data import TrialDataset
from .effects import cate_from_effects, conditional_effect_draws, test_superiority
from .models import METHODS, child_seed, fit_method

log = logging.getLogger(__name__)

VARIANTS = ("cond-indep", "violated", "multi-source")

#: Margin for the power test, by scenario.
MARGIN = {1: 0.08, 2: 0.25, 3: 0.08}

THREADS_ENV = "BARTBORROW_THREADS"

_OFFDIAG_VALUES = np.array([0.1, 0.4, 0.7, -0.3])
_OFFDIAG_PROBS = np.array([0.4, 0.3, 0.1, 0.2])
_BETA_VALUES = np.array([0.1, 0.7])
_BETA_PROBS = np.array([0.3, 0.7])
_DIFF_VALUES = np.array([0.2, -0.2, 0.0])
_DIFF_PROBS = np.array([0.3, 0.3, 0.4])


@dataclass(frozen=True)
class ScenarioSpec:
    scenario_id: int = 1
    variant: str = "cond-indep"
    n_trial: int = 50
    n_external: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.scenario_id not in (1, 2, 3):
            raise InputError("scenario_id must be 1, 2 or 3")
        if self.variant not in VARIANTS:
            raise InputError(f"variant must be one of {VARIANTS}")
        if self.n_trial < 1 or (self.n_external is not None and self.n_external < 1):
            raise InputError("sample sizes must be >= 1")

    @property
    def n_sources(self) -> int:
        return 4 if self.variant == "multi-source" else 1

    @property
    def n_per_source(self) -> int:
        if self.n_external is not None:
            return self.n_external
        return 50 if self.variant == "multi-source" else 200

    @property
    def n_covariates(self) -> int:
        return 1 if self.scenario_id == 1 else 4

    @property
    def margin(self) -> float:
        return MARGIN[self.scenario_id]


@dataclass(frozen=True)
class ScenarioTruth:
    """Mean functions of one generated dataset. ``beta*`` are empty for Scenarios 1 and 3."""

    scenario_id: int
    variant: str
    beta0: np.ndarray = field(default_factory=lambda: np.zeros(0))
    beta1: np.ndarray = field(default_factory=lambda: np.zeros(0))
    beta_diff: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def shifted(self, source: int) -> bool:
        """Whether the control mean of ``source`` differs from the trial's."""
        if source == 0 or self.variant == "cond-indep":
            return False
        if self.variant == "violated":
            return True
        return source in (3, 4)

    def treatment_mean(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.scenario_id == 1:
            x = X[:, 0]
            return 0.84 + (x - 1.0) ** 2
        if self.scenario_id == 2:
            return X @ self.beta1 + 5.0
        return np.full(X.shape[0], 0.7)

    def control_mean(self, X, source=0) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        src = np.broadcast_to(np.asarray(source, dtype=np.int64), (X.shape[0],))
        shift = np.array([self.shifted(int(s)) for s in src], dtype=bool)
        if self.scenario_id == 1:
            x2 = X[:, 0] ** 2
            return np.where(shift, 1.4 - 1.2 * x2, 1.0 - x2)
        if self.scenario_id == 2:
            base = X @ self.beta0
            alt = X @ (self.beta0 + self.beta_diff) if self.beta_diff.size else base
            return np.exp(np.where(shift, alt, base))
        return np.where(shift, 0.4, 0.2)

    def effect(self, X) -> np.ndarray:
        return self.treatment_mean(X) - self.control_mean(X, 0)

    @property
    def noise_sd(self) -> float:
        return 0.5 if self.scenario_id == 2 else 0.1


@dataclass
class GeneratedData:
    dataset: TrialDataset
    truth: ScenarioTruth
    spec: ScenarioSpec
    cate_true: float = field(init=False)

    def __post_init__(self):
        self.cate_true = float(np.mean(self.truth.effect(self.dataset.trial_covariates)))

    @property
    def effect_true(self) -> np.ndarray:
        return self.truth.effect(self.dataset.trial_covariates)

    @property
    def discrepancy_true(self) -> dict:
        return {s: cate_discrepancy(self, s) for s in range(1, self.spec.n_sources + 1)}


def random_correlation(rng: np.random.Generator, dim: int = 4, max_tries: int = 100) -> np.ndarray:
    """Unit-diagonal matrix with off-diagonals drawn from the scenario's
    discrete distribution; eigenvalues are clipped at 1e-6 and the diagonal
    rescaled when the draw is not positive definite."""
    for _ in range(max_tries):
        omega = np.eye(dim)
        iu = np.triu_indices(dim, 1)
        omega[iu] = rng.choice(_OFFDIAG_VALUES, size=len(iu[0]), p=_OFFDIAG_PROBS)
        omega = omega + np.triu(omega, 1).T
        if np.linalg.eigvalsh(omega).min() <= 0:
            w, V = np.linalg.eigh(omega)
            omega = (V * np.maximum(w, 1e-6)) @ V.T
            d = np.sqrt(np.diag(omega))
            omega = omega / np.outer(d, d)
            omega = 0.5 * (omega + omega.T)
        try:
            np.linalg.cholesky(omega)
        except np.linalg.LinAlgError:
            continue
        return omega
    raise RuntimeError("could not draw a positive-definite correlation matrix")


def _mvn_covariates(rng, n, mean, sd, chol, binary_shift, binary_slope):
    if n == 0:
        return np.zeros((0, 4))
    Z = mean + sd * rng.standard_normal((n, 4)) @ chol.T
    p = norm.cdf(binary_slope * Z[:, 3] - binary_shift)
    Z[:, 3] = (rng.random(n) < p).astype(float)
    return Z


def generate_scenario(spec: ScenarioSpec, seed=None) -> GeneratedData:
    """Draw one dataset (current trial plus external controls) and attach its truth.

    ``seed`` overrides ``spec.seed`` and may be a SeedSequence.
    """
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    sid = spec.scenario_id
    n_ext = spec.n_per_source
    J = spec.n_sources
    src_ext = np.repeat(np.arange(1, J + 1), n_ext)

    if sid == 1:
        truth = ScenarioTruth(1, spec.variant)

        def covariates(n, trial_like):
            mean, sd = (0.7, 0.2) if trial_like else (0.3, 0.4)
            return rng.normal(mean, sd, (n, 1))

    else:
        chol = np.linalg.cholesky(random_correlation(rng))
        if sid == 2:
            beta0 = rng.choice(_BETA_VALUES, 4, p=_BETA_PROBS)
            beta1 = rng.choice(_BETA_VALUES, 4, p=_BETA_PROBS)
            beta_diff = np.zeros(4)
            if spec.variant != "cond-indep":
                while not np.any(beta_diff):
                    beta_diff = rng.choice(_DIFF_VALUES, 4, p=_DIFF_PROBS)
            truth = ScenarioTruth(2, spec.variant, beta0, beta1, beta_diff)

            def covariates(n, trial_like):
                mean, sd = (0.7, 0.2) if trial_like else (0.3, 0.4)
                return _mvn_covariates(rng, n, mean, sd, chol, 0.5, 1.0)

        else:
            truth = ScenarioTruth(3, spec.variant)

            def covariates(n, trial_like):
                return _mvn_covariates(rng, n, 0.5, 0.5, chol, 1.0, 2.0)

    X_trial = covariates(spec.n_trial, True)
    arm = (rng.random(spec.n_trial) < 0.5).astype(np.int64)
    if J == 1:
        X_ext = covariates(n_ext, False)
    else:
        # sources 1 and 3 look like the trial population, 2 and 4 like the external one
        X_ext = np.vstack([covariates(n_ext, s in (1, 3)) for s in range(1, J + 1)])

    sd = truth.noise_sd
    mu_trial = np.where(arm == 1, truth.treatment_mean(X_trial), truth.control_mean(X_trial, 0))
    y_trial = mu_trial + rng.normal(0.0, sd, spec.n_trial)
    y_ext = truth.control_mean(X_ext, src_ext) + rng.normal(0.0, sd, src_ext.shape[0])

    names = ("x",) if sid == 1 else ("x1", "x2", "x3", "x4")
    binary = (False,) if sid == 1 else (False, False, False, True)
    ds = TrialDataset(
        np.r_[y_trial, y_ext],
        np.r_[arm, np.zeros(src_ext.shape[0], np.int64)],
        np.r_[np.zeros(spec.n_trial, np.int64), src_ext],
        np.vstack([X_trial, X_ext]),
        names,
        binary,
    )
    return GeneratedData(ds, truth, spec)


def cate_discrepancy(gen: GeneratedData, source: int) -> float:
    """Mean over trial patients of ``E[Y | T=0, X, S=0] - E[Y | T=0, X, S=source]``."""
    if source not in range(1, gen.spec.n_sources + 1):
        raise InputError(f"unknown external source {source}")
    X = gen.dataset.trial_covariates
    return float(np.mean(gen.truth.control_mean(X, 0) - gen.truth.control_mean(X, source)))


# --------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class MetricsRow:
    bias: float
    rmse: float
    coverage: int
    ci_length: float
    pehe: float
    reject_test1: int
    reject_test2: int


def compute_metrics(summary, effect_draws: np.ndarray, gen: GeneratedData, d: float | None = None) -> MetricsRow:
    """Bias, posterior RMSE, coverage, CI length, PEHE and the two test decisions
    of one fitted CATE summary against the truth of ``gen``.

    ``effect_draws`` holds per-patient conditional effect draws ``(L, N_trial)``.
    """
    d = gen.spec.margin if d is None else d
    if d <= 0:
        raise InputError("margin d must be positive")
    truth = gen.cate_true
    draws = summary.draws
    delta_hat = effect_draws.mean(axis=0)
    return MetricsRow(
        bias=summary.mean - truth,
        rmse=float(np.sqrt(np.mean((draws - truth) ** 2))),
        coverage=int(summary.ci_low <= truth <= summary.ci_high),
        ci_length=summary.ci_length,
        pehe=float(np.sqrt(np.mean((delta_hat - gen.effect_true) ** 2))),
        reject_test1=int(test_superiority(summary, truth).reject),
        reject_test2=int(test_superiority(summary, truth - d).reject),
    )


# --------------------------------------------------------------------------
# replication study

REPORT_COLUMNS = ("Model", "Bias", "RMSE", "%Cover", "CI length", "PEHE", "%Rej.1", "%Rej.2")


@dataclass
class ReplicationReport:
    scenario_id: int
    variant: str
    n_reps: int
    master_seed: int
    rows: dict  # method -> list[MetricsRow]
    cate_true: list
    discrepancy: list
    failures: dict = field(default_factory=dict)

    def table(self) -> list[dict]:
        """Averages over replications; effect-scale columns multiplied by 100."""
        out = []
        for method, rows in self.rows.items():
            if not rows:
                continue
            a = {k: np.mean([getattr(r, k) for r in rows]) for k in MetricsRow.__dataclass_fields__}
            out.append(
                {
                    "Model": method,
                    "Bias": 100 * a["bias"],
                    "RMSE": 100 * a["rmse"],
                    "%Cover": 100 * a["coverage"],
                    "CI length": 100 * a["ci_length"],
                    "PEHE": 100 * a["pehe"],
                    "%Rej.1": 100 * a["reject_test1"],
                    "%Rej.2": 100 * a["reject_test2"],
                }
            )
        return out

    def row(self, method: str) -> dict:
        for r in self.table():
            if r["Model"] == method:
                return r
        raise KeyError(method)

    @property
    def avg_cate(self) -> float:
        return 100 * float(np.mean(self.cate_true))

    @property
    def avg_discrepancy(self) -> float:
        return 100 * float(np.mean(self.discrepancy))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# scenario={self.scenario_id} variant={self.variant} reps={self.n_reps} seed={self.master_seed}\n")
        buf.write(f"# avg_cate_x100={self.avg_cate:.4f} avg_discrepancy_x100={self.avg_discrepancy:.4f}\n")
        if any(self.failures.values()):
            fails = " ".join(f"{k}={v}" for k, v in self.failures.items() if v)
            buf.write(f"# failures {fails}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.table():
            w.writerow([r["Model"]] + [f"{r[c]:.4f}" for c in REPORT_COLUMNS[1:]])
        return buf.getvalue()


def load_report(text: str) -> tuple[dict, list[dict]]:
    """Parse :meth:`ReplicationReport.to_csv` output into ``(metadata, rows)``."""
    meta, lines = {}, []
    for line in text.splitlines():
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta[k] = v
        elif line.strip():
            lines.append(line)
    reader = csv.DictReader(lines)
    if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
        raise InputError(f"unexpected report header {reader.fieldnames}")
    rows = [{k: (v if k == "Model" else float(v)) for k, v in r.items()} for r in reader]
    return meta, rows


def _one_replication(args):
    spec, methods, rep, mcmc, master_seed, hyper = args
    gen = generate_scenario(spec, np.random.SeedSequence(entropy=master_seed, spawn_key=(rep, 0)))
    X = gen.dataset.trial_covariates
    result = {}
    for name in methods:
        seed = child_seed(master_seed, rep, 1 + METHODS.index(name))
        try:
            post = fit_method(name, gen.dataset, McmcConfig(mcmc.n_iter, mcmc.n_burn, seed), hyper)
            delta = conditional_effect_draws(post, X)
            result[name] = compute_metrics(cate_from_effects(delta), delta, gen)
        except (InputError, np.linalg.LinAlgError, FloatingPointError) as exc:
            log.warning("replication %d: %s failed: %s", rep, name, exc)
            result[name] = None
    disc = np.mean(list(gen.discrepancy_true.values()))
    return gen.cate_true, float(disc), result


def default_jobs() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def run_replications(
    spec: ScenarioSpec,
    methods=METHODS,
    n_reps: int = 100,
    mcmc: McmcConfig | None = None,
    master_seed: int = 0,
    hyper: BartHyper | None = None,
    n_jobs: int | None = None,
    progress=None,
) -> ReplicationReport:
    """Generate ``n_reps`` datasets, fit every method to each and collect metrics.

    Replication ``r`` draws its data and each method's chain from seeds
    derived from ``(master_seed, r)`` alone, so results do not depend on
    ``n_jobs`` or on which other methods are requested.
    """
    if n_reps < 1:
        raise InputError("n_reps must be >= 1")
    methods = tuple(methods)
    for m in methods:
        if m not in METHODS:
            raise InputError(f"unknown method {m!r}")
    mcmc = mcmc or McmcConfig()
    n_jobs = n_jobs or default_jobs()
    tasks = [(spec, methods, r, mcmc, master_seed, hyper) for r in range(n_reps)]
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as pool:
            results = list(pool.map(_one_replication, tasks))
    else:
        results = []
        for t in tasks:
            results.append(_one_replication(t))
            if progress:
                progress(len(results), n_reps)

    rows = {m: [] for m in methods}
    failures = {m: 0 for m in methods}
    for _, _, res in results:
        for m in methods:
            if res[m] is None:
                failures[m] += 1
            else:
                rows[m].append(res[m])
    if any(failures.values()):
        warnings.warn(f"failed fits excluded: {failures}", RuntimeWarning, stacklevel=2)
    return ReplicationReport(
        scenario_id=spec.scenario_id,
        variant=spec.variant,
        n_reps=n_reps,
        master_seed=master_seed,
        rows=rows,
        cate_true=[c for c, _, _ in results],
        discrepancy=[d for _, d, _ in results],
        failures=failures,
    )


def metrics_as_dict(row: MetricsRow) -> dict:
    return asdict(row)

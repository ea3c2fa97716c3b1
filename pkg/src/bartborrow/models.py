"""The six analysis models: BART, HLM, NNHM and their trial-only versions.

HLM and NNHM are fitted by a conjugate Gibbs sampler that updates, in
order, the population means, the population variances, the per-source
coefficients and the error variances. NNHM is the same sampler with no
covariates; the trial-only versions drop the hierarchy and give the single
set of control coefficients the ``N(0, 10^2)`` prior directly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .bart import BartHyper, BartPosterior, InputError, McmcConfig, fit_bart
from .data import TrialDataset
from .effects import PosteriorDraws

METHODS = ("BART", "HLM", "NNHM", "BART-", "HLM-", "NNHM-")

#: ``IG(nu, nu)`` variance priors, shape ``nu`` and rate ``nu``.
IG_NU = 1e-4
#: Prior SD of every top-level mean and regression coefficient.
COEF_PRIOR_SD = 10.0


def child_seed(seed, *path) -> int:
    """Independent integer seed for a named sub-task of ``seed``."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def inv_gamma(rng: np.random.Generator, shape, rate):
    """Draw from ``IG(shape, rate)``, i.e. ``1 / Gamma(shape, rate)``."""
    shape, rate = np.broadcast_arrays(np.asarray(shape, dtype=float), np.asarray(rate, dtype=float))
    return rate / rng.standard_gamma(shape)


# --------------------------------------------------------------------------
# BART


@dataclass
class BartDraws(PosteriorDraws):
    control: BartPosterior
    treatment: BartPosterior
    borrow: bool
    method: str = "BART"

    @property
    def n_draws(self) -> int:
        return min(self.control.n_draws, self.treatment.n_draws)

    @property
    def sigma0_draws(self):
        return self.control.sigma_draws

    @property
    def sigma1_draws(self):
        return self.treatment.sigma_draws

    def control_surface(self, X, source=0):
        if self.borrow:
            return self.control.predict_draws(X, source)
        if np.any(np.asarray(source) != 0):
            raise InputError("a trial-only fit has no external control surface")
        return self.control.predict_draws(X)

    def treatment_surface(self, X):
        return self.treatment.predict_draws(X)


def _check_trial(data: TrialDataset):
    data.validate(require_both_arms=True)
    if data.n_covariates < 1:
        raise InputError("at least one covariate is required")


def fit_bart_borrow(data: TrialDataset, mcmc: McmcConfig | None = None, hyper: BartHyper | None = None) -> BartDraws:
    """BART with the source indicator as a split variable of the control surface."""
    mcmc = mcmc or McmcConfig()
    _check_trial(data)
    ctrl = data.arm == 0
    treat = (data.arm == 1) & data.trial
    f0 = fit_bart(
        data.outcome[ctrl], data.covariates[ctrl], data.source[ctrl], hyper,
        replace(mcmc, seed=child_seed(mcmc.seed, 0)),
    )
    f1 = fit_bart(data.outcome[treat], data.covariates[treat], None, hyper, replace(mcmc, seed=child_seed(mcmc.seed, 1)))
    return BartDraws(f0, f1, borrow=True, method="BART")


def _fit_bart_trial_only(data: TrialDataset, mcmc: McmcConfig, hyper: BartHyper | None) -> BartDraws:
    ctrl = (data.arm == 0) & data.trial
    treat = (data.arm == 1) & data.trial
    f0 = fit_bart(data.outcome[ctrl], data.covariates[ctrl], None, hyper, replace(mcmc, seed=child_seed(mcmc.seed, 0)))
    f1 = fit_bart(data.outcome[treat], data.covariates[treat], None, hyper, replace(mcmc, seed=child_seed(mcmc.seed, 1)))
    return BartDraws(f0, f1, borrow=False, method="BART-")


# --------------------------------------------------------------------------
# linear / normal-normal models


@dataclass
class LinearDraws(PosteriorDraws):
    """Draws of ``f0(x, s) = a0[s] + x'b0[s]`` and ``f1(x) = a1 + x'b1``.

    Models without covariates have zero-width slope arrays and constant
    surfaces.
    """

    levels: tuple
    intercept0: np.ndarray  # (L, G)
    slope0: np.ndarray  # (L, G, Q)
    intercept1: np.ndarray  # (L,)
    slope1: np.ndarray  # (L, Q)
    sigma0_draws: np.ndarray
    sigma1_draws: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    method: str = "HLM"

    @property
    def n_draws(self) -> int:
        return self.intercept1.shape[0]

    def _z(self, X):
        X = np.asarray(X, dtype=float)
        if self.slope1.shape[1] == 0:
            return np.zeros((X.shape[0], 0))
        return (X - self.center) / self.scale

    def control_surface(self, X, source=0):
        Z = self._z(X)
        src = np.broadcast_to(np.asarray(source, dtype=np.int64), (Z.shape[0],))
        try:
            g = np.array([self.levels.index(int(s)) for s in src], dtype=np.int64)
        except ValueError:
            raise InputError(f"source level not in {self.levels}") from None
        return self.intercept0[:, g] + np.einsum("nq,lnq->ln", Z, self.slope0[:, g, :])

    def treatment_surface(self, X):
        Z = self._z(X)
        return self.intercept1[:, None] + self.slope1 @ Z.T


def _gibbs_regression(groups, rng, mcmc: McmcConfig, hierarchical: bool, nu: float = IG_NU):
    """Gibbs sampler for ``y_g ~ N(Z_g theta_g, sigma^2)`` over groups ``g``.

    With ``hierarchical`` the group coefficients share a population mean
    (prior ``N(0, 10^2)`` per component) and per-component variances
    (``IG(nu, nu)``); otherwise every ``theta_g ~ N(0, 10^2 I)``. Returns
    draws of theta ``(L, G, d)`` and sigma ``(L,)``.
    """
    G = len(groups)
    d = groups[0][0].shape[1]
    ZtZ = np.stack([Z.T @ Z for Z, _ in groups])
    Zty = np.stack([Z.T @ y for Z, y in groups])
    yty = np.array([y @ y for _, y in groups])
    n_total = sum(y.shape[0] for _, y in groups)

    Z_all = np.vstack([Z for Z, _ in groups])
    y_all = np.concatenate([y for _, y in groups])
    init, *_ = np.linalg.lstsq(Z_all.T @ Z_all + 1e-6 * np.eye(d), Z_all.T @ y_all, rcond=None)
    theta = np.tile(init, (G, 1))
    resid = y_all - Z_all @ init
    sig2 = max(float(resid @ resid) / max(n_total - d, 1), 1e-8)
    hmean = init.copy()
    tau2 = np.ones(d)
    prior_var = COEF_PRIOR_SD**2

    L = mcmc.n_draws
    theta_out = np.empty((L, G, d))
    sigma_out = np.empty(L)
    eye = np.eye(d)
    for it in range(mcmc.n_iter):
        if hierarchical:
            prec = G / tau2 + 1.0 / prior_var
            mean = (theta.sum(axis=0) / tau2) / prec
            hmean = mean + rng.standard_normal(d) / np.sqrt(prec)
            ss = ((theta - hmean) ** 2).sum(axis=0)
            tau2 = inv_gamma(rng, nu + 0.5 * G, nu + 0.5 * ss)
            prior_prec, prior_mean = 1.0 / tau2, hmean
        else:
            prior_prec, prior_mean = np.full(d, 1.0 / prior_var), np.zeros(d)

        P = ZtZ / sig2 + prior_prec[None, :, None] * eye
        b = Zty / sig2 + prior_prec * prior_mean
        chol = np.linalg.cholesky(P)
        mean = np.linalg.solve(P, b[..., None])[..., 0]
        z = rng.standard_normal((G, d))
        theta = mean + np.linalg.solve(np.swapaxes(chol, 1, 2), z[..., None])[..., 0]

        ssr = float(np.sum(yty - 2.0 * np.einsum("gd,gd->g", theta, Zty) + np.einsum("gd,gde,ge->g", theta, ZtZ, theta)))
        sig2 = inv_gamma(rng, nu + 0.5 * n_total, nu + 0.5 * max(ssr, 0.0))

        if it >= mcmc.n_burn:
            theta_out[it - mcmc.n_burn] = theta
            sigma_out[it - mcmc.n_burn] = np.sqrt(sig2)
    return theta_out, sigma_out


def _fit_linear(
    data: TrialDataset,
    mcmc: McmcConfig,
    covariates: bool,
    borrow: bool,
    method: str,
    standardize: bool = False,
) -> LinearDraws:
    X = data.covariates if covariates else np.zeros((data.n, 0))
    if standardize and covariates:
        center = X[data.trial].mean(axis=0)
        scale = X[data.trial].std(axis=0)
        scale[scale == 0] = 1.0
    else:
        center, scale = np.zeros(X.shape[1]), np.ones(X.shape[1])
    Z = np.column_stack([np.ones(data.n), (X - center) / scale])

    ctrl = data.arm == 0
    if not borrow:
        ctrl = ctrl & data.trial
    levels = tuple(int(s) for s in np.unique(data.source[ctrl]))
    min_rows = 2 if covariates else 1
    groups = []
    for s in levels:
        rows = ctrl & (data.source == s)
        if rows.sum() < min_rows:
            raise InputError(f"source {s} has fewer than {min_rows} control patients")
        groups.append((Z[rows], data.outcome[rows]))
    treat = (data.arm == 1) & data.trial

    rng = np.random.default_rng(np.random.SeedSequence(mcmc.seed))
    theta0, sigma0 = _gibbs_regression(groups, rng, mcmc, hierarchical=borrow)
    theta1, sigma1 = _gibbs_regression([(Z[treat], data.outcome[treat])], rng, mcmc, hierarchical=False)
    return LinearDraws(
        levels=levels,
        intercept0=theta0[:, :, 0],
        slope0=theta0[:, :, 1:],
        intercept1=theta1[:, 0, 0],
        slope1=theta1[:, 0, 1:],
        sigma0_draws=sigma0,
        sigma1_draws=sigma1,
        center=center,
        scale=scale,
        method=method,
    )


def fit_hlm(data: TrialDataset, mcmc: McmcConfig | None = None, standardize: bool = False) -> LinearDraws:
    """Hierarchical linear model: per-source control intercepts and slopes
    shrunk toward common means; separate linear treatment surface."""
    _check_trial(data)
    return _fit_linear(data, mcmc or McmcConfig(), covariates=True, borrow=True, method="HLM", standardize=standardize)


def fit_nnhm(data: TrialDataset, mcmc: McmcConfig | None = None) -> LinearDraws:
    """Normal-normal hierarchical model on the control means, ignoring covariates."""
    data.validate(require_both_arms=True)
    if data.n_external_sources < 1:
        raise InputError("NNHM needs at least one external data source")
    return _fit_linear(data, mcmc or McmcConfig(), covariates=False, borrow=True, method="NNHM")


def fit_no_borrow(method: str, data: TrialDataset, mcmc: McmcConfig | None = None, hyper: BartHyper | None = None, standardize: bool = False) -> PosteriorDraws:
    """Fit ``BART-``, ``HLM-`` or ``NNHM-`` to the current-trial rows only."""
    mcmc = mcmc or McmcConfig()
    trial = data.trial_only()
    if not np.any(trial.arm == 0) or not np.any(trial.arm == 1):
        raise InputError("the current trial needs patients in both arms")
    trial.validate(require_both_arms=True)
    if method == "BART-":
        if trial.n_covariates < 1:
            raise InputError("at least one covariate is required")
        return _fit_bart_trial_only(trial, mcmc, hyper)
    if method == "HLM-":
        if trial.n_covariates < 1:
            raise InputError("at least one covariate is required")
        return _fit_linear(trial, mcmc, covariates=True, borrow=False, method="HLM-", standardize=standardize)
    if method == "NNHM-":
        return _fit_linear(trial, mcmc, covariates=False, borrow=False, method="NNHM-")
    raise InputError(f"unknown trial-only method {method!r}")


def fit_method(method: str, data: TrialDataset, mcmc: McmcConfig | None = None, hyper: BartHyper | None = None, standardize: bool = False) -> PosteriorDraws:
    mcmc = mcmc or McmcConfig()
    if method == "BART":
        return fit_bart_borrow(data, mcmc, hyper)
    if method == "HLM":
        return fit_hlm(data, mcmc, standardize)
    if method == "NNHM":
        return fit_nnhm(data, mcmc)
    if method in ("BART-", "HLM-", "NNHM-"):
        return fit_no_borrow(method, data, mcmc, hyper, standardize)
    raise InputError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")

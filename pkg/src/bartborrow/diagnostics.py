"""Permutation check of whether the data source predicts control outcomes given covariates."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bart import BartHyper, InputError, McmcConfig, fit_bart
from .data import TrialDataset
from .simgen import default_jobs

#: Lighter defaults for the 1 + n_perm fits.
DIAG_MCMC = McmcConfig(n_iter=500, n_burn=100)
DIAG_HYPER = BartHyper(m=50)


def pseudo_r2(y, y_hat) -> float:
    """``1 - SSR / SST`` of fitted values ``y_hat``."""
    y = np.asarray(y, dtype=float).ravel()
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    if y.shape != y_hat.shape or y.size < 2:
        raise InputError("y and y_hat need equal lengths of at least 2")
    sst = np.sum((y - y.mean()) ** 2)
    if sst == 0:
        raise InputError("pseudo-R2 is undefined for constant y")
    return float(1.0 - np.sum((y - y_hat) ** 2) / sst)


@dataclass(frozen=True)
class PermutationResult:
    observed_r2: float
    null_r2: tuple
    p_value: float
    n_perm: int


def _fit_r2(args):
    y, X, s, mcmc, hyper = args
    post = fit_bart(y, X, s, hyper, mcmc, keep_trees=False)
    return pseudo_r2(y, post.fitted_mean)


def permutation_test_ci(
    control_data: TrialDataset,
    n_perm: int = 100,
    mcmc: McmcConfig | None = None,
    seed=0,
    hyper: BartHyper | None = None,
    n_jobs: int | None = None,
) -> PermutationResult:
    """Refit ``f0(x, s)`` with the source labels shuffled and compare fit quality.

    ``p_value`` is the share of permuted fits whose pseudo-R2 is at least the
    observed one. Only control rows (``arm == 0``) are used.
    """
    if n_perm < 1:
        raise InputError("n_perm must be >= 1")
    ctrl = control_data.controls() if np.any(control_data.arm == 1) else control_data
    if np.unique(ctrl.source).size < 2:
        raise InputError("the permutation test needs control rows from at least two sources")
    mcmc = mcmc or DIAG_MCMC
    hyper = hyper or DIAG_HYPER

    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    fit_seeds = root.spawn(n_perm + 1)
    perm_rng = np.random.default_rng(root.spawn(1)[0])
    perms = [perm_rng.permutation(ctrl.source) for _ in range(n_perm)]

    y, X = ctrl.outcome, ctrl.covariates
    tasks = [(y, X, ctrl.source, McmcConfig(mcmc.n_iter, mcmc.n_burn, fit_seeds[0]), hyper)]
    tasks += [(y, X, p, McmcConfig(mcmc.n_iter, mcmc.n_burn, fit_seeds[i + 1]), hyper) for i, p in enumerate(perms)]

    n_jobs = n_jobs or default_jobs()
    if n_jobs > 1 and os.cpu_count() and os.cpu_count() > 1:
        with ProcessPoolExecutor(n_jobs) as pool:
            r2 = list(pool.map(_fit_r2, tasks))
    else:
        r2 = [_fit_r2(t) for t in tasks]

    observed, null = r2[0], np.asarray(r2[1:])
    p = float(np.count_nonzero(null >= observed)) / n_perm
    return PermutationResult(observed, tuple(float(v) for v in null), p, n_perm)

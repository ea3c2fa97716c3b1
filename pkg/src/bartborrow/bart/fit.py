"""Fitting a single BART surface and reading its posterior back out."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import _kernel
from .trees import (
    SOURCE,
    BartHyper,
    DecisionTree,
    Forest,
    InputError,
    McmcConfig,
    Node,
    SplitGrid,
    SplitRule,
)

#: GROW, PRUNE, CHANGE, SWAP proposal probabilities before renormalization.
MOVE_PROBS = np.array([0.25, 0.25, 0.40, 0.10])

MOVE_NAMES = ("grow", "prune", "change", "swap")


def seed_key(seed) -> np.uint64:
    """64-bit stream key derived from an int seed or a SeedSequence."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return ss.generate_state(1, dtype=np.uint64)[0]


def least_squares_sigma(y, design) -> float:
    """Residual SD of an OLS fit of ``y`` on ``[1, design]``; the sample SD of
    ``y`` when the design is rank deficient or has too few rows."""
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    A = np.column_stack([np.ones(n), design]) if design.size else np.ones((n, 1))
    rank = np.linalg.matrix_rank(A)
    if rank < A.shape[1] or n <= A.shape[1]:
        return float(np.std(y, ddof=1)) if n > 1 else 0.0
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return float(np.sqrt(resid @ resid / (n - rank)))


def _check_inputs(y, X, source):
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise InputError("covariates must be a 2-D array")
    n = y.shape[0]
    if n == 0 or X.shape[0] == 0:
        raise InputError("empty design")
    if X.shape[0] != n:
        raise InputError(f"{X.shape[0]} covariate rows for {n} outcomes")
    if n < 2:
        raise InputError("need at least two observations")
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)):
        raise InputError("outcomes and covariates must be finite")
    if source is not None:
        source = np.asarray(source).ravel()
        if source.shape[0] != n:
            raise InputError("source length does not match outcomes")
        if not np.all(source == np.round(source)):
            raise InputError("source levels must be integers")
        source = source.astype(np.int64)
    return y, X, source


@dataclass
class _Layout:
    """How covariates (and the source column, if any) map onto kernel variables."""

    grid: SplitGrid
    n_features: int
    has_source: bool

    @property
    def kinds(self) -> np.ndarray:
        k = [_kernel.ORDERED] * self.n_features + ([_kernel.UNORDERED] if self.has_source else [])
        return np.array(k, dtype=np.int8)

    @property
    def ncat(self) -> np.ndarray:
        n = [len(self.grid.cutpoints[q]) for q in range(self.n_features)]
        if self.has_source:
            n.append(len(self.grid.levels[SOURCE]))
        return np.array(n, dtype=np.int64)

    def bin(self, X, source=None) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :] if self.n_features > 1 or X.shape[0] == 1 else X[:, None]
        if X.shape[1] != self.n_features:
            raise InputError(f"expected {self.n_features} covariates, got {X.shape[1]}")
        cols = [np.searchsorted(self.grid.cutpoints[q], X[:, q], side="left") for q in range(self.n_features)]
        if self.has_source:
            if source is None:
                raise InputError("this surface depends on the source indicator; pass source")
            levels = np.asarray(self.grid.levels[SOURCE])
            s = np.broadcast_to(np.asarray(source, dtype=np.int64), (X.shape[0],))
            code = np.searchsorted(levels, s)
            code = np.minimum(code, len(levels) - 1)
            if not np.all(levels[code] == s):
                raise InputError(f"unknown source level(s) {sorted(set(s) - set(levels.tolist()))}")
            cols.append(code)
        return np.ascontiguousarray(np.column_stack(cols).astype(np.int32)) if cols else np.zeros((X.shape[0], 0), np.int32)


@dataclass
class BartPosterior:
    """Retained draws of one sum-of-trees surface.

    Values are reported on the outcome scale; internally the chain runs on
    ``(y - offset) / scale``.
    """

    hyper: BartHyper
    mcmc: McmcConfig
    layout: _Layout
    offset: float
    scale: float
    sigma_draws: np.ndarray
    fitted_mean: np.ndarray
    proposed: np.ndarray
    accepted: np.ndarray
    _roots: np.ndarray
    _f_var: np.ndarray
    _f_cut: np.ndarray
    _f_val: np.ndarray
    _f_left: np.ndarray

    @property
    def n_draws(self) -> int:
        return self.sigma_draws.shape[0]

    @property
    def has_trees(self) -> bool:
        return self._roots.shape[0] > 0

    @property
    def acceptance(self) -> dict:
        return {
            name: (int(a), int(p)) for name, a, p in zip(MOVE_NAMES, self.accepted, self.proposed)
        }

    def predict_draws(self, X, source=None) -> np.ndarray:
        """Surface evaluations, shape ``(n_draws, n_points)``."""
        if not self.has_trees:
            raise InputError("fit was run with keep_trees=False")
        xidx = self.layout.bin(X, source)
        raw = _kernel.predict_flat(
            self._roots, self._f_var, self._f_cut, self._f_val, self._f_left, xidx, self.layout.kinds
        )
        return self.offset + self.scale * raw

    def predict_mean(self, X, source=None) -> np.ndarray:
        return self.predict_draws(X, source).mean(axis=0)

    def forest(self, ell: int) -> Forest:
        """Draw ``ell`` as a :class:`Forest` of plain-Python trees."""
        if not self.has_trees:
            raise InputError("fit was run with keep_trees=False")
        trees = [DecisionTree(self._node(int(f)), self.layout.n_features) for f in self._roots[ell]]
        return Forest(trees, offset=self.offset, scale=self.scale, sigma=float(self.sigma_draws[ell]))

    def _node(self, f: int) -> Node:
        q = int(self._f_var[f])
        if q == _kernel.LEAF:
            return Node(value=float(self._f_val[f]))
        grid = self.layout.grid
        c = int(self._f_cut[f])
        if q == self.layout.n_features:
            levels = grid.levels[SOURCE]
            rule = SplitRule(SOURCE, left_levels=frozenset(lv for b, lv in enumerate(levels) if (c >> b) & 1))
        else:
            rule = SplitRule(q, threshold=float(grid.cutpoints[q][c]))
        left = int(self._f_left[f])
        return Node(rule=rule, left=self._node(left), right=self._node(left + 1))


def fit_bart(
    y,
    X,
    source=None,
    hyper: BartHyper | None = None,
    mcmc: McmcConfig | None = None,
    *,
    keep_trees: bool = True,
    structure_moves: bool = True,
    sigma: float | None = None,
) -> BartPosterior:
    """Run the backfitting MCMC for ``y = f(X[, source]) + N(0, sigma^2)``.

    Parameters
    ----------
    y : (n,) array
    X : (n, Q) array
        Covariates; 0/1 columns are treated as binary.
    source : (n,) int array, optional
        Data-source levels, used as an unordered split variable.
    hyper, mcmc :
        Priors and chain settings; library defaults when omitted.
    keep_trees : bool
        Store every retained forest so surfaces can be evaluated at new
        points. Without it only ``sigma_draws`` and ``fitted_mean`` exist.
    structure_moves : bool
        If False, trees stay at their root and only leaf values and sigma
        are sampled.
    sigma : float, optional
        Hold the error SD fixed at this value (outcome scale) instead of
        sampling it.

    Rows are sorted by a stable key of their values before sampling, so the
    draws do not depend on the order in which rows were supplied.
    """
    hyper = hyper or BartHyper()
    mcmc = mcmc or McmcConfig()
    y, X, source = _check_inputs(y, X, source)
    n = y.shape[0]

    keys = [y] + [X[:, q] for q in range(X.shape[1])] + ([source] if source is not None else [])
    order = np.lexsort(keys[::-1])
    y_s, X_s = y[order], X[order]
    src_s = source[order] if source is not None else None

    grid = SplitGrid.from_design(X_s, hyper.cutpoint_count, src_s)
    layout = _Layout(grid, X.shape[1], source is not None)

    lo, hi = float(y_s.min()), float(y_s.max())
    offset = 0.5 * (lo + hi)
    scale = hi - lo if hi > lo else 1.0
    z = (y_s - offset) / scale

    ols_design = X_s
    if src_s is not None:
        levels = grid.levels[SOURCE]
        dummies = np.column_stack([(src_s == lv).astype(float) for lv in levels[1:]]) if len(levels) > 1 else np.zeros((n, 0))
        ols_design = np.column_stack([X_s, dummies])
    sigma_hat = max(least_squares_sigma(z, ols_design), 1e-6)
    lam = sigma_hat**2 * stats.chi2.ppf(1.0 - hyper.q_sigma, hyper.nu_sigma) / hyper.nu_sigma

    update_sigma = sigma is None
    sigma_init = sigma_hat if update_sigma else float(sigma) / scale
    if not update_sigma and sigma <= 0:
        raise InputError("fixed sigma must be positive")

    out = _kernel.run_chain(
        np.ascontiguousarray(z),
        layout.bin(X_s, src_s),
        layout.kinds,
        layout.ncat,
        hyper.m,
        hyper.rho,
        hyper.kappa,
        hyper.max_depth,
        hyper.sigma_mu,
        hyper.nu_sigma,
        lam,
        sigma_init,
        MOVE_PROBS,
        structure_moves,
        update_sigma,
        mcmc.n_iter,
        mcmc.n_burn,
        seed_key(mcmc.seed),
        keep_trees,
    )
    sigma_draws, fit_sum, proposed, accepted, roots, f_var, f_cut, f_val, f_left = out
    fitted = np.empty(n)
    fitted[order] = offset + scale * fit_sum
    return BartPosterior(
        hyper=hyper,
        mcmc=mcmc,
        layout=layout,
        offset=offset,
        scale=scale,
        sigma_draws=scale * sigma_draws,
        fitted_mean=fitted,
        proposed=proposed,
        accepted=accepted,
        _roots=roots,
        _f_var=f_var,
        _f_cut=f_cut,
        _f_val=f_val,
        _f_left=f_left,
    )

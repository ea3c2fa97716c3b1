"""Decision trees, sum-of-trees forests and the BART regularization priors.

These are plain-Python reference objects. The MCMC kernel in
:mod:`bartborrow.bart._kernel` works on flat arrays for speed and converts
its state to these types on request, so every quantity the sampler uses can
be checked here against an independent, readable implementation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

import numpy as np

#: Split-variable tag for the data-source indicator ``s``.
SOURCE = "source"

Variable = Union[int, str]


class InputError(ValueError):
    """Raised for malformed model inputs (shapes, empty designs, bad levels)."""


@dataclass(frozen=True)
class BartHyper:
    """Prior hyperparameters of a BART model.

    ``max_depth`` is a hard cap: nodes at that depth are never split. With the
    default depth penalty the prior mass beyond depth 10 is below 1e-12.
    """

    m: int = 200
    rho: float = 0.95
    kappa: float = 2.0
    k_mu: float = 2.0
    nu_sigma: float = 3.0
    q_sigma: float = 0.90
    cutpoint_count: int = 100
    max_depth: int = 10

    def __post_init__(self):
        if self.m < 1:
            raise InputError("m must be >= 1")
        if not 0.0 < self.rho < 1.0:
            raise InputError("rho must lie in (0, 1)")
        if self.kappa < 0:
            raise InputError("kappa must be >= 0")
        if self.cutpoint_count < 2:
            raise InputError("cutpoint_count must be >= 2")
        if self.k_mu <= 0 or self.nu_sigma <= 0 or not 0 < self.q_sigma < 1:
            raise InputError("k_mu, nu_sigma must be positive and q_sigma in (0, 1)")
        if not 1 <= self.max_depth <= 20:
            raise InputError("max_depth must lie in [1, 20]")

    @property
    def sigma_mu(self) -> float:
        """Leaf prior SD on the internal [-0.5, 0.5] outcome scale."""
        return 0.5 / (self.k_mu * math.sqrt(self.m))

    def split_prob(self, depth: int) -> float:
        return self.rho * (1.0 + depth) ** (-self.kappa)


@dataclass(frozen=True)
class McmcConfig:
    n_iter: int = 1100
    n_burn: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.n_iter < 1 or self.n_burn < 0 or self.n_burn >= self.n_iter:
            raise InputError("need 0 <= n_burn < n_iter")

    @property
    def n_draws(self) -> int:
        return self.n_iter - self.n_burn


@dataclass(frozen=True)
class SplitRule:
    """Send ``x[variable] <= threshold`` (ordered) or ``value in left_levels``
    (unordered, e.g. the source indicator) to the left child."""

    variable: Variable
    threshold: float | None = None
    left_levels: frozenset | None = None

    def __post_init__(self):
        if (self.threshold is None) == (self.left_levels is None):
            raise InputError("a split rule needs exactly one of threshold / left_levels")
        if self.left_levels is not None and not isinstance(self.left_levels, frozenset):
            object.__setattr__(self, "left_levels", frozenset(self.left_levels))

    @property
    def categorical(self) -> bool:
        return self.left_levels is not None

    def goes_left(self, value) -> bool:
        if self.left_levels is not None:
            return value in self.left_levels
        return value <= self.threshold


@dataclass
class Node:
    rule: SplitRule | None = None
    left: Node | None = None
    right: Node | None = None
    value: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.rule is None


def leaf(value: float = 0.0) -> Node:
    return Node(value=float(value))


def split(rule: SplitRule, left: Node, right: Node) -> Node:
    return Node(rule=rule, left=left, right=right)


class DecisionTree:
    """Binary regression tree over covariates ``x`` (length ``n_features``)
    and, optionally, a source level ``s``."""

    def __init__(self, root: Node, n_features: int):
        self.root = root
        self.n_features = int(n_features)
        for node, _ in self.walk():
            if node.is_leaf:
                if node.left is not None or node.right is not None:
                    raise InputError("terminal node with children")
            elif node.left is None or node.right is None:
                raise InputError("internal node must have exactly two children")
            else:
                var = node.rule.variable
                if var != SOURCE and not 0 <= var < self.n_features:
                    raise InputError(f"split variable {var!r} out of range")

    def walk(self) -> Iterator[tuple[Node, int]]:
        """Pre-order traversal yielding ``(node, depth)``."""
        stack = [(self.root, 0)]
        while stack:
            node, depth = stack.pop()
            yield node, depth
            if not node.is_leaf:
                stack.append((node.right, depth + 1))
                stack.append((node.left, depth + 1))

    def leaves(self) -> list[Node]:
        return [node for node, _ in self.walk() if node.is_leaf]

    @property
    def leaf_values(self) -> np.ndarray:
        return np.array([node.value for node in self.leaves()])

    @property
    def n_leaves(self) -> int:
        return len(self.leaves())

    @property
    def depth(self) -> int:
        return max(d for _, d in self.walk())

    def route(self, x, s=0) -> Node:
        x = np.asarray(x, dtype=float).ravel()
        if x.shape[0] != self.n_features:
            raise InputError(f"expected {self.n_features} covariates, got {x.shape[0]}")
        node = self.root
        while not node.is_leaf:
            var = node.rule.variable
            value = s if var == SOURCE else x[var]
            node = node.left if node.rule.goes_left(value) else node.right
        return node


@dataclass
class Forest:
    """``offset + scale * sum_j g(x, s; tree_j)`` plus the residual SD."""

    trees: list[DecisionTree]
    offset: float = 0.0
    scale: float = 1.0
    sigma: float = 1.0

    def __post_init__(self):
        if len(self.trees) < 1:
            raise InputError("a forest needs at least one tree")
        if self.scale <= 0 or self.sigma <= 0:
            raise InputError("scale and sigma must be positive")

    @property
    def m(self) -> int:
        return len(self.trees)


def evaluate_tree(tree: DecisionTree, x, s=0) -> float:
    """Leaf mean of the terminal node that ``(x, s)`` is routed to."""
    return tree.route(x, s).value


def predict_forest(forest: Forest, x, s=0) -> float:
    total = 0.0
    for tree in forest.trees:
        total += evaluate_tree(tree, x, s)
    return forest.offset + forest.scale * total


@dataclass
class SplitGrid:
    """Candidate split rules per variable.

    ``cutpoints[var]`` is a sorted array of thresholds for an ordered
    variable; ``levels[var]`` is the sorted tuple of observed levels of an
    unordered one. A node may use a cutpoint only if it lies strictly inside
    the range left open by its ancestors, and a level partition only of the
    levels that can still reach it.
    """

    cutpoints: dict = field(default_factory=dict)
    levels: dict = field(default_factory=dict)

    @property
    def variables(self) -> list:
        return list(self.cutpoints) + list(self.levels)

    def root_availability(self) -> dict:
        avail = {v: (0, len(c) - 1) for v, c in self.cutpoints.items()}
        avail.update({v: frozenset(lv) for v, lv in self.levels.items()})
        return avail

    def n_rules(self, var, avail) -> int:
        if var in self.levels:
            k = len(avail)
            return 2 ** (k - 1) - 1 if k >= 2 else 0
        lo, hi = avail
        return max(hi - lo + 1, 0)

    def cut_index(self, var, threshold: float) -> int:
        cuts = self.cutpoints[var]
        idx = int(np.searchsorted(cuts, threshold))
        if idx >= len(cuts) or not math.isclose(cuts[idx], threshold, rel_tol=1e-12, abs_tol=1e-12):
            raise InputError(f"threshold {threshold} is not a grid cutpoint of {var!r}")
        return idx

    def children_availability(self, avail: dict, rule: SplitRule):
        """Availability maps of the two children, or ``None`` if the rule is
        not admissible at a node with availability ``avail``."""
        var = rule.variable
        if var in self.levels:
            if not rule.categorical:
                return None
            live = avail[var]
            left = rule.left_levels
            # Canonical orientation: the smallest live level goes left.
            if len(live) < 2 or not left <= live or left == live or not left or min(live) not in left:
                return None
            lo_map, hi_map = dict(avail), dict(avail)
            lo_map[var] = frozenset(left)
            hi_map[var] = frozenset(live - left)
            return lo_map, hi_map
        if var not in self.cutpoints or rule.categorical:
            return None
        lo, hi = avail[var]
        c = self.cut_index(var, rule.threshold)
        if not lo <= c <= hi:
            return None
        left_map, right_map = dict(avail), dict(avail)
        left_map[var] = (lo, c - 1)
        right_map[var] = (c + 1, hi)
        return left_map, right_map

    @classmethod
    def from_design(cls, X, cutpoint_count: int = 100, source=None) -> SplitGrid:
        """Equally spaced interior cutpoints per continuous column, the single
        split {0}|{1} for binary columns, and the observed source levels."""
        X = np.asarray(X, dtype=float)
        cutpoints = {q: column_cutpoints(X[:, q], cutpoint_count) for q in range(X.shape[1])}
        levels = {}
        if source is not None:
            levels[SOURCE] = tuple(int(v) for v in np.unique(source))
        return cls(cutpoints, levels)


def column_cutpoints(column, cutpoint_count: int) -> np.ndarray:
    column = np.asarray(column, dtype=float)
    lo, hi = float(column.min()), float(column.max())
    if hi <= lo:
        return np.empty(0)
    if np.all((column == 0.0) | (column == 1.0)):
        return np.array([0.5])
    k = np.arange(1, cutpoint_count + 1)
    return lo + k * (hi - lo) / (cutpoint_count + 1)


def log_tree_structure_prior(tree: DecisionTree, hyper: BartHyper, grid: SplitGrid | None = None) -> float:
    """Log prior probability of a tree's shape and split rules.

    Each node at depth ``d`` splits with probability ``rho (1 + d)^-kappa``.
    Without a grid only this structural part is returned and every node is
    assumed splittable. With a grid, a node that has no admissible rule left
    (or sits at ``max_depth``) is terminal with probability one, and each
    split contributes the uniform choice of variable among those with an
    admissible rule and of rule within that variable. Returns ``-inf`` for a
    tree whose rules are inadmissible under the grid.
    """
    if grid is None:
        total = 0.0
        for node, depth in tree.walk():
            p = hyper.split_prob(depth)
            total += math.log(p) if not node.is_leaf else math.log1p(-p)
        return total
    return _log_prior_node(tree.root, 0, grid.root_availability(), grid, hyper)


def _log_prior_node(node: Node, depth: int, avail: dict, grid: SplitGrid, hyper: BartHyper) -> float:
    usable = [v for v in grid.variables if grid.n_rules(v, avail[v]) > 0]
    splittable = bool(usable) and depth < hyper.max_depth
    p = hyper.split_prob(depth) if splittable else 0.0
    if node.is_leaf:
        return math.log1p(-p)
    if not splittable or node.rule.variable not in usable:
        return -math.inf
    children = grid.children_availability(avail, node.rule)
    if children is None:
        return -math.inf
    n_rules = grid.n_rules(node.rule.variable, avail[node.rule.variable])
    own = math.log(p) - math.log(len(usable)) - math.log(n_rules)
    left = _log_prior_node(node.left, depth + 1, children[0], grid, hyper)
    if left == -math.inf:
        return left
    return own + left + _log_prior_node(node.right, depth + 1, children[1], grid, hyper)


def leaf_log_marginal(
    sums: Sequence[float],
    counts: Sequence[int],
    sigma: float,
    hyper: BartHyper | None = None,
    *,
    sigma_mu: float | None = None,
    sumsq: Sequence[float] | None = None,
) -> float:
    """Log integrated likelihood of leaf residuals with ``mu ~ N(0, sigma_mu^2)``
    integrated out, summed over leaves.

    Without ``sumsq`` the terms ``-n/2 log(2 pi sigma^2) - sum r^2 / (2 sigma^2)``
    are dropped; they are identical for any partition of the same residuals,
    so differences between tree structures are unaffected. Empty leaves
    contribute zero.
    """
    if sigma <= 0:
        raise InputError("sigma must be positive")
    if sigma_mu is None:
        sigma_mu = (hyper or BartHyper()).sigma_mu
    s2, t2 = sigma * sigma, sigma_mu * sigma_mu
    sums = np.asarray(sums, dtype=float)
    counts = np.asarray(counts, dtype=float)
    denom = s2 + counts * t2
    total = float(np.sum(0.5 * np.log(s2 / denom) + t2 * sums**2 / (2.0 * s2 * denom)))
    if sumsq is not None:
        total += float(np.sum(-0.5 * counts * np.log(2 * math.pi * s2) - np.asarray(sumsq, dtype=float) / (2 * s2)))
    return total

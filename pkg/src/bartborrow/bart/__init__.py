"""Sum-of-trees regression: tree objects, priors, and the backfitting sampler."""

from .fit import BartPosterior, fit_bart, least_squares_sigma
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
    evaluate_tree,
    leaf,
    leaf_log_marginal,
    log_tree_structure_prior,
    predict_forest,
    split,
)

__all__ = [
    "SOURCE",
    "BartHyper",
    "BartPosterior",
    "DecisionTree",
    "Forest",
    "InputError",
    "McmcConfig",
    "Node",
    "SplitGrid",
    "SplitRule",
    "evaluate_tree",
    "fit_bart",
    "leaf",
    "leaf_log_marginal",
    "least_squares_sigma",
    "log_tree_structure_prior",
    "predict_forest",
    "split",
]

"""Hybrid rule-list / black-box models with interpretability-allocation audits.

The library learns classifiers that route some examples through a short
ordered rule list and defer the rest to a black box, supports hard
constraints on how much of the data the rules must cover and on how
unevenly that coverage may fall across protected groups, and audits
collections of near-optimal models for group-level coverage disparity,
individual-level assignment arbitrariness, and standard fairness metrics.
"""

from .anneal import AnnealConfig, anneal_train
from .blackbox import ForestConfig, agreement, load_predictions, train_forest
from .data import (
    BinaryDataset,
    GroupSpec,
    RawTable,
    SplitSpec,
    binarize,
    bootstrap_sample,
    load_csv,
    split,
)
from .hybrid import (
    HybridModel,
    Prefix,
    accuracy,
    equal_opportunity,
    group_coverage,
    icd,
    icd_max,
    predict,
    render,
    sparsity,
    statistical_parity,
    transparency,
)
from .rashomon import (
    LearnerSpec,
    RashomonCollection,
    assign_bins,
    bin_metric_distribution,
    build,
    dedup,
    filter_epsilon,
    growth_curve,
    ica,
    icf,
)
from .rules import Antecedent, RuleUniverse, mine_antecedents, support_of
from .search import (
    SearchConfig,
    SearchResult,
    TrainView,
    best_consequent,
    finalize_pre,
    incons,
    lower_bound,
    objective_post,
    objective_pre,
    prefix_icd,
    search,
)
from .stats import (
    TransitionVerdict,
    bell_prevalence,
    classify_transitions,
    holm_adjust,
    mann_whitney_u,
)

__version__ = "0.1.0"

"""Flow-statistics features and classical baselines."""

from netprofile.baselines.forest import ForestModel, Tree, best_split, forest_train, gini, grow_tree
from netprofile.baselines.model import StatsBaseline, train_baseline
from netprofile.baselines.stats import (
    FEATURE_NAMES,
    FlowStats,
    SeriesStats,
    compute_stats,
    merge_stats,
    stats_to_features,
)
from netprofile.baselines.svm import LinearSvmModel, hinge_objective, hinge_subgradient, svm_train

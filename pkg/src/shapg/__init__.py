"""Graph-restricted Shapley feature importance (ShapG)."""

from .data import (
    CorrelationMatrix,
    DataError,
    Dataset,
    SplitPair,
    load_table,
    pearson_matrix,
    split,
)
from .game import Game, graph_game, mask_of, members, model_game
from .graph import (
    FeatureGraph,
    build_feature_graph,
    export_dot,
    induced_edge_weight_sum,
    is_connected,
    neighborhood,
)
from .harness import (
    PerturbationCurve,
    RunReport,
    compare_rankings,
    perturbation_curve,
    permutation_importance,
    timed_run,
)
from .models import Evaluator, EvaluatorError, Metric, external_evaluate, knn_predict, ols_fit_predict, score
from .shapley import (
    CapExceededError,
    ImportanceVector,
    SamplingPlan,
    approx_shapley,
    exact_shapley,
    neighborhood_exact,
    rank,
    sampling_count,
)

__version__ = "0.1.0"

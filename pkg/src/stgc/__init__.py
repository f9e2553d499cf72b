"""Spatial-temporal Granger causality graphs for traffic forecasting.

Builds a directed causal graph from road-network sensor series by
aligning each ordered pair on its travel-time lag and testing Granger
causality, then compares that graph against distance/identity/random
baselines through one shared graph-recurrent forecaster.
"""

__version__ = "0.1.0"

from .data import (
    DatasetSplit,
    DistanceTable,
    NormStats,
    TimeSeriesMatrix,
    chronological_split,
    compute_norm_stats,
    inverse_zscore,
    load_distance_table,
    load_speed_matrix,
    zscore,
)
from .lags import (
    CostMatrix,
    LagMatrix,
    RoadGraph,
    all_pairs_shortest_costs,
    average_velocity,
    build_road_graph,
    spatial_temporal_lags,
)
from .alignment import AlignedPair, align_pair
from .granger import (
    GrangerConfig,
    GrangerResult,
    RegressionFit,
    f_test,
    f_upper_tail,
    fit_restricted,
    fit_unrestricted,
    granger_test,
)
from .graphs import (
    AdjacencyMatrix,
    CausalEdge,
    CausalGraph,
    build_sd_graph,
    build_stgc_graph,
    identity_graph,
    random_graph_matching,
    to_adjacency,
)
from .metrics import MetricsReport, compare, compute_metrics
from .predictor import (
    ModelParams,
    PropagationMatrix,
    TrainConfig,
    forward,
    loss_and_gradients,
    normalize_propagation,
    predict_test,
    train,
)
from .pipeline import discover_graph, train_and_evaluate
from .synthetic import Scenario, generate, score_recovery

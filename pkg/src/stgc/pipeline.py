"""End-to-end wiring: discovery (series -> causal graph) and evaluation
(graph -> trained forecaster -> per-horizon metrics).

Graph discovery only ever sees the training split: node velocities,
normalization statistics, and the pairwise tests all come from it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import (
    DatasetSplit,
    DistanceTable,
    NormStats,
    TimeSeriesMatrix,
    chronological_split,
    compute_norm_stats,
    zscore,
)
from .errors import ValidationError
from .granger import GrangerConfig
from .graphs import (
    AdjacencyMatrix,
    CausalGraph,
    as_adjacency,
    build_stgc_graph,
)
from .lags import (
    CostMatrix,
    LagMatrix,
    all_pairs_shortest_costs,
    average_velocities,
    build_road_graph,
    lag_summary,
    spatial_temporal_lags,
)
from .metrics import HorizonMetrics, MetricsReport, horizon_record
from .predictor import (
    ModelParams,
    PropagationMatrix,
    TrainConfig,
    normalize_propagation,
    predict_test,
    train,
)

DEFAULT_SPLIT = (0.7, 0.1, 0.2)


@dataclass(frozen=True)
class DiscoveryResult:
    graph: CausalGraph
    lags: LagMatrix
    costs: CostMatrix
    split: DatasetSplit
    stats: NormStats
    dropped_edges: int

    def summary(self) -> dict:
        return {
            "nodes": self.graph.n,
            "edges": len(self.graph.edges),
            "density": len(self.graph.edges) / (self.graph.n * (self.graph.n - 1)),
            "dropped_distance_records": self.dropped_edges,
            "lags": lag_summary(self.lags),
        }


def discover_graph(
    matrix: TimeSeriesMatrix,
    table: DistanceTable,
    granger_config: GrangerConfig = GrangerConfig(),
    split_ratios=DEFAULT_SPLIT,
    unit_scale: float = 1.0,
    s_max: int = 12,
    top_k: int | None = None,
    per_sensor_norm: bool = True,
    force_zero_lag: bool = False,
    use_numba: bool | None = None,
) -> DiscoveryResult:
    """Run lags -> alignment -> pairwise tests on the training split."""
    split = chronological_split(matrix, split_ratios)
    road = build_road_graph(table, matrix.sensor_ids)
    costs = all_pairs_shortest_costs(road, use_numba=use_numba)
    velocities = average_velocities(split.train)
    lags = spatial_temporal_lags(
        costs, velocities, matrix.sampling_interval, unit_scale=unit_scale, cap=s_max
    )
    stats = compute_norm_stats(split.train, per_sensor=per_sensor_norm)
    norm_train = zscore(split.train, stats)
    graph = build_stgc_graph(
        norm_train,
        lags,
        granger_config,
        top_k=top_k,
        force_zero_lag=force_zero_lag,
        use_numba=use_numba,
    )
    return DiscoveryResult(
        graph=graph,
        lags=lags,
        costs=costs,
        split=split,
        stats=stats,
        dropped_edges=road.dropped_edges,
    )


@dataclass(frozen=True)
class EvaluationResult:
    report: MetricsReport
    params: ModelParams
    log: list
    per_node: list  # rows of (node_id, horizon_minutes, mae, mape, rmse)


def _normalized_split(split: DatasetSplit, stats: NormStats) -> DatasetSplit:
    return DatasetSplit(
        train=zscore(split.train, stats),
        val=zscore(split.val, stats),
        test=zscore(split.test, stats),
        ratios=split.ratios,
    )


def train_and_evaluate(
    matrix: TimeSeriesMatrix,
    graph: CausalGraph | AdjacencyMatrix,
    config: TrainConfig,
    label: str,
    split_ratios=DEFAULT_SPLIT,
    per_sensor_norm: bool = True,
) -> EvaluationResult:
    """Train the shared forecaster on one input graph and score the test split."""
    adjacency = as_adjacency(graph, add_self_loops=True)
    if tuple(adjacency.node_ids) != tuple(matrix.sensor_ids):
        raise ValidationError("graph nodes do not match the dataset's sensors")
    prop = normalize_propagation(adjacency)
    split = chronological_split(matrix, split_ratios)
    stats = compute_norm_stats(split.train, per_sensor=per_sensor_norm)
    norm = _normalized_split(split, stats)
    params, log = train(prop, norm, config)
    batch = predict_test(
        params, prop, norm.test, stats, config.input_window, config.horizons
    )
    interval = matrix.sampling_interval
    horizons = []
    per_node = []
    for h in config.horizons:
        minutes = h * interval
        horizons.append(
            horizon_record(minutes, batch.true[h], batch.predicted[h], batch.mask[h])
        )
        per_node.extend(
            _per_node_rows(
                matrix.sensor_ids, minutes, batch.true[h], batch.predicted[h], batch.mask[h]
            )
        )
    report = MetricsReport(graph_label=label, horizons=tuple(horizons))
    return EvaluationResult(report=report, params=params, log=log, per_node=per_node)


def _per_node_rows(node_ids, minutes, true, pred, mask):
    rows = []
    for idx, node in enumerate(node_ids):
        m = mask[:, idx]
        if not m.any():
            continue
        y, yhat = true[:, idx], pred[:, idx]
        err = y[m] - yhat[m]
        mae = float(np.abs(err).mean())
        rmse = float(np.sqrt(np.square(err).mean()))
        nz = m & (y != 0)
        mape = float(np.abs((y[nz] - yhat[nz]) / y[nz]).mean()) if nz.any() else 0.0
        rows.append((node, minutes, mae, mape, rmse))
    return rows


def per_node_csv(rows) -> str:
    out = ["node,horizon_minutes,mae,mape,rmse"]
    out += [f"{n},{h:g},{a!r},{p!r},{r!r}" for n, h, a, p, r in rows]
    return "\n".join(out) + "\n"

"""Assemble the directed causal graph and the comparison baselines.

Edges run cause -> effect. The causal graph keeps an ordered pair when
the aligned Granger test is significant; baselines are the Gaussian
spatial-distance graph, the self-connected identity graph, and
in-degree-matched random graphs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import TimeSeriesMatrix
from .errors import ComputationError, ValidationError
from .granger import SWEEP_OK, GrangerConfig, granger_sweep
from .lags import LagMatrix

DEFAULT_RANDOM_GRAPH_SEEDS = 10  # averaging protocol for the random baseline


@dataclass(frozen=True, order=True)
class CausalEdge:
    cause: int
    effect: int
    lag: int
    f_stat: float
    p_value: float


@dataclass(frozen=True)
class CausalGraph:
    node_ids: tuple[str, ...]
    edges: tuple[CausalEdge, ...]
    directed: bool = True

    @property
    def n(self) -> int:
        return len(self.node_ids)

    def in_degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        for e in self.edges:
            deg[e.effect] += 1
        return deg

    def edge_set(self) -> set[tuple[int, int]]:
        return {(e.cause, e.effect) for e in self.edges}


@dataclass(frozen=True)
class AdjacencyMatrix:
    node_ids: tuple[str, ...]
    weights: np.ndarray
    symmetric: bool

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValidationError("adjacency must be square")
        if w.shape[0] != len(self.node_ids):
            raise ValidationError("node ids and adjacency size disagree")
        if np.any(w < 0) or np.any(w > 1):
            raise ValidationError("weights must lie in [0, 1]")
        object.__setattr__(self, "weights", w)
        self.weights.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.node_ids)


def _top_k_filter(edges: list[CausalEdge], k: int) -> list[CausalEdge]:
    by_effect: dict[int, list[CausalEdge]] = {}
    for e in edges:
        by_effect.setdefault(e.effect, []).append(e)
    kept: list[CausalEdge] = []
    for effect in by_effect:
        ranked = sorted(by_effect[effect], key=lambda e: (e.p_value, e.lag, e.cause))
        kept.extend(ranked[:k])
    return kept


def build_stgc_graph(
    train_series: TimeSeriesMatrix,
    lags: LagMatrix,
    config: GrangerConfig,
    top_k: int | None = None,
    force_zero_lag: bool = False,
    use_numba: bool | None = None,
) -> CausalGraph:
    """Run the aligned pairwise causality sweep and keep significant edges.

    ``train_series`` must already be normalized. ``force_zero_lag`` keeps
    the tested pair set but aligns every pair at shift 0 (the ablation
    that removes the alignment step). ``top_k`` keeps, per effect node,
    only the k incoming edges with the smallest p-values (ties broken by
    smaller lag then smaller cause index).
    """
    if top_k is not None and top_k < 0:
        raise ValidationError("top_k must be >= 0")
    lag_mat = lags.s
    if lag_mat.shape[0] != train_series.n_sensors:
        raise ValidationError("lag matrix and series sensor counts disagree")
    tested_lags = np.where(lag_mat >= 0, 0, -1).astype(np.int64) if force_zero_lag else lag_mat

    off_diag = ~np.eye(lag_mat.shape[0], dtype=bool)
    if not np.any((lag_mat >= 0) & off_diag):
        raise ComputationError("empty graph: no ordered pair has a defined lag")

    fstat, pval, _, _, status = granger_sweep(
        train_series.values, tested_lags, config, use_numba=use_numba
    )
    edges: list[CausalEdge] = []
    n = lag_mat.shape[0]
    for i in range(n):
        for j in range(n):
            if i == j or status[i, j] != SWEEP_OK:
                continue
            if pval[i, j] < config.significance:
                edges.append(
                    CausalEdge(
                        cause=i,
                        effect=j,
                        lag=int(tested_lags[i, j]),
                        f_stat=float(fstat[i, j]),
                        p_value=float(pval[i, j]),
                    )
                )
    if top_k is not None:
        edges = _top_k_filter(edges, top_k)
    return CausalGraph(node_ids=train_series.sensor_ids, edges=tuple(sorted(edges)))


def to_adjacency(graph: CausalGraph, add_self_loops: bool = True) -> AdjacencyMatrix:
    """Binary matrix with entry (cause, effect) = 1 per edge."""
    w = np.zeros((graph.n, graph.n))
    for e in graph.edges:
        w[e.cause, e.effect] = 1.0
    if add_self_loops:
        np.fill_diagonal(w, 1.0)
    return AdjacencyMatrix(
        node_ids=graph.node_ids, weights=w, symmetric=bool(np.array_equal(w, w.T))
    )


def build_sd_graph(costs, node_ids, kappa: float = 0.1) -> AdjacencyMatrix:
    """Gaussian-filtered spatial-distance weights.

    w(i,j) = exp(-dist(i,j)^2 / sigma^2) with sigma the standard
    deviation of the finite off-diagonal costs; weights below ``kappa``
    are zeroed, unreachable pairs get 0, the diagonal is 1.
    """
    if not 0.0 <= kappa < 1.0:
        raise ValidationError("kappa must lie in [0, 1)")
    dist = costs.dist
    off = ~np.eye(dist.shape[0], dtype=bool)
    finite = np.isfinite(dist) & off
    if not finite.any():
        raise ComputationError("all pairwise distances are infinite")
    sigma = float(dist[finite].std())
    if sigma <= 0:
        raise ComputationError("distance spread is zero; Gaussian filter undefined")
    with np.errstate(over="ignore"):
        w = np.exp(-np.square(dist / sigma))
    w[~np.isfinite(dist)] = 0.0
    w[w < kappa] = 0.0
    np.fill_diagonal(w, 1.0)
    return AdjacencyMatrix(
        node_ids=tuple(node_ids), weights=w, symmetric=bool(np.array_equal(w, w.T))
    )


def identity_graph(node_ids) -> AdjacencyMatrix:
    ids = tuple(node_ids)
    if len(ids) < 1:
        raise ValidationError("need at least one node")
    return AdjacencyMatrix(node_ids=ids, weights=np.eye(len(ids)), symmetric=True)


def random_graph_matching(
    reference: CausalGraph, seed: int, lags: LagMatrix | None = None
) -> CausalGraph:
    """Random graph preserving the reference's per-node in-degree.

    Cause ids are drawn uniformly without replacement from all other
    nodes; lags are copied from the lag matrix where defined, else 0.
    """
    if not reference.edges:
        raise ValidationError("reference graph is empty")
    n = reference.n
    rng = np.random.default_rng(seed)
    edges: list[CausalEdge] = []
    for effect, degree in enumerate(reference.in_degrees()):
        if degree == 0:
            continue
        if degree > n - 1:
            raise ValidationError(f"in-degree {degree} exceeds n-1 = {n - 1}")
        candidates = np.array([v for v in range(n) if v != effect])
        causes = rng.choice(candidates, size=int(degree), replace=False)
        for cause in sorted(int(c) for c in causes):
            lag = 0
            if lags is not None and lags.s[cause, effect] >= 0:
                lag = int(lags.s[cause, effect])
            edges.append(
                CausalEdge(cause=cause, effect=effect, lag=lag, f_stat=0.0, p_value=1.0)
            )
    return CausalGraph(node_ids=reference.node_ids, edges=tuple(sorted(edges)))


# ---------------------------------------------------------------------------
# Serialization.
# ---------------------------------------------------------------------------

def graph_to_dict(graph: CausalGraph, config: dict | None = None) -> dict:
    return {
        "nodes": list(graph.node_ids),
        "directed": graph.directed,
        "edges": [
            {
                "cause": graph.node_ids[e.cause],
                "effect": graph.node_ids[e.effect],
                "lag": e.lag,
                "f": e.f_stat,
                "p": e.p_value,
            }
            for e in graph.edges
        ],
        "config": config or {},
    }


def adjacency_to_dict(adj: AdjacencyMatrix, config: dict | None = None) -> dict:
    return {
        "nodes": list(adj.node_ids),
        "directed": not adj.symmetric,
        "weights": [[float(v) for v in row] for row in adj.weights],
        "config": config or {},
    }


def graph_from_dict(payload: dict) -> CausalGraph | AdjacencyMatrix:
    nodes = tuple(str(s) for s in payload["nodes"])
    if "weights" in payload:
        w = np.asarray(payload["weights"], dtype=np.float64)
        return AdjacencyMatrix(
            node_ids=nodes, weights=w, symmetric=bool(np.array_equal(w, w.T))
        )
    index = {s: i for i, s in enumerate(nodes)}
    edges = tuple(
        sorted(
            CausalEdge(
                cause=index[str(e["cause"])],
                effect=index[str(e["effect"])],
                lag=int(e["lag"]),
                f_stat=float(e["f"]),
                p_value=float(e["p"]),
            )
            for e in payload["edges"]
        )
    )
    return CausalGraph(node_ids=nodes, edges=edges)


def load_graph_file(path) -> CausalGraph | AdjacencyMatrix:
    with open(path, "r", encoding="utf-8") as fh:
        return graph_from_dict(json.load(fh))


def as_adjacency(graph: CausalGraph | AdjacencyMatrix, add_self_loops: bool = True) -> AdjacencyMatrix:
    if isinstance(graph, AdjacencyMatrix):
        return graph
    return to_adjacency(graph, add_self_loops=add_self_loops)


def save_adjacency_csv(adj: AdjacencyMatrix, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("node," + ",".join(adj.node_ids) + "\n")
        for i, row in enumerate(adj.weights):
            fh.write(adj.node_ids[i] + "," + ",".join(repr(float(v)) for v in row) + "\n")


def edges_to_geojson(graph: CausalGraph, coordinates: dict[str, tuple[float, float]]) -> dict:
    """GeoJSON LineString features, one per edge; coordinates are (lon, lat)."""
    features = []
    for e in graph.edges:
        cause_id = graph.node_ids[e.cause]
        effect_id = graph.node_ids[e.effect]
        if cause_id not in coordinates or effect_id not in coordinates:
            continue
        features.append(
            {
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": [
                        list(coordinates[cause_id]),
                        list(coordinates[effect_id]),
                    ],
                },
                "properties": {
                    "cause": cause_id,
                    "effect": effect_id,
                    "lag": e.lag,
                    "f": e.f_stat,
                    "p": e.p_value,
                },
            }
        )
    return {"type": "FeatureCollection", "features": features}

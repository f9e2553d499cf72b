"""Road-graph shortest-path costs and per-pair spatial-temporal lags.

The spatial-temporal lag of an ordered sensor pair (source, target) is
the travel time along the cheapest road path, divided by the source
node's average speed and expressed in whole sampling steps. Lags drive
the time-axis alignment ahead of the pairwise causality tests.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from ._jit import NUMBA_ENABLED, njit, prange
from .data import DistanceTable, TimeSeriesMatrix
from .errors import ValidationError

LAG_UNDEFINED = -1
DEFAULT_S_MAX = 12  # 60 min of travel at 5-min sampling


@dataclass(frozen=True)
class RoadGraph:
    """Directed weighted graph over exactly the sensor set of a matrix."""

    node_ids: tuple[str, ...]
    edges: tuple[tuple[int, int, float], ...]  # (u, v, cost) as node indices
    dropped_edges: int = 0

    @property
    def n(self) -> int:
        return len(self.node_ids)


@dataclass(frozen=True)
class CostMatrix:
    """Minimum path cost for every ordered pair; +inf when unreachable."""

    dist: np.ndarray

    def __post_init__(self):
        self.dist.setflags(write=False)


@dataclass(frozen=True)
class LagMatrix:
    """Whole-timestep lags, -1 where undefined.

    ``reverse_fallback[i, j]`` marks entries computed from the j->i cost
    because i->j was unreachable; the export carries the flag so those
    lags are not mistaken for directed measurements.
    """

    s: np.ndarray
    reverse_fallback: np.ndarray

    def __post_init__(self):
        self.s.setflags(write=False)
        self.reverse_fallback.setflags(write=False)


def build_road_graph(table: DistanceTable, sensor_ids) -> RoadGraph:
    """Index the distance table against the sensor ordering.

    Edges touching unknown sensors are dropped and counted; an empty
    resulting edge set is an error.
    """
    ids = tuple(str(s) for s in sensor_ids)
    index = {s: i for i, s in enumerate(ids)}
    kept, dropped = [], 0
    for u, v, cost in table.edges:
        if u in index and v in index:
            kept.append((index[u], index[v], float(cost)))
        else:
            dropped += 1
    if not kept:
        raise ValidationError("road graph has no usable edges")
    return RoadGraph(node_ids=ids, edges=tuple(kept), dropped_edges=dropped)


def _to_csr(graph: RoadGraph):
    n = graph.n
    counts = np.zeros(n + 1, dtype=np.int64)
    for u, _, _ in graph.edges:
        counts[u + 1] += 1
    indptr = np.cumsum(counts)
    indices = np.empty(len(graph.edges), dtype=np.int64)
    weights = np.empty(len(graph.edges), dtype=np.float64)
    cursor = indptr[:-1].copy()
    for u, v, w in graph.edges:
        indices[cursor[u]] = v
        weights[cursor[u]] = w
        cursor[u] += 1
    return indptr, indices, weights


@njit(cache=True, parallel=True)
def _dijkstra_all_numba(indptr, indices, weights, n):  # pragma: no cover - jit
    dist = np.full((n, n), np.inf)
    for src in prange(n):
        d = dist[src]
        d[src] = 0.0
        # binary min-heap of (cost, node), stored in parallel arrays
        heap_cost = np.empty(len(indices) + n + 1, dtype=np.float64)
        heap_node = np.empty(len(indices) + n + 1, dtype=np.int64)
        heap_cost[0] = 0.0
        heap_node[0] = src
        size = 1
        done = np.zeros(n, dtype=np.uint8)
        while size > 0:
            cost = heap_cost[0]
            node = heap_node[0]
            size -= 1
            heap_cost[0] = heap_cost[size]
            heap_node[0] = heap_node[size]
            i = 0
            while True:  # sift down
                left = 2 * i + 1
                if left >= size:
                    break
                small = left
                right = left + 1
                if right < size and heap_cost[right] < heap_cost[left]:
                    small = right
                if heap_cost[small] >= heap_cost[i]:
                    break
                heap_cost[i], heap_cost[small] = heap_cost[small], heap_cost[i]
                heap_node[i], heap_node[small] = heap_node[small], heap_node[i]
                i = small
            if done[node]:
                continue
            done[node] = 1
            for k in range(indptr[node], indptr[node + 1]):
                nxt = indices[k]
                cand = cost + weights[k]
                if cand < d[nxt]:
                    d[nxt] = cand
                    j = size
                    heap_cost[j] = cand
                    heap_node[j] = nxt
                    size += 1
                    while j > 0:  # sift up
                        parent = (j - 1) // 2
                        if heap_cost[parent] <= heap_cost[j]:
                            break
                        heap_cost[j], heap_cost[parent] = heap_cost[parent], heap_cost[j]
                        heap_node[j], heap_node[parent] = heap_node[parent], heap_node[j]
                        j = parent
    return dist


def _dijkstra_all_numpy(indptr, indices, weights, n):
    dist = np.full((n, n), np.inf)
    adjacency = [
        list(zip(indices[indptr[u] : indptr[u + 1]], weights[indptr[u] : indptr[u + 1]]))
        for u in range(n)
    ]
    for src in range(n):
        d = dist[src]
        d[src] = 0.0
        heap = [(0.0, src)]
        done = np.zeros(n, dtype=bool)
        while heap:
            cost, node = heapq.heappop(heap)
            if done[node]:
                continue
            done[node] = True
            for nxt, w in adjacency[node]:
                cand = cost + w
                if cand < d[nxt]:
                    d[nxt] = cand
                    heapq.heappush(heap, (cand, int(nxt)))
    return dist


def all_pairs_shortest_costs(graph: RoadGraph, use_numba: bool | None = None) -> CostMatrix:
    """Exact label-setting shortest-path costs from every node."""
    for _, _, w in graph.edges:
        if w < 0:
            raise ValidationError("edge costs must be non-negative")
    indptr, indices, weights = _to_csr(graph)
    numba = NUMBA_ENABLED if use_numba is None else (use_numba and NUMBA_ENABLED)
    impl = _dijkstra_all_numba if numba else _dijkstra_all_numpy
    return CostMatrix(dist=impl(indptr, indices, weights, graph.n))


def average_velocity(matrix: TimeSeriesMatrix, node: int) -> float:
    """Mean of the node's valid readings; NaN when every reading is missing."""
    row = matrix.values[node]
    valid = matrix.mask[node]
    if not valid.any():
        return math.nan
    return float(row[valid].mean())


def average_velocities(matrix: TimeSeriesMatrix) -> np.ndarray:
    counts = matrix.mask.sum(axis=1)
    sums = np.where(matrix.mask, matrix.values, 0.0).sum(axis=1)
    with np.errstate(invalid="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


def spatial_temporal_lags(
    costs: CostMatrix,
    velocities: np.ndarray,
    sampling_interval: float,
    unit_scale: float = 1.0,
    cap: int = DEFAULT_S_MAX,
) -> LagMatrix:
    """Convert path costs to whole-timestep lags.

    ``unit_scale * dist / velocity`` must come out in hours of travel
    time; lags round half-up. Unreachable pairs, undefined velocities,
    and lags beyond ``cap`` map to the -1 sentinel. When i->j is
    unreachable but j->i is not, the reverse cost is used and flagged.
    """
    if sampling_interval <= 0:
        raise ValidationError("sampling interval must be positive")
    if unit_scale <= 0:
        raise ValidationError("unit_scale must be positive")
    if cap < 1:
        raise ValidationError("lag cap must be >= 1")
    dist = costs.dist
    n = dist.shape[0]
    velocities = np.asarray(velocities, dtype=np.float64)

    fallback = np.isinf(dist) & np.isfinite(dist.T)
    np.fill_diagonal(fallback, False)
    effective = np.where(fallback, dist.T, dist)

    with np.errstate(invalid="ignore", divide="ignore"):
        hours = unit_scale * effective / velocities[:, None]
    steps = hours * 60.0 / sampling_interval
    s = np.floor(steps + 0.5)  # round half-up

    undefined = ~np.isfinite(s) | (s > cap)
    out = np.where(undefined, LAG_UNDEFINED, s).astype(np.int64)
    np.fill_diagonal(out, 0)
    fallback &= out >= 0
    return LagMatrix(s=out, reverse_fallback=fallback)


def lag_summary(lags: LagMatrix) -> dict:
    """Distribution stats of the defined off-diagonal lags."""
    s = lags.s.copy()
    np.fill_diagonal(s, LAG_UNDEFINED)
    defined = s[s >= 0]
    total_pairs = s.shape[0] * (s.shape[0] - 1)
    if defined.size == 0:
        return {
            "defined_pairs": 0,
            "total_pairs": total_pairs,
            "max_lag": None,
            "fraction_lag_le_6": None,
            "histogram": {},
        }
    values, counts = np.unique(defined, return_counts=True)
    return {
        "defined_pairs": int(defined.size),
        "total_pairs": total_pairs,
        "max_lag": int(defined.max()),
        "fraction_lag_le_6": float((defined <= 6).mean()),
        "histogram": {int(v): int(c) for v, c in zip(values, counts)},
    }


def save_lag_matrix(lags: LagMatrix, node_ids, path) -> None:
    """Dense CSV (rows = source, columns = target, -1 sentinel); a
    companion ``*.fallback.csv`` is written when any reverse-direction
    cost was substituted."""
    ids = list(node_ids)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("source," + ",".join(ids) + "\n")
        for i, row in enumerate(lags.s):
            fh.write(ids[i] + "," + ",".join(str(int(v)) for v in row) + "\n")
    if lags.reverse_fallback.any():
        side = str(path) + ".fallback.csv"
        with open(side, "w", encoding="utf-8") as fh:
            fh.write("source," + ",".join(ids) + "\n")
            for i, row in enumerate(lags.reverse_fallback.astype(int)):
                fh.write(ids[i] + "," + ",".join(str(int(v)) for v in row) + "\n")

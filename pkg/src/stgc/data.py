"""Core data types, CSV ingestion, chronological splitting, normalization.

Speed files are CSV with a header row of sensor ids and one row per
timestep (an optional leading ISO-8601 timestamp column is auto-detected
and ignored for computation). Readings of 0.0 are the missing-data
sentinel, so validity is simply ``value > 0``.
"""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError


@dataclass(frozen=True)
class TimeSeriesMatrix:
    """N sensors x T timesteps of speed readings on a uniform grid.

    ``mask`` marks valid observations. It defaults to ``values > 0``
    (0.0 is the missing sentinel) and is carried explicitly so that
    normalized matrices keep the validity of their source.
    """

    values: np.ndarray
    sensor_ids: tuple[str, ...]
    sampling_interval: float  # minutes
    start_time: str | None = None
    mask: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "sensor_ids", tuple(str(s) for s in self.sensor_ids))
        if values.ndim != 2:
            raise ValidationError("values must be a 2-D [sensors x timesteps] matrix")
        n, t = values.shape
        if n < 2 or t < 2:
            raise ValidationError(f"need at least 2 sensors and 2 timesteps, got {n}x{t}")
        if len(self.sensor_ids) != n:
            raise ValidationError(
                f"{len(self.sensor_ids)} sensor ids for {n} rows"
            )
        if len(set(self.sensor_ids)) != n:
            raise ValidationError("sensor ids must be unique")
        if not self.sampling_interval > 0:
            raise ValidationError("sampling_interval must be positive")
        if self.mask is None:
            object.__setattr__(self, "mask", values > 0)
        else:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != values.shape:
                raise ValidationError("mask shape must match values")
            object.__setattr__(self, "mask", mask)
        self.values.setflags(write=False)
        self.mask.setflags(write=False)

    @property
    def n_sensors(self) -> int:
        return self.values.shape[0]

    @property
    def n_timesteps(self) -> int:
        return self.values.shape[1]

    def row(self, sensor_id: str) -> np.ndarray:
        return self.values[self.sensor_ids.index(sensor_id)]


@dataclass(frozen=True)
class DistanceTable:
    """Directed (from, to, cost) travel-cost records between sensors."""

    edges: tuple[tuple[str, str, float], ...]

    def __len__(self) -> int:
        return len(self.edges)


@dataclass(frozen=True)
class DatasetSplit:
    """Contiguous chronological train/val/test partition of one matrix."""

    train: TimeSeriesMatrix
    val: TimeSeriesMatrix
    test: TimeSeriesMatrix
    ratios: tuple[float, float, float]


@dataclass(frozen=True)
class NormStats:
    """Per-sensor (vectors) or global (scalars) z-score statistics.

    Computed from the training split only; ``std`` must be strictly
    positive everywhere.
    """

    mean: np.ndarray
    std: np.ndarray
    per_sensor: bool = True

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        std = np.atleast_1d(np.asarray(self.std, dtype=np.float64))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)
        if np.any(std <= 0) or not np.all(np.isfinite(std)):
            raise ValidationError(
                "std must be strictly positive; exclude constant series before normalizing"
            )


def _looks_like_timestamp(cell: str) -> bool:
    cell = cell.strip()
    if not cell:
        return False
    try:
        float(cell)
        return False
    except ValueError:
        pass
    try:
        _dt.datetime.fromisoformat(cell)
        return True
    except ValueError:
        return False


def load_speed_matrix(path, sampling_interval: float) -> TimeSeriesMatrix:
    """Load a speed CSV (header = sensor ids, one row per timestep).

    Returns an [N x T] matrix in header order; an optional leading
    timestamp column is detected from the first data row and dropped.
    Raises :class:`ParseError` naming the offending 1-based line for
    ragged rows, non-numeric cells, or duplicate ids.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    lines = [ln for ln in lines if ln.strip() != ""]
    if len(lines) < 2:
        raise ParseError(f"{path}: need a header row and at least one data row")

    header = [c.strip() for c in lines[0].split(",")]
    first_data = [c.strip() for c in lines[1].split(",")]
    # Timestamp column: either an (often empty) header cell of its own, or
    # an unlabeled extra leading cell on the data rows.
    if header[0] == "" or _looks_like_timestamp(first_data[0]):
        id_offset = 1
        if len(first_data) == len(header) + 1:
            sensor_ids = header
        else:
            sensor_ids = header[1:]
    else:
        id_offset = 0
        sensor_ids = header
    if len(sensor_ids) < 1:
        raise ParseError(f"{path}: header row has no sensor ids")
    dupes = {s for s in sensor_ids if sensor_ids.count(s) > 1}
    if dupes:
        raise ParseError(f"{path} line 1: duplicate sensor ids {sorted(dupes)}")

    width = len(sensor_ids) + id_offset
    rows = np.empty((len(lines) - 1, len(sensor_ids)), dtype=np.float64)
    start_time = None
    for lineno, line in enumerate(lines[1:], start=2):
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != width:
            raise ParseError(
                f"{path} line {lineno}: expected {width} fields, got {len(cells)}"
            )
        if id_offset and start_time is None:
            start_time = cells[0]
        for j, cell in enumerate(cells[id_offset:]):
            try:
                rows[lineno - 2, j] = float(cell)
            except ValueError:
                raise ParseError(
                    f"{path} line {lineno}: non-numeric cell {cell!r}"
                ) from None

    return TimeSeriesMatrix(
        values=rows.T.copy(),
        sensor_ids=tuple(sensor_ids),
        sampling_interval=float(sampling_interval),
        start_time=start_time,
    )


def save_speed_matrix(matrix: TimeSeriesMatrix, path) -> None:
    """Write the CSV form of ``load_speed_matrix``; floats use shortest
    round-trip repr so reloading is bit-identical for finite values."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(matrix.sensor_ids) + "\n")
        for t in range(matrix.n_timesteps):
            fh.write(",".join(repr(float(v)) for v in matrix.values[:, t]) + "\n")


def load_distance_table(path) -> DistanceTable:
    """Load (from_id, to_id, cost) records.

    Duplicate (from, to) pairs keep the minimum cost, self-records are
    dropped, and negative costs are rejected.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    lines = [ln for ln in lines if ln.strip() != ""]
    if not lines:
        raise ParseError(f"{path}: empty file")
    header = [c.strip().lower() for c in lines[0].split(",")]
    expected = ["from", "to", "cost"]
    if header != expected:
        raise ParseError(
            f"{path} line 1: expected header {','.join(expected)!r}, got {lines[0]!r}"
        )
    best: dict[tuple[str, str], float] = {}
    order: list[tuple[str, str]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != 3:
            raise ParseError(f"{path} line {lineno}: expected 3 fields, got {len(cells)}")
        u, v, raw = cells
        try:
            cost = float(raw)
        except ValueError:
            raise ParseError(f"{path} line {lineno}: non-numeric cost {raw!r}") from None
        if cost < 0:
            raise ValidationError(f"{path} line {lineno}: negative cost {cost}")
        if u == v:
            continue
        key = (u, v)
        if key not in best:
            best[key] = cost
            order.append(key)
        else:
            best[key] = min(best[key], cost)
    return DistanceTable(edges=tuple((u, v, best[(u, v)]) for u, v in order))


def chronological_split(
    matrix: TimeSeriesMatrix, ratios: tuple[float, float, float]
) -> DatasetSplit:
    """Partition columns into contiguous train/val/test blocks.

    Boundaries are ``floor(cumulative ratio * T)``; every block must get
    at least one timestep.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValidationError("ratios must be three non-negative reals")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"ratios must sum to 1, got {sum(ratios)}")
    t = matrix.n_timesteps
    b1 = int(np.floor(ratios[0] * t))
    b2 = int(np.floor((ratios[0] + ratios[1]) * t))
    lengths = (b1, b2 - b1, t - b2)
    if min(lengths) < 1:
        raise ValidationError(f"degenerate split: block lengths {lengths}")

    def take(lo, hi):
        return TimeSeriesMatrix(
            values=matrix.values[:, lo:hi].copy(),
            sensor_ids=matrix.sensor_ids,
            sampling_interval=matrix.sampling_interval,
            start_time=matrix.start_time if lo == 0 else None,
            mask=matrix.mask[:, lo:hi].copy(),
        )

    return DatasetSplit(
        train=take(0, b1), val=take(b1, b2), test=take(b2, t), ratios=ratios
    )


def compute_norm_stats(matrix: TimeSeriesMatrix, per_sensor: bool = True) -> NormStats:
    """Mean/std of valid entries, per sensor or pooled. Call on train only."""
    vals, mask = matrix.values, matrix.mask
    if per_sensor:
        counts = mask.sum(axis=1)
        if np.any(counts == 0):
            raise ValidationError("a sensor has no valid readings; cannot normalize")
        mean = np.where(mask, vals, 0.0).sum(axis=1) / counts
        var = np.where(mask, (vals - mean[:, None]) ** 2, 0.0).sum(axis=1) / counts
        std = np.sqrt(var)
    else:
        if not mask.any():
            raise ValidationError("no valid readings; cannot normalize")
        valid = vals[mask]
        mean = np.array([valid.mean()])
        std = np.array([valid.std()])
    if np.any(std <= 0):
        raise ValidationError(
            "zero-variance series; exclude constant sensors before normalizing"
        )
    return NormStats(mean=mean, std=std, per_sensor=per_sensor)


def _broadcast(stats: NormStats, n: int):
    mean, std = stats.mean, stats.std
    if stats.per_sensor:
        if mean.shape[0] != n:
            raise ValidationError(f"stats for {mean.shape[0]} sensors applied to {n}")
        return mean[:, None], std[:, None]
    return mean[0], std[0]


def zscore(matrix: TimeSeriesMatrix, stats: NormStats) -> TimeSeriesMatrix:
    """(x - mean) / std on valid entries; invalid entries stay 0.0."""
    mean, std = _broadcast(stats, matrix.n_sensors)
    out = np.where(matrix.mask, (matrix.values - mean) / std, 0.0)
    return TimeSeriesMatrix(
        values=out,
        sensor_ids=matrix.sensor_ids,
        sampling_interval=matrix.sampling_interval,
        start_time=matrix.start_time,
        mask=matrix.mask.copy(),
    )


def inverse_zscore(matrix: TimeSeriesMatrix, stats: NormStats) -> TimeSeriesMatrix:
    """Undo :func:`zscore`; restores originals to within 1e-10 relative."""
    mean, std = _broadcast(stats, matrix.n_sensors)
    out = np.where(matrix.mask, matrix.values * std + mean, 0.0)
    return TimeSeriesMatrix(
        values=out,
        sensor_ids=matrix.sensor_ids,
        sampling_interval=matrix.sampling_interval,
        start_time=matrix.start_time,
        mask=matrix.mask.copy(),
    )

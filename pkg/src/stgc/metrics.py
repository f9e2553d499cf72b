"""Forecast error metrics and graph-vs-graph comparison tables.

MAE and RMSE average over all valid points; MAPE additionally excludes
zero-truth entries (the missing-data sentinel) instead of epsilon-
padding the denominator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class HorizonMetrics:
    horizon_minutes: float
    mae: float
    mape: float
    rmse: float
    n_evaluated: int


@dataclass(frozen=True)
class MetricsReport:
    graph_label: str
    horizons: tuple[HorizonMetrics, ...]

    def horizon_set(self) -> tuple[float, ...]:
        return tuple(h.horizon_minutes for h in self.horizons)


def compute_metrics(true_values, predicted, mask=None):
    """(mae, mape, rmse) over the valid mask; mape also needs truth != 0."""
    y = np.asarray(true_values, dtype=np.float64)
    yhat = np.asarray(predicted, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ValidationError("true and predicted shapes differ")
    valid = np.ones(y.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if valid.shape != y.shape:
        raise ValidationError("mask shape differs from values")
    if not valid.any():
        raise ValidationError("no valid points to evaluate")
    err = y[valid] - yhat[valid]
    mae = float(np.abs(err).mean())
    rmse = float(np.sqrt(np.square(err).mean()))
    nz = valid & (y != 0)
    mape = float(np.abs((y[nz] - yhat[nz]) / y[nz]).mean()) if nz.any() else 0.0
    return mae, mape, rmse


def horizon_record(horizon_minutes, true_values, predicted, mask=None) -> HorizonMetrics:
    mae, mape, rmse = compute_metrics(true_values, predicted, mask)
    y = np.asarray(true_values)
    valid = np.ones(y.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    return HorizonMetrics(
        horizon_minutes=float(horizon_minutes),
        mae=mae,
        mape=mape,
        rmse=rmse,
        n_evaluated=int((valid & (y != 0)).sum()),
    )


@dataclass(frozen=True)
class ComparisonTable:
    """Rows of (label, horizon, metrics); best markers flag strict minima."""

    labels: tuple[str, ...]
    horizons: tuple[float, ...]
    cells: dict  # (label, horizon) -> HorizonMetrics
    best: dict   # (horizon, metric) -> label | None


_METRICS = ("mae", "mape", "rmse")


def _average_reports(reports: list[MetricsReport]) -> MetricsReport:
    label = reports[0].graph_label
    horizons = reports[0].horizon_set()
    merged = []
    for idx, h in enumerate(horizons):
        records = [r.horizons[idx] for r in reports]
        merged.append(
            HorizonMetrics(
                horizon_minutes=h,
                mae=float(np.mean([r.mae for r in records])),
                mape=float(np.mean([r.mape for r in records])),
                rmse=float(np.mean([r.rmse for r in records])),
                n_evaluated=int(np.mean([r.n_evaluated for r in records])),
            )
        )
    return MetricsReport(graph_label=label, horizons=tuple(merged))


def compare(reports: list[MetricsReport]) -> ComparisonTable:
    """Align reports; reports sharing a label (random seeds) are averaged."""
    if not reports:
        raise ValidationError("no reports to compare")
    horizon_sets = {r.horizon_set() for r in reports}
    if len(horizon_sets) != 1:
        raise ValidationError(f"mismatched horizon sets: {sorted(horizon_sets)}")
    horizons = reports[0].horizon_set()

    by_label: dict[str, list[MetricsReport]] = {}
    labels: list[str] = []
    for r in reports:
        if r.graph_label not in by_label:
            labels.append(r.graph_label)
        by_label.setdefault(r.graph_label, []).append(r)
    averaged = {label: _average_reports(by_label[label]) for label in labels}

    cells = {}
    for label in labels:
        for idx, h in enumerate(horizons):
            cells[(label, h)] = averaged[label].horizons[idx]

    best = {}
    for h in horizons:
        for metric in _METRICS:
            values = [(getattr(cells[(label, h)], metric), label) for label in labels]
            low = min(v for v, _ in values)
            winners = [label for v, label in values if v == low]
            best[(h, metric)] = winners[0] if len(winners) == 1 else None
    return ComparisonTable(
        labels=tuple(labels), horizons=horizons, cells=cells, best=best
    )


def render_table(table: ComparisonTable) -> str:
    """Plain-text table; '*' marks the strict best per horizon and metric."""
    lines = [f"{'graph':<18}{'horizon':>9}{'mae':>12}{'mape':>12}{'rmse':>12}"]
    for h in table.horizons:
        for label in table.labels:
            rec = table.cells[(label, h)]
            parts = [f"{label:<18}", f"{h:>9.0f}"]
            for metric in _METRICS:
                star = "*" if table.best[(h, metric)] == label else " "
                parts.append(f"{getattr(rec, metric):>11.4f}{star}")
            lines.append("".join(parts))
    return "\n".join(lines)


def table_to_csv(table: ComparisonTable) -> str:
    rows = ["graph,horizon_minutes,mae,mape,rmse,best_mae,best_mape,best_rmse"]
    for h in table.horizons:
        for label in table.labels:
            rec = table.cells[(label, h)]
            flags = [
                "1" if table.best[(h, metric)] == label else "0" for metric in _METRICS
            ]
            rows.append(
                f"{label},{h:g},{rec.mae!r},{rec.mape!r},{rec.rmse!r},"
                + ",".join(flags)
            )
    return "\n".join(rows) + "\n"


def report_to_dict(report: MetricsReport, config: dict | None = None) -> dict:
    return {
        "graph_label": report.graph_label,
        "horizons": [
            {
                "horizon_minutes": h.horizon_minutes,
                "mae": h.mae,
                "mape": h.mape,
                "rmse": h.rmse,
                "n_evaluated": h.n_evaluated,
            }
            for h in report.horizons
        ],
        "config": config or {},
    }


def report_from_dict(payload: dict) -> MetricsReport:
    return MetricsReport(
        graph_label=str(payload["graph_label"]),
        horizons=tuple(
            HorizonMetrics(
                horizon_minutes=float(h["horizon_minutes"]),
                mae=float(h["mae"]),
                mape=float(h["mape"]),
                rmse=float(h["rmse"]),
                n_evaluated=int(h["n_evaluated"]),
            )
            for h in payload["horizons"]
        ),
    )


def load_report(path) -> MetricsReport:
    with open(path, "r", encoding="utf-8") as fh:
        return report_from_dict(json.load(fh))

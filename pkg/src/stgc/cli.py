"""Subcommand front-end: build-graph, baseline, train-eval, compare, synth, score.

One JSON config file drives every run; command-line flags override
individual fields and the fully resolved config is echoed into every
output artifact. Progress goes to stderr, machine output to files.
Exit codes: 0 success, 1 computation error, 2 input/config error.
"""

from __future__ import annotations

import argparse
import copy
import datetime
import json
import sys

import numpy as np

from . import __version__
from ._jit import set_worker_threads
from .data import load_distance_table, load_speed_matrix
from .errors import ComputationError, ParseError, StgcError, ValidationError
from .granger import GrangerConfig
from .graphs import (
    adjacency_to_dict,
    as_adjacency,
    build_sd_graph,
    edges_to_geojson,
    graph_to_dict,
    identity_graph,
    load_graph_file,
    random_graph_matching,
    save_adjacency_csv,
    CausalGraph,
)
from .lags import LagMatrix, save_lag_matrix
from .metrics import compare, load_report, render_table, report_to_dict, table_to_csv
from .pipeline import discover_graph, per_node_csv, train_and_evaluate
from .predictor import TrainConfig, log_to_csv, params_to_dict
from .synthetic import generate, load_scenario, scenario_to_dict, score_recovery
from .data import save_speed_matrix

DEFAULT_CONFIG = {
    "paths": {"speeds": None, "distances": None, "coordinates": None},
    "split": [0.7, 0.1, 0.2],
    "granger": {"var_order": 5, "alpha": 0.05, "top_k": None},
    "lag": {"unit_scale": 1.0, "s_max": 12},
    "sd": {"kappa": 0.1},
    "train": {
        "window": 12,
        "horizons": [3, 6, 9, 12],
        "hidden_dim": 32,
        "lr": 1e-3,
        "epochs": 50,
        "batch_size": 32,
        "patience": 10,
        "seed": 0,
    },
    "normalization": "per_sensor",
    "workers": None,
}


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str | None, overrides: dict) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            config = _merge(config, json.load(fh))
    return _merge(config, overrides)


def _flag_overrides(args) -> dict:
    """Collect explicitly passed flags into a config-shaped dict; flags win."""
    over: dict = {}

    def put(section, key, value):
        if value is not None:
            over.setdefault(section, {})[key] = value

    put("paths", "speeds", getattr(args, "speeds", None))
    put("paths", "distances", getattr(args, "distances", None))
    put("paths", "coordinates", getattr(args, "coordinates", None))
    put("granger", "var_order", getattr(args, "var_order", None))
    put("granger", "alpha", getattr(args, "alpha", None))
    put("granger", "top_k", getattr(args, "top_k", None))
    put("lag", "unit_scale", getattr(args, "unit_scale", None))
    put("lag", "s_max", getattr(args, "s_max", None))
    put("sd", "kappa", getattr(args, "kappa", None))
    put("train", "window", getattr(args, "window", None))
    put("train", "hidden_dim", getattr(args, "hidden_dim", None))
    put("train", "lr", getattr(args, "lr", None))
    put("train", "epochs", getattr(args, "epochs", None))
    put("train", "batch_size", getattr(args, "batch_size", None))
    put("train", "patience", getattr(args, "patience", None))
    put("train", "seed", getattr(args, "seed", None))
    if getattr(args, "horizons", None) is not None:
        over.setdefault("train", {})["horizons"] = [
            int(h) for h in args.horizons.split(",")
        ]
    if getattr(args, "split", None) is not None:
        over["split"] = [float(r) for r in args.split.split(",")]
    if getattr(args, "workers", None) is not None:
        over["workers"] = args.workers
    if getattr(args, "global_norm", False):
        over["normalization"] = "global"
    return over


def _artifact(config: dict, body: dict) -> dict:
    out = dict(body)
    out["config"] = config
    out["tool_version"] = __version__
    out["created_at"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    return out


def _write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_dataset(config: dict):
    speeds = config["paths"]["speeds"]
    distances = config["paths"]["distances"]
    if not speeds or not distances:
        raise ValidationError("config must set paths.speeds and paths.distances")
    interval = config.get("sampling_interval_minutes", 5.0)
    matrix = load_speed_matrix(speeds, sampling_interval=interval)
    table = load_distance_table(distances)
    return matrix, table


def _granger_config(config: dict) -> GrangerConfig:
    return GrangerConfig(
        var_order=int(config["granger"]["var_order"]),
        significance=float(config["granger"]["alpha"]),
    )


def _train_config(config: dict) -> TrainConfig:
    t = config["train"]
    return TrainConfig(
        input_window=int(t["window"]),
        horizons=tuple(int(h) for h in t["horizons"]),
        hidden_dim=int(t["hidden_dim"]),
        learning_rate=float(t["lr"]),
        max_epochs=int(t["epochs"]),
        batch_size=int(t["batch_size"]),
        patience=int(t["patience"]),
        seed=int(t["seed"]),
    )


def cmd_build_graph(args) -> int:
    config = load_config(args.config, _flag_overrides(args))
    set_worker_threads(config.get("workers"))
    matrix, table = _load_dataset(config)
    top_k = config["granger"]["top_k"]
    result = discover_graph(
        matrix,
        table,
        granger_config=_granger_config(config),
        split_ratios=tuple(config["split"]),
        unit_scale=float(config["lag"]["unit_scale"]),
        s_max=int(config["lag"]["s_max"]),
        top_k=None if top_k is None else int(top_k),
        per_sensor_norm=config["normalization"] == "per_sensor",
    )
    summary = result.summary()
    _write_json(args.out, _artifact(config, graph_to_dict(result.graph)))
    if args.lag_csv:
        save_lag_matrix(result.lags, result.graph.node_ids, args.lag_csv)
    if args.summary:
        _write_json(args.summary, _artifact(config, {"summary": summary}))
    lag_stats = summary["lags"]
    _log(
        f"graph: {summary['nodes']} nodes, {summary['edges']} edges, "
        f"density {summary['density']:.4f}"
    )
    _log(
        f"lags: {lag_stats['defined_pairs']}/{lag_stats['total_pairs']} defined, "
        f"fraction <= 6 steps: {lag_stats['fraction_lag_le_6']}, "
        f"max defined lag: {lag_stats['max_lag']}"
    )
    coords_path = config["paths"].get("coordinates")
    if args.geojson:
        if not coords_path:
            raise ValidationError("GeoJSON export needs paths.coordinates (id,lon,lat)")
        coords = _load_coordinates(coords_path)
        _write_json(args.geojson, edges_to_geojson(result.graph, coords))
    return 0


def _load_coordinates(path) -> dict:
    coords = {}
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    header = [c.strip().lower() for c in lines[0].split(",")]
    if header != ["id", "lon", "lat"]:
        raise ParseError(f"{path} line 1: expected header 'id,lon,lat'")
    for lineno, line in enumerate(lines[1:], start=2):
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != 3:
            raise ParseError(f"{path} line {lineno}: expected 3 fields")
        coords[cells[0]] = (float(cells[1]), float(cells[2]))
    return coords


def cmd_baseline(args) -> int:
    config = load_config(args.config, _flag_overrides(args))
    if args.kind == "identity":
        matrix, _ = _load_dataset(config)
        adj = identity_graph(matrix.sensor_ids)
        _write_json(args.out, _artifact(config, adjacency_to_dict(adj)))
    elif args.kind == "sd":
        matrix, table = _load_dataset(config)
        from .lags import all_pairs_shortest_costs, build_road_graph

        road = build_road_graph(table, matrix.sensor_ids)
        costs = all_pairs_shortest_costs(road)
        adj = build_sd_graph(costs, matrix.sensor_ids, kappa=float(config["sd"]["kappa"]))
        _write_json(args.out, _artifact(config, adjacency_to_dict(adj)))
    else:  # random
        if not args.reference:
            raise ValidationError("random baseline needs --reference <stgc graph json>")
        reference = load_graph_file(args.reference)
        if not isinstance(reference, CausalGraph):
            raise ValidationError("--reference must be a causal graph file")
        seeds = (
            [int(s) for s in args.seeds.split(",")]
            if args.seeds
            else list(range(10))
        )
        for seed in seeds:
            graph = random_graph_matching(reference, seed=seed)
            out = args.out
            if len(seeds) > 1:
                out = _seed_path(args.out, seed)
            payload = _artifact(config, graph_to_dict(graph))
            payload["config"] = _merge(payload["config"], {"random_seed": seed})
            _write_json(out, payload)
            _log(f"wrote {out}")
        return 0
    _log(f"wrote {args.out}")
    if args.adjacency_csv:
        graph = load_graph_file(args.out)
        save_adjacency_csv(as_adjacency(graph), args.adjacency_csv)
    return 0


def _seed_path(path: str, seed: int) -> str:
    if path.endswith(".json"):
        return f"{path[:-5]}.seed{seed}.json"
    return f"{path}.seed{seed}"


def cmd_train_eval(args) -> int:
    config = load_config(args.config, _flag_overrides(args))
    set_worker_threads(config.get("workers"))
    train_config = _train_config(config)
    s_max = int(config["lag"]["s_max"])
    if max(train_config.horizons) > s_max:
        raise ValidationError(
            f"horizon {max(train_config.horizons)} exceeds lag cap s_max={s_max}"
        )
    matrix, _ = (
        _load_dataset(config)
        if config["paths"]["distances"]
        else (_load_speeds_only(config), None)
    )
    graph = load_graph_file(args.graph)
    result = train_and_evaluate(
        matrix,
        graph,
        train_config,
        label=args.label,
        split_ratios=tuple(config["split"]),
        per_sensor_norm=config["normalization"] == "per_sensor",
    )
    _write_json(args.out, _artifact(config, report_to_dict(result.report)))
    if args.per_node_csv:
        with open(args.per_node_csv, "w", encoding="utf-8") as fh:
            fh.write(per_node_csv(result.per_node))
    if args.checkpoint:
        _write_json(args.checkpoint, params_to_dict(result.params))
    if args.log_csv:
        with open(args.log_csv, "w", encoding="utf-8") as fh:
            fh.write(log_to_csv(result.log))
    final = result.report.horizons[-1]
    _log(
        f"[{args.label}] trained {len(result.log)} epochs; "
        f"{final.horizon_minutes:g}-min mae {final.mae:.4f}"
    )
    return 0


def _load_speeds_only(config: dict):
    speeds = config["paths"]["speeds"]
    if not speeds:
        raise ValidationError("config must set paths.speeds")
    return load_speed_matrix(
        speeds, sampling_interval=config.get("sampling_interval_minutes", 5.0)
    )


def cmd_compare(args) -> int:
    reports = [load_report(path) for path in args.reports]
    table = compare(reports)
    text = render_table(table)
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(table_to_csv(table))
    if args.text:
        with open(args.text, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return 0


def cmd_synth(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        from dataclasses import replace

        scenario = replace(scenario, seed=int(args.seed))
    matrix, table, truth = generate(scenario)
    import os

    os.makedirs(args.out_dir, exist_ok=True)
    speeds_path = os.path.join(args.out_dir, "speeds.csv")
    dist_path = os.path.join(args.out_dir, "distances.csv")
    truth_path = os.path.join(args.out_dir, "truth.json")
    save_speed_matrix(matrix, speeds_path)
    with open(dist_path, "w", encoding="utf-8") as fh:
        fh.write("from,to,cost\n")
        for u, v, c in table.edges:
            fh.write(f"{u},{v},{c!r}\n")
    _write_json(
        truth_path,
        _artifact({"scenario": scenario_to_dict(scenario)}, graph_to_dict(truth)),
    )
    _log(f"wrote {speeds_path}, {dist_path}, {truth_path}")
    return 0


def cmd_score(args) -> int:
    detected = load_graph_file(args.detected)
    truth = load_graph_file(args.truth)
    if not isinstance(detected, CausalGraph) or not isinstance(truth, CausalGraph):
        raise ValidationError("score expects causal graph files")
    precision, recall, lag_accuracy = score_recovery(detected, truth)
    payload = _artifact(
        {},
        {
            "precision": precision,
            "recall": recall,
            "lag_accuracy": lag_accuracy,
            "detected_edges": len(detected.edges),
            "truth_edges": len(truth.edges),
        },
    )
    _write_json(args.out, payload)
    _log(
        f"precision {precision:.3f}, recall {recall:.3f}, lag accuracy {lag_accuracy:.3f}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stgc",
        description="Spatial-temporal Granger causality graphs for traffic forecasting",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--speeds", help="speed CSV path")
        p.add_argument("--distances", help="distance CSV path")
        p.add_argument("--coordinates", help="sensor coordinates CSV (id,lon,lat)")
        p.add_argument("--split", help="train,val,test ratios, e.g. 0.7,0.1,0.2")
        p.add_argument("--var-order", dest="var_order", type=int)
        p.add_argument("--alpha", type=float)
        p.add_argument("--top-k", dest="top_k", type=int)
        p.add_argument("--unit-scale", dest="unit_scale", type=float)
        p.add_argument("--s-max", dest="s_max", type=int)
        p.add_argument("--kappa", type=float)
        p.add_argument("--window", type=int)
        p.add_argument("--horizons", help="comma-separated horizon steps")
        p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--patience", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--global-norm", dest="global_norm", action="store_true")

    p = sub.add_parser("build-graph", help="discover the causal graph")
    common(p)
    p.add_argument("--out", required=True, help="graph JSON output")
    p.add_argument("--lag-csv", dest="lag_csv", help="lag matrix CSV output")
    p.add_argument("--summary", help="summary JSON output")
    p.add_argument("--geojson", help="edge GeoJSON output (needs coordinates)")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("baseline", help="build a comparison graph")
    common(p)
    p.add_argument("--kind", required=True, choices=["sd", "identity", "random"])
    p.add_argument("--reference", help="STGC graph JSON (random baseline)")
    p.add_argument("--seeds", help="comma-separated seeds for random graphs")
    p.add_argument("--out", required=True)
    p.add_argument("--adjacency-csv", dest="adjacency_csv")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("train-eval", help="train the forecaster on a graph")
    common(p)
    p.add_argument("--graph", required=True, help="graph JSON input")
    p.add_argument("--label", required=True, help="graph label for the report")
    p.add_argument("--out", required=True, help="metrics report JSON")
    p.add_argument("--per-node-csv", dest="per_node_csv")
    p.add_argument("--checkpoint", help="model checkpoint JSON output")
    p.add_argument("--log-csv", dest="log_csv", help="training log CSV output")
    p.set_defaults(func=cmd_train_eval)

    p = sub.add_parser("compare", help="tabulate metric reports")
    p.add_argument("reports", nargs="+", help="report JSON files")
    p.add_argument("--out", help="CSV output")
    p.add_argument("--text", help="plain-text table output")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--scenario", required=True, help="scenario JSON")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("score", help="score a detected graph against truth")
    p.add_argument("--detected", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValidationError) as exc:
        _log(f"error: {exc}")
        return 2
    except FileNotFoundError as exc:
        _log(f"error: file not found: {exc.filename or exc}")
        return 2
    except json.JSONDecodeError as exc:
        _log(f"error: invalid JSON: {exc}")
        return 2
    except (ComputationError, StgcError) as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())

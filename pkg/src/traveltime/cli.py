"""Command-line entry point: ``traveltime <command> [--config FILE] [--set k=v]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .config import city_config, config_hash, dump_config, load_config
from .evaluation import (
    DESK_GRIDS,
    FULL_GRIDS,
    ParamGrid,
    compare_short_long,
    fit_longterm_model,
    grid_search,
    hourly_rmse,
    longterm_eval,
    shortterm_sweep,
    split_validation_tail,
    win_counts,
    write_sweep,
)
from .features import (
    KINDS,
    FeatureMatrix,
    FeatureSchema,
    assemble_features,
    full_schema,
    schema_by_name,
    schema_path,
    split_matrix,
)
from .jobs import default_workers
from .manifest import write_manifest
from .models import MODEL_KINDS, load_model, save_model
from .routing import NoRoute, RoadGraph, UnroutablePoint, read_graph, route_features_for_trips, write_graph
from .synth import generate_city, generate_trips, generate_weather
from .trips import (
    CleaningRules,
    ZoneGrid,
    assign_zones,
    clean_trips,
    join_weather,
    parse_trips,
    read_trip_table,
    read_weather,
    write_trip_table,
    write_trips,
    write_weather,
)

log = logging.getLogger("traveltime")


class MissingArtifact(FileNotFoundError):
    pass


class Run:
    """Resolved configuration plus path helpers shared by all commands."""

    def __init__(self, args):
        self.args = args
        self.config = load_config(args.config, args.set or [])
        self.hash = config_hash(self.config)
        self.seed = int(self.config["seed"])
        self.single_thread = bool(args.single_thread)
        workers = 1 if self.single_thread else int(self.config.get("workers") or 0)
        self.workers = workers if workers > 0 else default_workers()
        paths = self.config["paths"]
        self.data = Path(paths["data_dir"])
        self.models = Path(paths["models_dir"])
        self.reports = Path(paths["reports_dir"])
        self.written = []

    def need(self, path, produced_by: str) -> Path:
        path = Path(path)
        if not path.exists():
            raise MissingArtifact(f"missing artifact {path} (run `traveltime {produced_by}` first)")
        return path

    def out(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def record(self, path, command: str, inputs=(), extra=None):
        write_manifest(path, command=command, seed=self.seed, config_hash=self.hash,
                       inputs=[Path(p) for p in inputs], extra=extra)
        self.written.append(Path(path))
        log.info("wrote %s", path)

    # common artifacts
    @property
    def nodes_csv(self):
        return self.data / "nodes.csv"

    @property
    def edges_csv(self):
        return self.data / "edges.csv"

    @property
    def features_csv(self):
        return self.data / "features.csv"

    def schema(self) -> FeatureSchema:
        schema = schema_by_name(self.config["schema"])
        if self.config.get("encode_main_street"):
            schema = schema.with_included("main_street")
        return schema

    def graph(self) -> RoadGraph:
        return read_graph(self.need(self.nodes_csv, "synth"), self.need(self.edges_csv, "synth"))

    def matrix(self, schema: FeatureSchema | None = None) -> FeatureMatrix:
        m = FeatureMatrix.from_csv(self.need(self.features_csv, "features"))
        return m.select(schema or self.schema())

    def split(self, schema=None):
        s = self.config["split"]
        return split_matrix(self.matrix(schema), s["train"], s["test"])


# --- commands ----------------------------------------------------------------------

def cmd_synth(run: Run):
    cfg = city_config(run.config)
    city = generate_city(cfg)
    trips = generate_trips(city)
    weather = generate_weather(cfg)
    write_graph(city.graph, run.out(run.nodes_csv), run.out(run.edges_csv))
    write_trips(trips, run.out(run.data / "trips_raw.csv"))
    write_weather(weather, run.out(run.data / "weather.csv"))
    surface = pd.DataFrame(city.surface, columns=[str(h) for h in range(24)])
    surface.insert(0, "weekday", range(7))
    surface.to_csv(run.out(run.data / "speed_surface.csv"), index=False, lineterminator="\n")
    for name in ("nodes.csv", "edges.csv", "trips_raw.csv", "weather.csv", "speed_surface.csv"):
        run.record(run.data / name, "synth")


def cmd_ingest(run: Run):
    ing = run.config["ingest"]
    trips_path = run.need(ing.get("trips") or run.data / "trips_raw.csv", "synth")
    weather_path = run.need(ing.get("weather") or run.data / "weather.csv", "synth")
    trips, parse_report = parse_trips(trips_path, ing.get("columns") or {}, ing.get("delimiter", ","),
                                      ing.get("bbox"))
    kept, report = clean_trips(trips, CleaningRules(**run.config["cleaning"]))
    weather = read_weather(weather_path)
    kept = join_weather(kept, weather)
    zb = ing.get("bbox") or [40.70, 40.88, -74.02, -73.91]
    kept = assign_zones(kept, ZoneGrid(*zb, cell_size=run.config["zones"]["cell_size"]))
    out = run.out(run.data / "trips.csv")
    write_trip_table(kept.drop(columns=["line"]), out)
    run.record(out, "ingest", [trips_path, weather_path])
    report.to_csv(run.out(run.reports / "rejections.csv"))
    report.details_to_csv(run.out(run.reports / "rejections_detail.csv"))
    pd.DataFrame(parse_report.rejects, columns=["line", "reason"]).to_csv(
        run.out(run.reports / "parse_rejects.csv"), index=False, lineterminator="\n")
    for name in ("rejections.csv", "rejections_detail.csv", "parse_rejects.csv"):
        run.record(run.reports / name, "ingest", [trips_path])
    log.info("kept %d of %d parsed trips (%d unparseable rows)", len(kept), len(trips),
             parse_report.n_rejected)


def cmd_features(run: Run):
    trips_path = run.need(run.data / "trips.csv", "ingest")
    trips = read_trip_table(trips_path)
    graph = run.graph().largest_component()
    routes, failed = route_features_for_trips(graph, trips, run.config["routing"]["snap_radius"])
    routes_out = run.out(run.data / "route_features.csv")
    routes.to_csv(routes_out, index=False, lineterminator="\n")
    failed.to_csv(run.out(run.reports / "unroutable.csv"), index=False, lineterminator="\n")
    routed = trips[trips["trip_id"].isin(routes["trip_id"])]
    matrix = assemble_features(routed, routes, full_schema().with_included("main_street"))
    matrix.to_csv(run.out(run.features_csv))
    inputs = [trips_path, run.nodes_csv, run.edges_csv]
    run.record(routes_out, "features", inputs)
    run.record(run.reports / "unroutable.csv", "features", inputs)
    run.record(run.features_csv, "features", inputs)
    run.record(schema_path(run.features_csv), "features", inputs)


def _model_params(run: Run, kind: str) -> dict:
    params = dict(run.config["longterm"]["models"].get(kind) or {})
    tuned = run.models / f"tune_{kind}_best.json"
    if run.args.tuned:
        params.update(json.loads(run.need(tuned, "tune").read_text()))
    return params


def cmd_train(run: Run):
    kinds = [run.args.model] if run.args.model != "all" else list(MODEL_KINDS)
    train, _ = run.split()
    lt = run.config["longterm"]
    for kind in kinds:
        model = fit_longterm_model(kind, _model_params(run, kind), train, run.seed,
                                   lt["validation_hours"], lt["refit"])
        path = save_model(model, run.out(run.models / f"{kind}.json"))
        run.record(path, "train", [run.features_csv])


def _grid(run: Run, kind: str) -> ParamGrid:
    name = run.config["tune"]["grid"]
    if isinstance(name, dict):
        return ParamGrid.from_dict(name)
    table = {"desk": DESK_GRIDS, "full": FULL_GRIDS}.get(name)
    if table is None:
        raise ValueError(f"tune.grid must be 'desk', 'full' or an inline grid, got {name!r}")
    return table[kind]


def cmd_tune(run: Run):
    kind = run.args.model or run.config["tune"]["kind"]
    train, _ = run.split()
    fit_part, valid = split_validation_tail(train, run.config["tune"]["validation_hours"])
    best, results = grid_search(kind, _grid(run, kind), fit_part, valid, seed=run.seed,
                                workers=run.workers)
    table = run.out(run.reports / f"tune_{kind}.csv")
    if run.single_thread:
        results = results.assign(train_seconds="")
    results.to_csv(table, index=False, lineterminator="\n", float_format="%.10g")
    best_path = run.out(run.models / f"tune_{kind}_best.json")
    best_path.write_text(json.dumps(best, indent=2, sort_keys=True) + "\n")
    run.record(table, "tune", [run.features_csv])
    run.record(best_path, "tune", [run.features_csv])


def cmd_eval_long(run: Run):
    train, test = run.split()
    lt = run.config["longterm"]
    models = {k: (dict(v or {}) if not run.args.tuned else _model_params(run, k))
              for k, v in lt["models"].items()}
    grid = ZoneGrid(*run.config["ingest"]["bbox"], cell_size=run.config["zones"]["cell_size"])
    report = longterm_eval(train, test, models, grid=grid, seed=run.seed,
                           validation_hours=lt["validation_hours"], refit=lt["refit"],
                           workers=run.workers)
    table = run.out(run.reports / "longterm.csv")
    report.to_csv(table, timings=not run.single_thread)
    timings = dict(zip(report.table["model"], report.table["train_seconds"].round(3)))
    run.record(table, "eval-long", [run.features_csv], extra={"train_seconds": timings})
    if report.importance is not None:
        imp = run.out(run.reports / "importance.csv")
        report.importance.to_csv(imp, index=False, lineterminator="\n", float_format="%.10g")
        run.record(imp, "eval-long", [run.features_csv])
    for kind, model in report.models.items():
        if kind == "naive":
            continue
        path = save_model(model, run.out(run.models / "longterm" / f"{kind}.json"))
        run.record(path, "eval-long", [run.features_csv])


def _short_window(run: Run):
    st = run.config["shortterm"]
    start = st.get("start") or run.config["split"]["test"][0]
    return start, int(st["days"]), int(st["lookbacks"])


def cmd_eval_short(run: Run):
    st = run.config["shortterm"]
    start, days, lookbacks = _short_window(run)
    matrix = run.matrix(schema_by_name("shortterm"))
    sweep = shortterm_sweep(matrix, start, days, lookbacks, dict(st["params"] or {}), kind=st["kind"],
                            seed=run.seed, workers=run.workers)
    out = run.out(run.reports / "shortterm.csv")
    write_sweep(sweep, out, timings=not run.single_thread)
    run.record(out, "eval-short", [run.features_csv],
               extra={"train_seconds_total": round(float(np.nansum(sweep["train_seconds"])), 3)})


def cmd_compare(run: Run):
    start, _, _ = _short_window(run)
    short_path = run.need(run.reports / "shortterm.csv", "eval-short")
    kind = run.config["compare"]["model"]
    model_path = run.need(run.models / "longterm" / f"{kind}.json", "eval-long")
    short = pd.read_csv(short_path)
    model = load_model(model_path)
    matrix = run.matrix(_schema_for(model.feature_names))
    # cover exactly the hours the sweep covered
    long = hourly_rmse(model, matrix, start, int(short["hour_index"].max()) + 1)
    table = compare_short_long(short, long)
    out = run.out(run.reports / "comparison.csv")
    table.to_csv(out, index=False, lineterminator="\n", float_format="%.10g")
    wins = run.out(run.reports / "comparison_weekday.csv")
    win_counts(table).to_csv(wins, index=False, lineterminator="\n")
    inputs = [short_path, model_path, run.features_csv]
    run.record(out, "compare", inputs)
    run.record(wins, "compare", inputs)


def _schema_for(names) -> FeatureSchema:
    if not names:
        raise ValueError("model file does not record its feature names")
    schema = FeatureSchema("model", frozenset(set(KINDS) - set(names)),
                           encode_main_street="main_street" in names)
    if schema.columns != list(names):
        raise ValueError(f"unrecognized feature layout {names}")
    return schema


QUERY_FIELDS = ["pickup_datetime", "pickup_latitude", "pickup_longitude",
                "dropoff_latitude", "dropoff_longitude"]


def cmd_predict(run: Run):
    model_path = run.need(run.args.model_file, "train")
    query_path = run.need(run.args.input, "predict --input")
    model = load_model(model_path)
    schema = _schema_for(model.feature_names)
    q = pd.read_csv(query_path)
    missing = [c for c in QUERY_FIELDS if c not in q]
    if missing:
        raise ValueError(f"query file lacks columns {missing}")
    q["pickup_datetime"] = pd.to_datetime(q["pickup_datetime"])
    if "trip_id" not in q:
        q.insert(0, "trip_id", np.arange(len(q)))
    for c in ("vendor_id", "passenger_count"):
        if c not in q:
            q[c] = 1
    q["trip_duration"] = 0.0  # placeholder target
    inputs = [model_path, query_path]
    if any(c in schema.columns for c in ("snowfall", "snow_depth", "rainfall", "temperature")):
        weather_path = run.need(run.config["ingest"].get("weather") or run.data / "weather.csv", "synth")
        q = join_weather(q, read_weather(weather_path))
        inputs.append(weather_path)
    graph = run.graph().largest_component()
    routes, failed = route_features_for_trips(graph, q, run.config["routing"]["snap_radius"])
    pred = pd.Series(np.nan, index=q["trip_id"])
    if len(routes):
        ok = q[q["trip_id"].isin(routes["trip_id"])]
        m = assemble_features(ok, routes, schema)
        pred.loc[m.row_ids] = model.predict(m.X)
    status = pd.Series("ok", index=q["trip_id"])
    status.loc[failed["trip_id"].to_numpy()] = failed["reason"].to_numpy()
    out = pd.DataFrame({"trip_id": q["trip_id"], "predicted_duration": pred.to_numpy(),
                        "status": status.to_numpy()})
    out_path = run.out(run.args.output)
    out.to_csv(out_path, index=False, lineterminator="\n", float_format="%.6f")
    run.record(out_path, "predict", inputs + [run.nodes_csv, run.edges_csv])


def cmd_show_config(run: Run):
    sys.stdout.write(dump_config(run.config))


COMMANDS = {
    "synth": (cmd_synth, "generate the synthetic city, trips and weather"),
    "ingest": (cmd_ingest, "parse, clean, join weather and assign zones"),
    "features": (cmd_features, "route every trip and build the feature matrix"),
    "train": (cmd_train, "train one model (or all) on the training dates"),
    "tune": (cmd_tune, "step-wise grid search on a validation tail"),
    "eval-long": (cmd_eval_long, "naive baseline and five tree models on the test dates"),
    "eval-short": (cmd_eval_short, "sliding-window sweep over test hours and lookbacks"),
    "compare": (cmd_compare, "short-term against long-term RMSE per test hour"),
    "predict": (cmd_predict, "predict durations for a query CSV"),
    "show-config": (cmd_show_config, "print the resolved configuration"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (dotted path), repeatable")
    common.add_argument("--single-thread", action="store_true",
                        help="one worker and no timing columns, for byte-identical reruns")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="traveltime", description="Tree-based travel time prediction.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    parsers = {name: sub.add_parser(name, parents=[common], help=text)
               for name, (_, text) in COMMANDS.items()}
    parsers["train"].add_argument("--model", default="all", choices=list(MODEL_KINDS) + ["all"])
    parsers["tune"].add_argument("--model", choices=MODEL_KINDS)
    for name in ("train", "eval-long"):
        parsers[name].add_argument("--tuned", action="store_true",
                                   help="use parameters found by `tune`")
    parsers["tune"].set_defaults(tuned=False)
    p = parsers["predict"]
    p.add_argument("--model", dest="model_file", required=True, help="saved model JSON")
    p.add_argument("--input", required=True, help="CSV of pickup time and coordinates")
    p.add_argument("--output", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run = Run(args)
        COMMANDS[args.command][0](run)
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError, UnroutablePoint, NoRoute) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

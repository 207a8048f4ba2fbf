"""Evaluation harness: RMSE, the zone/time naive baseline, step-wise grid
search, the long-term model comparison and the short-term sliding-window
sweep."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from itertools import product

import numpy as np
import pandas as pd

from .boosting import feature_importance
from .features import FeatureMatrix, shortterm_schema, time_mask
from .jobs import run_jobs
from .models import MODEL_KINDS, fit_model, make_params
from .trips import ZoneGrid

log = logging.getLogger(__name__)

NAIVE_LEVELS = ("zones_weekday_hour", "zones", "weekday_hour", "global")
HOUR = np.timedelta64(3600, "s")


def rmse(pred, y) -> float:
    pred = np.asarray(pred, dtype=float)
    y = np.asarray(y, dtype=float)
    if pred.shape != y.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {y.shape}")
    if y.size == 0:
        raise ValueError("rmse of an empty set")
    return float(np.sqrt(np.mean((y - pred) ** 2)))


def cell_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


# --- naive baseline ---------------------------------------------------------------

def _naive_keys(frame: pd.DataFrame, grid: ZoneGrid) -> pd.DataFrame:
    if "pickup_zone" in frame and "dropoff_zone" in frame:
        pz, dz = frame["pickup_zone"].to_numpy(), frame["dropoff_zone"].to_numpy()
    else:
        pz = grid.cell(frame["pickup_latitude"], frame["pickup_longitude"])
        dz = grid.cell(frame["dropoff_latitude"], frame["dropoff_longitude"])
    if "weekday" in frame and "hour" in frame:
        wd, hr = frame["weekday"].to_numpy(), frame["hour"].to_numpy()
    else:
        wd = frame["pickup_datetime"].dt.weekday.to_numpy()
        hr = frame["pickup_datetime"].dt.hour.to_numpy()
    return pd.DataFrame({"pz": pz, "dz": dz, "wd": wd, "hr": hr}).astype(np.int64)


class NaiveModel:
    """Mean training duration per (pickup zone, dropoff zone, weekday,
    hour), falling back to the zone pair, then weekday and hour, then the
    global mean. Levels are numbered 1 to 4 in that order."""

    KEYS = (["pz", "dz", "wd", "hr"], ["pz", "dz"], ["wd", "hr"])

    def __init__(self, grid: ZoneGrid, tables: list, global_mean: float):
        self.grid = grid
        self.tables = tables
        self.global_mean = float(global_mean)

    @classmethod
    def fit(cls, trips: pd.DataFrame, grid: ZoneGrid = ZoneGrid(), target: str = "trip_duration"):
        if len(trips) == 0:
            raise ValueError("naive model needs at least one training trip")
        keys = _naive_keys(trips, grid)
        keys["y"] = trips[target].to_numpy(dtype=float)
        tables = [keys.groupby(k)["y"].mean() for k in cls.KEYS]
        return cls(grid, tables, keys["y"].mean())

    def predict_with_level(self, frame: pd.DataFrame):
        keys = _naive_keys(frame, self.grid)
        pred = np.full(len(keys), np.nan)
        level = np.zeros(len(keys), dtype=np.int64)
        for i, (cols, table) in enumerate(zip(self.KEYS, self.tables), start=1):
            todo = np.isnan(pred)
            if not todo.any():
                break
            idx = pd.MultiIndex.from_frame(keys.loc[todo, cols]) if len(cols) > 1 else keys.loc[todo, cols[0]]
            found = table.reindex(idx).to_numpy()
            hit = ~np.isnan(found)
            rows = np.flatnonzero(todo)[hit]
            pred[rows] = found[hit]
            level[rows] = i
        rest = np.isnan(pred)
        pred[rest] = self.global_mean
        level[rest] = len(NAIVE_LEVELS)
        return pred, level

    def predict(self, frame: pd.DataFrame) -> np.ndarray:
        return self.predict_with_level(frame)[0]

    n_trees = 0


def fit_naive(trips: pd.DataFrame, grid: ZoneGrid = ZoneGrid()) -> NaiveModel:
    return NaiveModel.fit(trips, grid)


def predict_naive(model: NaiveModel, trips: pd.DataFrame) -> np.ndarray:
    return model.predict(trips)


# --- grid search ----------------------------------------------------------------------

@dataclass
class ParamGrid:
    """Ordered steps; each step is searched jointly with the winners of
    earlier steps held fixed."""
    steps: list
    fixed: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.steps:
            raise ValueError("grid has no steps")
        for step in self.steps:
            if not step:
                raise ValueError("empty grid step")
            for name, values in step.items():
                if not isinstance(values, (list, tuple)) or not values:
                    raise ValueError(f"grid values for {name!r} must be a nonempty list")

    @property
    def n_cells(self) -> int:
        return sum(int(np.prod([len(v) for v in step.values()])) for step in self.steps)

    def step_cells(self, i: int, current: dict) -> list:
        step = self.steps[i]
        return [dict(current, **dict(zip(step, combo))) for combo in product(*step.values())]

    def to_dict(self) -> dict:
        return {"steps": [{k: list(v) for k, v in s.items()} for s in self.steps],
                "fixed": dict(self.fixed)}

    @classmethod
    def from_dict(cls, d: dict) -> "ParamGrid":
        return cls([dict(s) for s in d["steps"]], dict(d.get("fixed", {})))


# Full-size grids. The boosting steps reconstruct a step-wise tuning order;
# leaf counts for the leaf-wise model are our choice.
FULL_GRIDS = {
    "cart": ParamGrid([{"max_depth": [3, 8, 13, 18, 23, 38, 33],
                        "min_child_weight": list(range(10, 131, 10))}]),
    "random_forest": ParamGrid([{"subsample": [0.6, 0.7, 0.8, 0.9, 1.0],
                                 "colsample_bytree": [0.6, 0.7, 0.8, 0.9, 1.0],
                                 "n_trees": [20, 40, 60, 80, 100],
                                 "max_depth": [8, 13, 18, 23, 28]}]),
    "extra_trees": ParamGrid([{"colsample_bytree": [0.6, 0.7, 0.8, 0.9, 1.0],
                               "n_trees": [20, 40, 60, 80, 100],
                               "max_depth": [3, 8, 13, 18, 23, 28, 33]}]),
    "gbt_depthwise": ParamGrid(
        [{"max_depth": [3, 5, 7, 9, 11, 13, 15, 17, 19, 21],
          "min_child_weight": [1] + list(range(10, 111, 10))},
         {"gamma": [0, 1, 2, 5, 10, 20, 50, 100]},
         {"subsample": [0.6, 0.7, 0.8, 0.9, 1.0], "colsample_bytree": [0.6, 0.7, 0.8, 0.9, 1.0]},
         {"reg_lambda": [0.00001, 0.01, 1, 20, 50, 100, 200]},
         {"learning_rate": [0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2]}],
        fixed={"learning_rate": 0.3, "gamma": 1.0, "reg_lambda": 20.0, "subsample": 1.0,
               "colsample_bytree": 1.0, "num_rounds": 5000, "early_stopping_patience": 50}),
    "gbt_leafwise": ParamGrid(
        [{"max_leaves": [31, 63, 127, 255, 511, 900],
          "min_child_weight": [10, 30, 50, 70, 90, 110, 130]},
         {"gamma": [0, 1, 2, 5, 10, 20, 50, 100]},
         {"reg_lambda": [0.00001, 0.01, 1, 20, 50, 100, 200]},
         {"learning_rate": [0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2]}],
        fixed={"learning_rate": 0.3, "gamma": 1.0, "reg_lambda": 20.0, "max_depth": 64,
               "num_rounds": 5000, "early_stopping_patience": 50}),
}

# Small grids that finish in minutes at desk scale.
DESK_GRIDS = {
    "cart": ParamGrid([{"max_depth": [8, 13, 18], "min_child_weight": [10, 30, 60, 100]}]),
    "random_forest": ParamGrid([{"max_depth": [13, 18], "colsample_bytree": [0.6, 0.8, 1.0]},
                                {"subsample": [0.8, 1.0]}],
                               fixed={"n_trees": 20, "min_child_weight": 5}),
    "extra_trees": ParamGrid([{"max_depth": [13, 18], "colsample_bytree": [0.6, 0.8, 1.0]}],
                             fixed={"n_trees": 20, "min_child_weight": 5}),
    "gbt_depthwise": ParamGrid([{"max_depth": [4, 6, 8], "min_child_weight": [1, 20]},
                                {"reg_lambda": [1.0, 20.0]}, {"learning_rate": [0.1, 0.3]}],
                               fixed={"learning_rate": 0.3, "num_rounds": 1000,
                                      "early_stopping_patience": 20}),
    "gbt_leafwise": ParamGrid([{"max_leaves": [15, 31, 63], "min_child_weight": [1, 20]},
                               {"reg_lambda": [1.0, 20.0]}, {"learning_rate": [0.1, 0.3]}],
                              fixed={"learning_rate": 0.3, "max_depth": 32, "num_rounds": 1000,
                                     "early_stopping_patience": 20}),
}


def _grid_cell(shared, item):
    X, y, Xv, yv = shared
    kind, params, seed = item
    start = time.perf_counter()
    try:
        make_params(kind, params, seed)
        gbt = kind.startswith("gbt")
        model = fit_model(kind, params, X, y, Xv if gbt else None, yv if gbt else None, seed=seed)
        score = rmse(model.predict(Xv), yv)
        return score, time.perf_counter() - start, model.n_trees, ""
    except (ValueError, FloatingPointError) as exc:
        return float("nan"), time.perf_counter() - start, 0, str(exc)


def grid_search(kind: str, grid: ParamGrid, train: FeatureMatrix, valid: FeatureMatrix,
                base_params: dict | None = None, seed: int = 0, workers: int = 1):
    """Step-wise search by validation RMSE.

    Returns (best params, results table). Within a step the first cell in
    enumeration order wins ties. Cells that fail to train are recorded
    with their error and skipped.
    """
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    current = dict(grid.fixed)
    current.update(base_params or {})
    rows = []
    shared = (train.X, train.y, valid.X, valid.y)
    for s in range(len(grid.steps)):
        cells = grid.step_cells(s, current)
        results = run_jobs(_grid_cell, [(kind, c, seed) for c in cells], shared, workers)
        scores = np.array([r[0] for r in results])
        if np.isnan(scores).all():
            raise ValueError(f"every cell of step {s + 1} failed: {results[0][3]}")
        winner = int(np.nanargmin(scores))
        ties = np.flatnonzero(scores == scores[winner])
        if len(ties) > 1:
            log.info("step %d: %d cells tie at RMSE %.6g; keeping the first", s + 1, len(ties), scores[winner])
        for i, (cell, (score, secs, n_trees, err)) in enumerate(zip(cells, results)):
            rows.append({"step": s + 1, "cell": i, "params": json.dumps(cell, sort_keys=True),
                         "valid_rmse": score, "train_seconds": secs, "n_trees": n_trees,
                         "error": err, "selected": i == winner})
        current = cells[winner]
    return current, pd.DataFrame(rows)


# --- long-term comparison ---------------------------------------------------------

@dataclass
class EvalReport:
    table: pd.DataFrame                       # model, rmse, train_seconds, n_trees
    models: dict = field(default_factory=dict, repr=False)
    importance: pd.DataFrame | None = None

    def to_csv(self, path, timings: bool = True):
        out = self.table.copy()
        if not timings:
            out["train_seconds"] = ""
        out.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")


def split_validation_tail(train: FeatureMatrix, hours: float):
    """Hold out the last ``hours`` of the training range for early stopping."""
    end = train.pickup.max()
    cut = end - np.timedelta64(int(hours * 3600), "s")
    tail = train.pickup > cut
    if tail.all() or not tail.any():
        raise ValueError("validation tail must leave rows on both sides")
    return train.subset(~tail), train.subset(tail)


def fit_longterm_model(kind: str, params: dict, train: FeatureMatrix, seed: int = 0,
                       validation_hours: float = 0.0, refit: bool = True):
    """Fit one model on the training range. Boosted models with a
    validation tail early-stop on it and, with ``refit``, are refitted on
    the whole range for the chosen number of rounds."""
    names = train.columns
    if not kind.startswith("gbt") or validation_hours <= 0:
        return fit_model(kind, params, train.X, train.y, feature_names=names, seed=seed)
    head, tail = split_validation_tail(train, validation_hours)
    model = fit_model(kind, params, head.X, head.y, tail.X, tail.y, feature_names=names, seed=seed)
    if not refit:
        return model
    again = dict(params, num_rounds=model.best_round)
    return fit_model(kind, again, train.X, train.y, feature_names=names, seed=seed)


def _longterm_cell(shared, item):
    train, = shared
    kind, params, seed, validation_hours, refit = item
    start = time.perf_counter()
    model = fit_longterm_model(kind, params, train, seed, validation_hours, refit)
    return model, time.perf_counter() - start


def longterm_eval(train: FeatureMatrix, test: FeatureMatrix, models: dict, *,
                  grid: ZoneGrid | None = ZoneGrid(), seed: int = 0,
                  validation_hours: float = 0.0, refit: bool = True, workers: int = 1) -> EvalReport:
    """Train the naive baseline (when ``grid`` is given) and every model in
    ``models`` (kind -> params) on ``train``; report test RMSE, training
    time and tree count per model."""
    rows, fitted = [], {}
    if grid is not None:
        start = time.perf_counter()
        naive = NaiveModel.fit(train.to_frame(), grid)
        secs = time.perf_counter() - start
        rows.append(("naive", rmse(naive.predict(test.to_frame()), test.y), secs, 0))
        fitted["naive"] = naive
    kinds = list(models)
    items = [(k, models[k] or {}, seed, validation_hours, refit) for k in kinds]
    for kind, (model, secs) in zip(kinds, run_jobs(_longterm_cell, items, (train,), workers)):
        rows.append((kind, rmse(model.predict(test.X), test.y), secs, model.n_trees))
        fitted[kind] = model
    table = pd.DataFrame(rows, columns=["model", "rmse", "train_seconds", "n_trees"])
    importance = None
    for kind in ("gbt_depthwise", "gbt_leafwise"):
        if kind in fitted:
            importance = importance_table(fitted[kind])
            break
    return EvalReport(table, fitted, importance)


def importance_table(model) -> pd.DataFrame:
    imp = feature_importance(model)
    rows = [(name, v["gain"], v["count"], v["share"]) for name, v in imp.items()]
    frame = pd.DataFrame(rows, columns=["feature", "gain", "count", "share"])
    return frame.sort_values(["share", "feature"], ascending=[False, True]).reset_index(drop=True)


# --- short-term sweep ----------------------------------------------------------------

def _hours(start, n_hours: int) -> np.ndarray:
    first = np.datetime64(pd.Timestamp(start).floor("h"), "ns")
    return first + np.arange(n_hours) * HOUR


def _sweep_cell(shared, item):
    X, y, kind, params = shared
    h, lookback, lo, mid, hi, seed = item
    n_train, n_test = mid - lo, hi - mid
    if n_train == 0 or n_test == 0:
        return float("nan"), float("nan"), n_train, n_test
    start = time.perf_counter()
    model = fit_model(kind, params, X[lo:mid], y[lo:mid], seed=seed)
    secs = time.perf_counter() - start
    return rmse(model.predict(X[mid:hi]), y[mid:hi]), secs, n_train, n_test


def shortterm_sweep(matrix: FeatureMatrix, start, n_days: int, lookbacks: int, params: dict,
                    *, kind: str = "gbt_depthwise", schema=None, seed: int = 0,
                    workers: int = 1) -> pd.DataFrame:
    """For each test hour h of ``n_days`` days from ``start`` and each
    lookback i in 1..lookbacks, train on pickups in [h - i, h) and score on
    [h, h + 1). Returns one row per (hour, lookback); cells without train
    or test trips have NaN RMSE."""
    if lookbacks < 1 or n_days < 1:
        raise ValueError("need n_days >= 1 and lookbacks >= 1")
    schema = schema or shortterm_schema()
    m = matrix.select(schema) if matrix.columns != schema.columns else matrix
    order = np.argsort(m.pickup, kind="stable")
    pickup = m.pickup[order]
    X, y = m.X[order], m.y[order]
    hours = _hours(start, 24 * n_days)
    items = []
    for hi_, h in enumerate(hours):
        mid = int(np.searchsorted(pickup, h, side="left"))
        hi = int(np.searchsorted(pickup, h + HOUR, side="left"))
        for i in range(1, lookbacks + 1):
            lo = int(np.searchsorted(pickup, h - i * HOUR, side="left"))
            items.append((hi_, i, lo, mid, hi, cell_seed(seed, hi_, i)))
    if "seed" in (params or {}):
        items = [it[:5] + (params["seed"],) for it in items]
    make_params(kind, params)
    results = run_jobs(_sweep_cell, items, (X, y, kind, dict(params or {})), workers)
    rows = []
    for (hi_, i, *_), (score, secs, n_train, n_test) in zip(items, results):
        stamp = pd.Timestamp(hours[hi_])
        rows.append((hi_, stamp.weekday(), stamp.hour, i, score, secs, n_train, n_test))
    return pd.DataFrame(rows, columns=["hour_index", "weekday", "hour", "lookback", "rmse",
                                       "train_seconds", "n_train", "n_test"])


def rmse_matrix(sweep: pd.DataFrame) -> pd.DataFrame:
    """Test hours x lookbacks view of a sweep."""
    return sweep.pivot(index="hour_index", columns="lookback", values="rmse")


def write_sweep(sweep: pd.DataFrame, path, timings: bool = True):
    out = sweep.copy()
    if not timings:
        out["train_seconds"] = ""
    out.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")


def hourly_rmse(model, matrix: FeatureMatrix, start, n_hours: int) -> pd.DataFrame:
    """Per-hour test RMSE of one model over consecutive hours."""
    pred = model.predict(matrix.X) if not isinstance(model, NaiveModel) else model.predict(matrix.to_frame())
    rows = []
    for i, h in enumerate(_hours(start, n_hours)):
        mask = time_mask(matrix.pickup, h, h + HOUR)
        n = int(mask.sum())
        stamp = pd.Timestamp(h)
        rows.append((i, stamp.weekday(), stamp.hour, rmse(pred[mask], matrix.y[mask]) if n else np.nan, n))
    return pd.DataFrame(rows, columns=["hour_index", "weekday", "hour", "rmse", "n_test"])


def compare_short_long(short: pd.DataFrame, long: pd.DataFrame) -> pd.DataFrame:
    """Per test hour: long-term RMSE against the best and the one-hour
    short-term RMSE. ``short`` is a sweep table, ``long`` an hourly_rmse
    table over the same hours."""
    tested_short = short.groupby("hour_index")["n_test"].max()
    tested_short = set(tested_short[tested_short > 0].index)
    tested_long = set(long.loc[long["n_test"] > 0, "hour_index"])
    if set(short["hour_index"]) != set(long["hour_index"]) or tested_short != tested_long:
        raise ValueError("short-term and long-term results cover different test hours")
    rows = []
    long = long.set_index("hour_index")
    for h, group in short.groupby("hour_index", sort=True):
        if h not in tested_long:
            continue
        scores = group.set_index("lookback")["rmse"]
        finite = scores.dropna()
        best_lb = int(finite.idxmin()) if len(finite) else -1
        best = float(finite.min()) if len(finite) else np.nan
        lr = float(long.loc[h, "rmse"])
        rows.append({
            "hour_index": int(h), "weekday": int(long.loc[h, "weekday"]), "hour": int(long.loc[h, "hour"]),
            "long_rmse": lr, "best_short_rmse": best, "best_lookback": best_lb,
            "short_1h_rmse": float(scores.get(1, np.nan)),
            "difference": lr - best, "short_wins": bool(best < lr),
        })
    return pd.DataFrame(rows)


def win_counts(comparison: pd.DataFrame) -> pd.DataFrame:
    """Hours won by the short-term and the long-term models per weekday."""
    g = comparison.groupby("weekday")
    out = pd.DataFrame({
        "hours": g.size(),
        "short_wins": g["short_wins"].sum().astype(int),
        "long_wins": g.apply(lambda t: int((t["difference"] < 0).sum()), include_groups=False),
    })
    out["ties"] = out["hours"] - out["short_wins"] - out["long_wins"]
    return out.reset_index()

"""Model-ready feature matrices, descriptive statistics and date splits."""
from __future__ import annotations

import json
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

TARGET = "trip_duration"

# Every candidate feature with its kind. Order here is the column order.
CANDIDATES = [
    ("vendor_id", "categorical"),
    ("passenger_count", "numeric"),
    ("weekday", "numeric"),
    ("hour", "numeric"),
    ("pickup_latitude", "numeric"),
    ("pickup_longitude", "numeric"),
    ("dropoff_latitude", "numeric"),
    ("dropoff_longitude", "numeric"),
    ("osrm_distance", "numeric"),
    ("osrm_duration", "numeric"),
    ("total_steps", "numeric"),
    ("total_turns", "numeric"),
    ("total_left", "numeric"),
    ("main_street", "categorical"),
    ("main_street_ratio", "numeric"),
    ("snowfall", "numeric"),
    ("snow_depth", "numeric"),
    ("rainfall", "numeric"),
    ("temperature", "numeric"),
]
KINDS = dict(CANDIDATES)

LOW_IMPORTANCE = ("vendor_id", "passenger_count", "total_steps", "total_left", "total_turns")
TEMPORAL = ("weekday",)
WEATHER = ("snowfall", "snow_depth", "rainfall", "temperature")


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureSchema:
    """All candidate features with a per-feature exclusion flag.

    ``main_street`` is text; it only enters the matrix when
    ``encode_main_street`` is set, as a stable hash of the name.
    """
    name: str
    excluded: frozenset
    target: str = TARGET
    encode_main_street: bool = False

    def __post_init__(self):
        object.__setattr__(self, "excluded", frozenset(self.excluded))
        unknown = set(self.excluded) - set(KINDS)
        if unknown:
            raise FeatureError(f"unknown features in exclusion list: {sorted(unknown)}")
        if self.target in KINDS:
            raise FeatureError("target cannot be a feature")

    @property
    def columns(self) -> list:
        out = []
        for name, _ in CANDIDATES:
            if name in self.excluded:
                continue
            if name == "main_street" and not self.encode_main_street:
                continue
            out.append(name)
        return out

    def kind(self, name: str) -> str:
        return KINDS[name]

    def with_included(self, *names) -> "FeatureSchema":
        return FeatureSchema(self.name, self.excluded - set(names), self.target,
                             self.encode_main_street or "main_street" in names)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "target": self.target,
            "columns": self.columns,
            "kinds": {c: KINDS[c] for c in self.columns},
            "excluded": sorted(self.excluded, key=list(KINDS).index),
            "encode_main_street": self.encode_main_street,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        schema = cls(d["name"], frozenset(d["excluded"]), d.get("target", TARGET),
                     bool(d.get("encode_main_street", False)))
        if "columns" in d and list(d["columns"]) != schema.columns:
            raise FeatureError("schema descriptor columns do not match its exclusions")
        return schema


def longterm_schema() -> FeatureSchema:
    """Eleven features: calendar, coordinates, routed distance and time,
    main street ratio, snowfall and temperature."""
    return FeatureSchema("longterm", frozenset(LOW_IMPORTANCE + ("main_street", "snow_depth", "rainfall")))


def shortterm_schema() -> FeatureSchema:
    """The long-term schema without weekday and weather."""
    base = longterm_schema()
    return FeatureSchema("shortterm", base.excluded | set(TEMPORAL) | set(WEATHER))


def full_schema() -> FeatureSchema:
    return FeatureSchema("full", frozenset({"main_street"}))


SCHEMAS = {"longterm": longterm_schema, "shortterm": shortterm_schema, "full": full_schema}


def schema_by_name(name: str) -> FeatureSchema:
    try:
        return SCHEMAS[name]()
    except KeyError:
        raise FeatureError(f"unknown schema {name!r}; choose from {sorted(SCHEMAS)}") from None


def street_code(name: str) -> int:
    return zlib.crc32(str(name).encode()) & 0x7FFFFFFF


@dataclass
class FeatureMatrix:
    X: np.ndarray
    y: np.ndarray
    row_ids: np.ndarray
    schema: FeatureSchema
    pickup: np.ndarray = field(default=None, repr=False)  # datetime64 per row, for time splits

    def __post_init__(self):
        if len(self.X) != len(self.y) or len(self.X) != len(self.row_ids):
            raise FeatureError("row count differs between X, y and row ids")

    @property
    def columns(self) -> list:
        return self.schema.columns

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, rows) -> "FeatureMatrix":
        return FeatureMatrix(self.X[rows], self.y[rows], self.row_ids[rows], self.schema,
                             None if self.pickup is None else self.pickup[rows])

    def select(self, schema: FeatureSchema) -> "FeatureMatrix":
        """Columns of another schema whose features are all present here."""
        missing = [c for c in schema.columns if c not in self.columns]
        if missing:
            raise FeatureError(f"matrix lacks columns {missing}")
        idx = [self.columns.index(c) for c in schema.columns]
        return FeatureMatrix(self.X[:, idx], self.y, self.row_ids, schema, self.pickup)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.X, columns=self.columns)
        frame.insert(0, "trip_id", self.row_ids)
        if self.pickup is not None:
            frame.insert(1, "pickup_datetime", pd.to_datetime(self.pickup))
        frame[self.schema.target] = self.y
        return frame

    def to_csv(self, path) -> Path:
        """Write the matrix and a ``.schema.json`` sidecar next to it."""
        path = Path(path)
        self.to_frame().to_csv(path, index=False, lineterminator="\n",
                               date_format="%Y-%m-%d %H:%M:%S")
        sidecar = schema_path(path)
        sidecar.write_text(json.dumps(self.schema.to_dict(), indent=2, sort_keys=True) + "\n")
        return sidecar

    @classmethod
    def from_csv(cls, path) -> "FeatureMatrix":
        path = Path(path)
        schema = FeatureSchema.from_dict(json.loads(schema_path(path).read_text()))
        frame = pd.read_csv(path)
        missing = [c for c in ["trip_id"] + schema.columns + [schema.target] if c not in frame]
        if missing:
            raise FeatureError(f"{path} lacks columns {missing}")
        pickup = (pd.to_datetime(frame["pickup_datetime"]).to_numpy()
                  if "pickup_datetime" in frame else None)
        return cls(frame[schema.columns].to_numpy(dtype=float), frame[schema.target].to_numpy(dtype=float),
                   frame["trip_id"].to_numpy(dtype=np.int64), schema, pickup)


def schema_path(matrix_path) -> Path:
    matrix_path = Path(matrix_path)
    return matrix_path.with_name(matrix_path.stem + ".schema.json")


def add_calendar(trips: pd.DataFrame) -> pd.DataFrame:
    out = trips.copy()
    out["weekday"] = out["pickup_datetime"].dt.weekday
    out["hour"] = out["pickup_datetime"].dt.hour
    return out


def assemble_features(trips: pd.DataFrame, route_features: pd.DataFrame | None,
                      schema: FeatureSchema) -> FeatureMatrix:
    """Join trips with their route features and lay out the schema's
    columns. Weekday is 0 for Monday."""
    frame = add_calendar(trips)
    if route_features is not None:
        cols = [c for c in route_features.columns if c != "trip_id"]
        frame = frame.drop(columns=[c for c in cols if c in frame])
        frame = frame.merge(route_features, on="trip_id", how="left", validate="one_to_one")
    columns = schema.columns
    absent = [c for c in columns + [schema.target] if c not in frame]
    if absent:
        raise FeatureError(f"trips lack columns {absent}")
    if "main_street" in columns:
        known = frame["main_street"].notna()
        frame.loc[known, "main_street"] = frame.loc[known, "main_street"].map(street_code)
    values = frame[columns].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    y = frame[schema.target].to_numpy(dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise FeatureError(f"missing value for trip {frame['trip_id'].iloc[r]} in column {columns[c]!r}")
    if not np.isfinite(y).all():
        r = int(np.argmax(~np.isfinite(y)))
        raise FeatureError(f"missing target for trip {frame['trip_id'].iloc[r]}")
    return FeatureMatrix(values, y, frame["trip_id"].to_numpy(dtype=np.int64), schema,
                         frame["pickup_datetime"].to_numpy())


def pearson_correlation(frame: pd.DataFrame) -> pd.DataFrame:
    """Pairwise correlations of numeric columns. Columns with zero variance
    have undefined correlations and come back as NaN, diagonal included."""
    data = frame.to_numpy(dtype=float)
    if len(data) < 2:
        raise ValueError("correlation needs at least 2 rows")
    centered = data - data.mean(axis=0)
    norms = np.sqrt((centered ** 2).sum(axis=0))
    defined = norms > 1e-12 * np.maximum(1.0, np.abs(data).max(axis=0))
    safe = np.where(defined, norms, 1.0)
    corr = (centered.T @ centered) / np.outer(safe, safe)
    corr = np.clip(corr, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    corr[~defined, :] = np.nan
    corr[:, ~defined] = np.nan
    if not defined.all():
        log.warning("zero-variance columns: %s", list(frame.columns[~defined]))
    return pd.DataFrame(corr, index=frame.columns, columns=frame.columns)


def speed_heatmap(trips: pd.DataFrame) -> pd.DataFrame:
    """Median trip speed (mph) by weekday (rows, Monday first) and pickup
    hour (columns); NaN where no trips fall."""
    t = trips[trips["trip_duration"] > 0]
    speed = t["trip_distance"] / (t["trip_duration"] / 3600.0)
    grouped = speed.groupby([t["pickup_datetime"].dt.weekday, t["pickup_datetime"].dt.hour]).median()
    out = pd.DataFrame(np.nan, index=pd.RangeIndex(7, name="weekday"),
                       columns=pd.RangeIndex(24, name="hour"))
    for (d, h), v in grouped.items():
        out.loc[d, h] = v
    return out


def _date_range(dates):
    lo, hi = (pd.Timestamp(d).normalize() for d in dates)
    if hi < lo:
        raise ValueError(f"empty date range {dates}")
    return lo, hi


def temporal_split(trips: pd.DataFrame, train_dates, test_dates):
    """Split by pickup date into inclusive [first, last] date ranges.

    Returns (train, test, n_dropped) where n_dropped counts trips outside
    both ranges.
    """
    tr = _date_range(train_dates)
    te = _date_range(test_dates)
    if tr[0] <= te[1] and te[0] <= tr[1]:
        raise ValueError("train and test date ranges overlap")
    day = trips["pickup_datetime"].dt.normalize()
    in_train = (day >= tr[0]) & (day <= tr[1])
    in_test = (day >= te[0]) & (day <= te[1])
    dropped = int((~in_train & ~in_test).sum())
    if dropped:
        log.info("temporal split dropped %d trips outside both ranges", dropped)
    return (trips[in_train].reset_index(drop=True), trips[in_test].reset_index(drop=True), dropped)


def split_matrix(matrix: FeatureMatrix, train_dates, test_dates):
    """Date split of a feature matrix, same rules as ``temporal_split``."""
    frame = pd.DataFrame({"pickup_datetime": pd.to_datetime(matrix.pickup), "row": np.arange(len(matrix))})
    train, test, _ = temporal_split(frame, train_dates, test_dates)
    return matrix.subset(train["row"].to_numpy()), matrix.subset(test["row"].to_numpy())


def time_mask(pickup, start, end) -> np.ndarray:
    """Rows with pickup in [start, end)."""
    pickup = np.asarray(pickup, dtype="datetime64[ns]")
    return (pickup >= np.datetime64(pd.Timestamp(start))) & (pickup < np.datetime64(pd.Timestamp(end)))

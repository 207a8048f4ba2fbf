"""Trip record ingestion: parsing TLC-style CSVs, plausibility cleaning,
daily weather join and zone assignment."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

DATETIME_FORMAT = "%Y-%m-%d %H:%M:%S"
COORD_DECIMALS = 5

TRIP_FIELDS = [
    "pickup_datetime", "dropoff_datetime",
    "pickup_longitude", "pickup_latitude", "dropoff_longitude", "dropoff_latitude",
    "trip_duration", "trip_distance", "passenger_count", "vendor_id",
]
REQUIRED_FIELDS = [
    "pickup_datetime", "pickup_longitude", "pickup_latitude",
    "dropoff_longitude", "dropoff_latitude", "trip_distance",
]
COORD_FIELDS = ["pickup_longitude", "pickup_latitude", "dropoff_longitude", "dropoff_latitude"]
WEATHER_FIELDS = ["snowfall", "snow_depth", "rainfall", "temperature"]

# Manhattan-sized default box, also used by the synthetic city.
DEFAULT_BBOX = (40.70, 40.88, -74.02, -73.91)  # lat_min, lat_max, lon_min, lon_max


class TripSchemaError(ValueError):
    """A configured column is missing from the input."""


class WeatherCoverageError(ValueError):
    pass


class ZoneError(ValueError):
    pass


@dataclass(frozen=True)
class CleaningRules:
    min_duration: float = 10.0
    max_duration: float = 10800.0
    max_speed: float = 60.0

    def __post_init__(self):
        if not self.min_duration < self.max_duration:
            raise ValueError("min_duration must be < max_duration")
        if not self.max_speed > 0:
            raise ValueError("max_speed must be > 0")


# Reporting priority for trips that break several rules at once.
RULE_ORDER = ("min_duration", "max_duration", "max_speed")


@dataclass
class ParseReport:
    n_rows: int = 0
    rejects: list = field(default_factory=list)  # (line, reason)

    @property
    def n_rejected(self) -> int:
        return len(self.rejects)


@dataclass
class RejectionReport:
    n_input: int
    counts: dict
    details: pd.DataFrame  # trip_id, line, rule

    @property
    def n_kept(self) -> int:
        return self.n_input - sum(self.counts.values())

    def to_csv(self, path):
        pd.DataFrame({"rule": list(self.counts), "count": list(self.counts.values())}).to_csv(
            path, index=False, lineterminator="\n")

    def details_to_csv(self, path):
        self.details.to_csv(path, index=False, lineterminator="\n")


def parse_trips(source, schema: dict | None = None, delimiter: str = ",",
                bbox=None) -> tuple[pd.DataFrame, ParseReport]:
    """Read a TLC-style trip file.

    ``schema`` maps field names to column names where they differ. Either
    ``trip_duration`` or ``dropoff_datetime`` must be present; when both are,
    rows where they disagree by more than a second are rejected. Unparseable
    rows are skipped and listed in the report with their 1-based file line.
    """
    schema = dict(schema or {})
    try:
        raw = pd.read_csv(source, sep=delimiter, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        log.warning("trip file is empty")
        empty = pd.DataFrame({c: pd.Series(dtype=float) for c in ["trip_id", "line"] + TRIP_FIELDS})
        return empty, ParseReport()
    colmap = {f: schema.get(f, f) for f in TRIP_FIELDS + ["trip_id"]}
    for f in REQUIRED_FIELDS:
        if colmap[f] not in raw.columns:
            raise TripSchemaError(f"missing required column {colmap[f]!r} (field {f})")
    has_dropoff = colmap["dropoff_datetime"] in raw.columns
    has_duration = colmap["trip_duration"] in raw.columns
    if not (has_dropoff or has_duration):
        raise TripSchemaError(
            f"need column {colmap['trip_duration']!r} or {colmap['dropoff_datetime']!r}")

    report = ParseReport(n_rows=len(raw))
    out = pd.DataFrame(index=raw.index)
    id_col = colmap["trip_id"]
    out["trip_id"] = (pd.to_numeric(raw[id_col], errors="coerce") if id_col in raw.columns
                      else pd.Series(np.arange(len(raw)), index=raw.index))
    out["line"] = raw.index + 2
    bad = pd.Series("", index=raw.index)

    def flag(mask, reason):
        fresh = mask & (bad == "")
        bad[fresh] = reason

    flag(out["trip_id"].isna(), "unparseable trip_id")
    for f in TRIP_FIELDS:
        col = colmap[f]
        if col not in raw.columns:
            continue
        text = raw[col].str.strip()
        if f.endswith("datetime"):
            vals = pd.to_datetime(text, format=DATETIME_FORMAT, errors="coerce")
        else:
            vals = pd.to_numeric(text, errors="coerce")
            vals = vals.where(np.isfinite(vals))
        flag(vals.isna(), f"unparseable {f}")
        out[f] = vals

    if has_dropoff and has_duration:
        gap = (out["dropoff_datetime"] - out["pickup_datetime"]).dt.total_seconds()
        flag((gap - out["trip_duration"]).abs() > 1, "duration_mismatch")
    elif has_dropoff:
        out["trip_duration"] = (out["dropoff_datetime"] - out["pickup_datetime"]).dt.total_seconds()
    else:
        out["dropoff_datetime"] = out["pickup_datetime"] + pd.to_timedelta(
            out["trip_duration"], unit="s")
    if "vendor_id" in out:
        flag(~out["vendor_id"].isin([1, 2]), "invalid vendor_id")
    else:
        out["vendor_id"] = 1
    if "passenger_count" in out:
        flag(out["passenger_count"] < 0, "invalid passenger_count")
    else:
        out["passenger_count"] = 1
    if bbox is not None:
        lat_min, lat_max, lon_min, lon_max = bbox
        inside = np.ones(len(out), dtype=bool)
        for kind in ("pickup", "dropoff"):
            lat, lon = out[f"{kind}_latitude"], out[f"{kind}_longitude"]
            inside &= lat.between(lat_min, lat_max) & lon.between(lon_min, lon_max)
        flag(~inside, "out_of_bbox")

    rejected = bad != ""
    report.rejects = list(zip(out.loc[rejected, "line"].tolist(), bad[rejected].tolist()))
    if report.rejects:
        log.warning("skipped %d of %d trip rows", report.n_rejected, report.n_rows)
    trips = out.loc[~rejected].reset_index(drop=True)
    trips["trip_id"] = trips["trip_id"].astype(np.int64)
    trips["vendor_id"] = trips["vendor_id"].astype(np.int64)
    trips["passenger_count"] = trips["passenger_count"].astype(np.int64)
    trips["trip_duration"] = trips["trip_duration"].astype(np.float64)
    return trips[["trip_id", "line"] + TRIP_FIELDS], report


def write_trips(trips: pd.DataFrame, path, delimiter: str = ","):
    """Write trips in the format ``parse_trips`` reads back unchanged."""
    out = trips[["trip_id"] + TRIP_FIELDS].copy()
    for f in ("pickup_datetime", "dropoff_datetime"):
        out[f] = out[f].dt.strftime(DATETIME_FORMAT)
    out.to_csv(path, index=False, sep=delimiter, lineterminator="\n")


def clean_trips(trips: pd.DataFrame, rules: CleaningRules = CleaningRules()):
    """Drop trips that are too short, too long or implausibly fast.

    Speed uses the reported ``trip_distance``. A trip breaking several rules
    is counted once, under the first rule of RULE_ORDER.
    """
    dur = trips["trip_duration"].to_numpy(dtype=float)
    dist = trips["trip_distance"].to_numpy(dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        speed = dist * 3600.0 / dur
    violated = {
        "min_duration": dur < rules.min_duration,
        "max_duration": dur > rules.max_duration,
        "max_speed": (dur > 0) & (speed > rules.max_speed),
    }
    rule = np.full(len(trips), "", dtype=object)
    for name in reversed(RULE_ORDER):
        rule[violated[name]] = name
    rejected = rule != ""
    details = pd.DataFrame({
        "trip_id": trips["trip_id"].to_numpy()[rejected],
        "line": trips["line"].to_numpy()[rejected] if "line" in trips else -1,
        "rule": rule[rejected],
    })
    counts = {name: int((rule == name).sum()) for name in RULE_ORDER}
    kept = trips.loc[~rejected].reset_index(drop=True)
    return kept, RejectionReport(len(trips), counts, details)


def read_weather(path) -> pd.DataFrame:
    """Daily weather table; one row per date, nonnegative precipitation and
    no gaps between the first and last date."""
    w = pd.read_csv(path)
    missing = [c for c in ["date"] + WEATHER_FIELDS if c not in w.columns]
    if missing:
        raise TripSchemaError(f"weather file lacks columns {missing}")
    w["date"] = pd.to_datetime(w["date"], format="%Y-%m-%d")
    validate_weather(w)
    return w.sort_values("date").reset_index(drop=True)


def validate_weather(w: pd.DataFrame):
    for c in ("snowfall", "snow_depth", "rainfall"):
        if (w[c] < 0).any():
            raise ValueError(f"negative {c} in weather table")
    if w["date"].duplicated().any():
        raise ValueError("weather table has duplicate dates")
    if len(w):
        full = pd.date_range(w["date"].min(), w["date"].max(), freq="D")
        gaps = full.difference(pd.DatetimeIndex(w["date"]))
        if len(gaps):
            raise ValueError(f"weather table has gaps: {[d.strftime('%Y-%m-%d') for d in gaps]}")


def write_weather(w: pd.DataFrame, path):
    out = w[["date"] + WEATHER_FIELDS].copy()
    out["date"] = out["date"].dt.strftime("%Y-%m-%d")
    out.to_csv(path, index=False, lineterminator="\n")


def join_weather(trips: pd.DataFrame, weather: pd.DataFrame) -> pd.DataFrame:
    """Attach the pickup date's weather to every trip."""
    day = trips["pickup_datetime"].dt.normalize()
    table = weather.set_index(weather["date"].dt.normalize())[WEATHER_FIELDS]
    uncovered = sorted(set(day.unique()) - set(table.index))
    if uncovered:
        names = [pd.Timestamp(d).strftime("%Y-%m-%d") for d in uncovered]
        raise WeatherCoverageError(f"no weather for trip dates: {', '.join(names)}")
    out = trips.drop(columns=[c for c in WEATHER_FIELDS if c in trips], errors="ignore").copy()
    joined = table.loc[day.to_numpy()]
    for c in WEATHER_FIELDS:
        out[c] = joined[c].to_numpy()
    return out


@dataclass(frozen=True)
class ZoneGrid:
    """Rectangular lat/lon cells numbered row-major from the south-west
    corner: ``id = lat_row * n_cols + lon_col``."""
    lat_min: float = DEFAULT_BBOX[0]
    lat_max: float = DEFAULT_BBOX[1]
    lon_min: float = DEFAULT_BBOX[2]
    lon_max: float = DEFAULT_BBOX[3]
    cell_size: float = 0.005

    @property
    def n_rows(self) -> int:
        return max(1, math.ceil((self.lat_max - self.lat_min) / self.cell_size - 1e-9))

    @property
    def n_cols(self) -> int:
        return max(1, math.ceil((self.lon_max - self.lon_min) / self.cell_size - 1e-9))

    def cell(self, lat, lon) -> np.ndarray:
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        outside = ((lat < self.lat_min) | (lat > self.lat_max)
                   | (lon < self.lon_min) | (lon > self.lon_max) | ~np.isfinite(lat + lon))
        if outside.any():
            i = int(np.argmax(outside))
            raise ZoneError(
                f"coordinate ({np.ravel(lat)[i]}, {np.ravel(lon)[i]}) lies outside the zone grid")
        # small epsilon keeps exact multiples of cell_size in their own cell
        row = np.floor((lat - self.lat_min) / self.cell_size + 1e-9).astype(np.int64)
        col = np.floor((lon - self.lon_min) / self.cell_size + 1e-9).astype(np.int64)
        row = np.minimum(row, self.n_rows - 1)
        col = np.minimum(col, self.n_cols - 1)
        return row * self.n_cols + col


def assign_zones(trips: pd.DataFrame, grid: ZoneGrid) -> pd.DataFrame:
    out = trips.copy()
    out["pickup_zone"] = grid.cell(trips["pickup_latitude"], trips["pickup_longitude"])
    out["dropoff_zone"] = grid.cell(trips["dropoff_latitude"], trips["dropoff_longitude"])
    return out


def read_trip_table(path) -> pd.DataFrame:
    """Read a trip CSV written by this package, extra columns included."""
    frame = pd.read_csv(path)
    for f in ("pickup_datetime", "dropoff_datetime"):
        if f in frame:
            frame[f] = pd.to_datetime(frame[f], format=DATETIME_FORMAT)
    return frame


def write_trip_table(trips: pd.DataFrame, path):
    out = trips.copy()
    for f in ("pickup_datetime", "dropoff_datetime"):
        if f in out:
            out[f] = out[f].dt.strftime(DATETIME_FORMAT)
    out.to_csv(path, index=False, lineterminator="\n")

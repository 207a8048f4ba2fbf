"""Seeded synthetic city: a Manhattan-like street grid, a weekday x hour
congestion surface, snow days, optional traffic shocks, and trip records
routed over the grid."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import shortest_path

from .routing import RoadGraph, build_graph, haversine_miles
from .trips import COORD_DECIMALS, TRIP_FIELDS

CHUNK = 10_000  # trips per independently seeded chunk


@dataclass(frozen=True)
class Shock:
    """Speeds are multiplied by ``multiplier`` for pickups in [start, end)."""
    start: str
    end: str
    multiplier: float


@dataclass(frozen=True)
class CityConfig:
    n_streets: int = 20          # east-west rows
    n_avenues: int = 8           # north-south columns
    street_speed: float = 20.0
    avenue_speed: float = 30.0
    highway_speed: float = 40.0  # 0 disables the western highway
    origin_lat: float = 40.705
    origin_lon: float = -74.005
    street_gap: float = 0.0036   # degrees latitude between streets
    avenue_gap: float = 0.0095   # degrees longitude between avenues
    depth: float = 0.35          # midday/midweek speed depression
    peak_hour: float = 13.0
    hour_width: float = 4.0
    peak_day: float = 2.0        # Wednesday
    day_width: float = 2.0
    start_date: str = "2016-06-01"
    n_days: int = 28
    n_trips: int = 50_000
    snow_dates: tuple = ("2016-06-08",)
    snow_multiplier: float = 0.7
    snowfall_inches: float = 4.0
    shocks: tuple = ()
    noise_sigma: float = 15.0
    min_hops: int = 5
    night_weight: float = 0.3    # pickup intensity 00:00-05:59 relative to daytime
    jitter: float = 0.0004       # degrees of coordinate noise around the node
    seed: int = 0

    def __post_init__(self):
        if self.n_streets < 2 or self.n_avenues < 2:
            raise ValueError("grid must be at least 2x2")
        if min(self.street_speed, self.avenue_speed) <= 0 or self.highway_speed < 0:
            raise ValueError("speeds must be positive")
        if not 0 < self.snow_multiplier <= 1:
            raise ValueError("snow_multiplier must lie in (0, 1]")
        if not 0 <= self.depth < 1:
            raise ValueError("depth must lie in [0, 1)")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.n_days < 1 or self.n_trips < 0:
            raise ValueError("need n_days >= 1 and n_trips >= 0")
        shocks = tuple(s if isinstance(s, Shock) else Shock(**s) for s in self.shocks)
        for s in shocks:
            if not s.multiplier > 0:
                raise ValueError("shock multiplier must be positive")
        object.__setattr__(self, "shocks", shocks)
        object.__setattr__(self, "snow_dates", tuple(self.snow_dates))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["snow_dates"] = list(self.snow_dates)
        out["shocks"] = [asdict(s) for s in self.shocks]
        return out


def speed_surface(config: CityConfig) -> np.ndarray:
    """7 x 24 speed multipliers, rows Monday..Sunday."""
    d = np.arange(7.0)[:, None]
    h = np.arange(24.0)[None, :]
    bump = (np.exp(-0.5 * ((h - config.peak_hour) / config.hour_width) ** 2)
            * np.exp(-0.5 * ((d - config.peak_day) / config.day_width) ** 2))
    return 1.0 - config.depth * bump


@dataclass
class City:
    config: CityConfig
    graph: RoadGraph
    surface: np.ndarray
    trip_nodes: np.ndarray = field(repr=False)  # node indices trips may start or end at
    hops: np.ndarray = field(repr=False)        # hop counts between trip nodes
    _stats: dict = field(default_factory=dict, repr=False)

    def route_stats(self, a: int, b: int):
        """(free-flow seconds, miles) of the fastest route between node indices."""
        key = (a, b)
        if key not in self._stats:
            route = self.graph.route_between(a, b)
            self._stats[key] = (route.duration, route.distance)
        return self._stats[key]


def _grid_tables(cfg: CityConfig):
    nodes, edges = [], []

    def nid(r, c):
        return r * cfg.n_avenues + c

    for r in range(cfg.n_streets):
        for c in range(cfg.n_avenues):
            nodes.append((nid(r, c), cfg.origin_lat + r * cfg.street_gap,
                          cfg.origin_lon + c * cfg.avenue_gap))
    hw0 = cfg.n_streets * cfg.n_avenues
    if cfg.highway_speed > 0:
        for r in range(cfg.n_streets):
            nodes.append((hw0 + r, cfg.origin_lat + r * cfg.street_gap,
                          cfg.origin_lon - cfg.avenue_gap / 2))
    coords = {n: (lat, lon) for n, lat, lon in nodes}

    def link(a, b, speed, name):
        length = float(haversine_miles(*coords[a], *coords[b]))
        edges.append((a, b, length, speed, name))
        edges.append((b, a, length, speed, name))

    for r in range(cfg.n_streets):
        for c in range(cfg.n_avenues):
            if c + 1 < cfg.n_avenues:
                link(nid(r, c), nid(r, c + 1), cfg.street_speed, f"Street {r + 1}")
            if r + 1 < cfg.n_streets:
                link(nid(r, c), nid(r + 1, c), cfg.avenue_speed, f"Avenue {c + 1}")
        if cfg.highway_speed > 0:
            link(hw0 + r, nid(r, 0), cfg.street_speed, f"Street {r + 1}")
            if r + 1 < cfg.n_streets:
                link(hw0 + r, hw0 + r + 1, cfg.highway_speed, "Highway")
    return (pd.DataFrame(nodes, columns=["node_id", "lat", "lon"]),
            pd.DataFrame(edges, columns=["from_node", "to_node", "length_miles", "speed_mph",
                                         "street_name"]))


def generate_city(config: CityConfig = CityConfig()) -> City:
    graph = build_graph(*_grid_tables(config))
    n = graph.n_nodes
    adj = coo_matrix((np.ones(graph.n_edges), (graph.src, graph.dst)), shape=(n, n)).tocsr()
    trip_nodes = np.flatnonzero(graph.node_ids < config.n_streets * config.n_avenues)
    hops = shortest_path(adj, unweighted=True, indices=trip_nodes)[:, trip_nodes]
    return City(config, graph, speed_surface(config), trip_nodes, hops)


def _pickup_times(cfg: CityConfig, n: int, rng) -> pd.DatetimeIndex:
    weights = np.where(np.arange(24) < 6, cfg.night_weight, 1.0)
    day = rng.integers(0, cfg.n_days, size=n)
    hour = rng.choice(24, size=n, p=weights / weights.sum())
    sec = rng.integers(0, 3600, size=n)
    offset = day * 86400 + hour * 3600 + sec
    return pd.Timestamp(cfg.start_date) + pd.to_timedelta(offset, unit="s")


def _od_pairs(city: City, n: int, rng, max_rounds: int = 100):
    """Uniform node pairs at least ``min_hops`` apart, by rejection."""
    k = len(city.trip_nodes)
    out_o, out_d = np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    for _ in range(max_rounds):
        need = n - len(out_o)
        if need <= 0:
            break
        o = rng.integers(0, k, size=2 * need + 16)
        d = rng.integers(0, k, size=2 * need + 16)
        h = city.hops[o, d]
        ok = np.isfinite(h) & (h >= city.config.min_hops)
        out_o = np.concatenate([out_o, o[ok]])[:n]
        out_d = np.concatenate([out_d, d[ok]])[:n]
    if len(out_o) < n:
        raise ValueError("could not draw enough routable origin/destination pairs")
    return city.trip_nodes[out_o], city.trip_nodes[out_d]


def snow_factor(cfg: CityConfig, pickups: pd.DatetimeIndex) -> np.ndarray:
    days = pickups.normalize()
    snowy = days.isin(pd.to_datetime(list(cfg.snow_dates)))
    return np.where(snowy, cfg.snow_multiplier, 1.0)


def shock_factor(cfg: CityConfig, pickups: pd.DatetimeIndex) -> np.ndarray:
    out = np.ones(len(pickups))
    for s in cfg.shocks:
        hit = (pickups >= pd.Timestamp(s.start)) & (pickups < pd.Timestamp(s.end))
        out[hit] *= s.multiplier
    return out


def _chunk(city: City, n: int, rng) -> pd.DataFrame:
    cfg, graph = city.config, city.graph
    pickup = _pickup_times(cfg, n, rng)
    origin, dest = _od_pairs(city, n, rng)
    free_flow = np.empty(n)
    distance = np.empty(n)
    for i, (a, b) in enumerate(zip(origin, dest)):
        free_flow[i], distance[i] = city.route_stats(int(a), int(b))
    factor = (city.surface[pickup.weekday, pickup.hour] * snow_factor(cfg, pickup)
              * shock_factor(cfg, pickup))
    duration = free_flow / factor
    if cfg.noise_sigma > 0:
        duration = duration + rng.normal(0.0, cfg.noise_sigma, size=n)
    duration = np.maximum(duration, 1.0)
    jit = rng.uniform(-cfg.jitter, cfg.jitter, size=(n, 4)) if cfg.jitter > 0 else np.zeros((n, 4))
    return pd.DataFrame({
        "pickup_datetime": pickup,
        "dropoff_datetime": pickup + pd.to_timedelta(np.rint(duration), unit="s"),
        "pickup_longitude": np.round(graph.lon[origin] + jit[:, 0], COORD_DECIMALS),
        "pickup_latitude": np.round(graph.lat[origin] + jit[:, 1], COORD_DECIMALS),
        "dropoff_longitude": np.round(graph.lon[dest] + jit[:, 2], COORD_DECIMALS),
        "dropoff_latitude": np.round(graph.lat[dest] + jit[:, 3], COORD_DECIMALS),
        "trip_duration": duration,
        "trip_distance": distance,
        "passenger_count": rng.choice([1, 2, 3, 4, 5, 6], size=n,
                                      p=[0.7, 0.14, 0.05, 0.03, 0.05, 0.03]),
        "vendor_id": rng.integers(1, 3, size=n),
    })


def generate_trips(city: City, n: int | None = None) -> pd.DataFrame:
    """Trip records in TLC layout, sorted by pickup time.

    Trips are drawn in fixed-size chunks, each from its own child seed, so
    the output does not depend on how chunks are scheduled.
    """
    cfg = city.config
    n = cfg.n_trips if n is None else n
    sizes = [CHUNK] * (n // CHUNK) + ([n % CHUNK] if n % CHUNK else [])
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(sizes) + 1)[1:]
    parts = [_chunk(city, size, np.random.default_rng(s)) for size, s in zip(sizes, seeds)]
    if not parts:
        trips = pd.DataFrame({f: pd.Series(dtype=float) for f in TRIP_FIELDS})
    else:
        trips = pd.concat(parts, ignore_index=True)
    trips = trips.sort_values("pickup_datetime", kind="stable").reset_index(drop=True)
    trips.insert(0, "trip_id", np.arange(len(trips), dtype=np.int64))
    return trips[["trip_id"] + TRIP_FIELDS]


def generate_weather(config: CityConfig) -> pd.DataFrame:
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
    dates = pd.date_range(config.start_date, periods=config.n_days, freq="D")
    snowy = dates.isin(pd.to_datetime(list(config.snow_dates)))
    rain = np.where(rng.uniform(size=len(dates)) < 0.3, np.round(rng.exponential(0.3, len(dates)), 2), 0.0)
    return pd.DataFrame({
        "date": dates,
        "snowfall": np.where(snowy, config.snowfall_inches, 0.0),
        "snow_depth": np.where(snowy, config.snowfall_inches, 0.0),
        "rainfall": rain,
        "temperature": np.round(22.0 + 3.0 * rng.normal(size=len(dates)), 1),
    })

"""Hand-built data fixtures shared by several test files."""
import pandas as pd

# (duration s, distance mi, expected rule or "" when kept)
CLEANING_CASES = [
    (600, 2.1, ""),
    (5, 0.1, "min_duration"),
    (9, 0.01, "min_duration"),
    (10, 0.01, ""),               # min duration is inclusive
    (10801, 3.0, "max_duration"),
    (20000, 10.0, "max_duration"),
    (10800, 5.0, ""),             # max duration is inclusive
    (600, 12.0, "max_speed"),     # 72 mph
    (3600, 61.0, "max_speed"),
    (60, 1.01, "max_speed"),      # 60.6 mph
    (600, 10.0, ""),              # exactly 60 mph is kept
    (3600, 10.0, ""),
    (5, 1.0, "min_duration"),     # also 720 mph: reported under the first rule
    (20000, 400.0, "max_duration"),  # also 72 mph
    (1200, 3.5, ""),
    (900, 1.2, ""),
    (45, 0.2, ""),
    (2400, 8.0, ""),
    (1500, 0.0, ""),
    (300, 0.9, ""),
]


def cleaning_fixture() -> pd.DataFrame:
    start = pd.Timestamp("2016-06-01 08:00:00")
    rows = []
    for i, (dur, dist, _) in enumerate(CLEANING_CASES):
        pickup = start + pd.Timedelta(minutes=7 * i)
        rows.append({
            "trip_id": i, "line": i + 2,
            "pickup_datetime": pickup, "dropoff_datetime": pickup + pd.Timedelta(seconds=dur),
            "pickup_longitude": -73.98, "pickup_latitude": 40.75,
            "dropoff_longitude": -73.97, "dropoff_latitude": 40.76,
            "trip_duration": float(dur), "trip_distance": dist,
            "passenger_count": 1, "vendor_id": 1 + i % 2,
        })
    return pd.DataFrame(rows)


def expected_cleaning_partition():
    kept = [i for i, case in enumerate(CLEANING_CASES) if case[2] == ""]
    by_rule = {}
    for i, (_, _, rule) in enumerate(CLEANING_CASES):
        if rule:
            by_rule.setdefault(rule, []).append(i)
    return kept, by_rule


def synthetic_matrix(config, workdir, schema=None):
    """Run the synthetic city through parse, clean, weather join, routing
    and feature assembly, the same path the CLI takes."""
    from pathlib import Path

    from traveltime.features import assemble_features, full_schema
    from traveltime.routing import route_features_for_trips
    from traveltime.synth import generate_city, generate_trips, generate_weather
    from traveltime.trips import clean_trips, join_weather, parse_trips, write_trips

    city = generate_city(config)
    raw = Path(workdir) / "trips_raw.csv"
    write_trips(generate_trips(city), raw)
    trips, _ = parse_trips(raw)
    kept, _ = clean_trips(trips)
    kept = join_weather(kept, generate_weather(config))
    routes, _ = route_features_for_trips(city.graph.largest_component(), kept)
    routed = kept[kept["trip_id"].isin(routes["trip_id"])]
    return assemble_features(routed, routes, schema or full_schema())

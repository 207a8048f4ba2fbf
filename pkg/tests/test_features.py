import numpy as np
import pandas as pd
import pytest

from traveltime.features import (
    FeatureError,
    FeatureMatrix,
    FeatureSchema,
    assemble_features,
    full_schema,
    longterm_schema,
    pearson_correlation,
    schema_by_name,
    schema_path,
    shortterm_schema,
    speed_heatmap,
    temporal_split,
)

LONGTERM = ["weekday", "hour", "pickup_latitude", "pickup_longitude", "dropoff_latitude",
            "dropoff_longitude", "osrm_distance", "osrm_duration", "main_street_ratio",
            "snowfall", "temperature"]


def _trips(times, durations=None):
    n = len(times)
    return pd.DataFrame({
        "trip_id": np.arange(n),
        "pickup_datetime": pd.to_datetime(times),
        "pickup_latitude": 40.75, "pickup_longitude": -73.98,
        "dropoff_latitude": 40.76, "dropoff_longitude": -73.97,
        "trip_duration": 600.0 if durations is None else durations,
        "trip_distance": 2.0, "vendor_id": 1, "passenger_count": 1,
        "snowfall": 0.0, "snow_depth": 0.0, "rainfall": 0.0, "temperature": 20.0,
    })


def _routes(n):
    return pd.DataFrame({"trip_id": np.arange(n), "osrm_distance": 2.2, "osrm_duration": 400.0,
                         "total_steps": 2, "total_turns": 1, "total_left": 0,
                         "main_street": "Avenue 3", "main_street_ratio": 0.8})


def test_longterm_schema_has_the_eleven_features():
    schema = longterm_schema()
    assert schema.columns == LONGTERM
    for dropped in ("vendor_id", "passenger_count", "total_steps", "total_left", "total_turns"):
        assert dropped in schema.excluded


def test_shortterm_drops_weekday_and_weather():
    cols = shortterm_schema().columns
    assert cols == ["hour", "pickup_latitude", "pickup_longitude", "dropoff_latitude",
                    "dropoff_longitude", "osrm_distance", "osrm_duration", "main_street_ratio"]


def test_schema_validation():
    with pytest.raises(FeatureError):
        FeatureSchema("x", frozenset({"nonsense"}))
    with pytest.raises(FeatureError):
        FeatureSchema("x", frozenset(), target="hour")
    with pytest.raises(FeatureError):
        schema_by_name("weekly")
    assert len(set(full_schema().columns)) == len(full_schema().columns)


def test_calendar_encoding():
    m = assemble_features(_trips(["2016-06-21 07:15:00"]), _routes(1), longterm_schema())
    assert m.X[0, 0] == 1 and m.X[0, 1] == 7  # Tuesday


def test_shape_and_determinism():
    trips = _trips(["2016-06-01 08:00:00", "2016-06-02 09:00:00", "2016-06-05 23:59:59"])
    a = assemble_features(trips, _routes(3), longterm_schema())
    b = assemble_features(trips, _routes(3), longterm_schema())
    assert a.X.shape == (3, 11) and a.y.shape == (3,)
    assert a.X.tobytes() == b.X.tobytes()
    short = assemble_features(trips, _routes(3), shortterm_schema())
    assert "weekday" not in short.columns and short.X.shape == (3, 8)


def test_missing_value_names_row_and_column():
    routes = _routes(2)
    routes.loc[1, "osrm_duration"] = np.nan
    with pytest.raises(FeatureError, match=r"trip 1 .*osrm_duration"):
        assemble_features(_trips(["2016-06-01 08:00:00"] * 2), routes, longterm_schema())


def test_main_street_hash_encoding_is_stable():
    schema = longterm_schema().with_included("main_street")
    m1 = assemble_features(_trips(["2016-06-01 08:00:00"]), _routes(1), schema)
    m2 = assemble_features(_trips(["2016-06-03 08:00:00"]), _routes(1), schema)
    col = schema.columns.index("main_street")
    assert m1.X[0, col] == m2.X[0, col] > 0


def test_matrix_csv_round_trip(tmp_path):
    trips = _trips(["2016-06-01 08:00:00", "2016-06-02 09:30:00"], durations=[612.25, 401.5])
    m = assemble_features(trips, _routes(2), longterm_schema())
    m.to_csv(tmp_path / "m.csv")
    assert schema_path(tmp_path / "m.csv").exists()
    back = FeatureMatrix.from_csv(tmp_path / "m.csv")
    np.testing.assert_array_equal(back.X, m.X)
    np.testing.assert_array_equal(back.y, m.y)
    assert back.schema == m.schema
    np.testing.assert_array_equal(back.pickup, m.pickup)


def test_correlation_examples():
    frame = pd.DataFrame({"x": [1.0, 2.0, 3.0], "y": [2.0, 4.0, 6.0], "z": [6.0, 4.0, 2.0],
                          "c": [5.0, 5.0, 5.0]})
    corr = pearson_correlation(frame)
    assert corr.loc["x", "x"] == 1.0
    assert corr.loc["x", "y"] == pytest.approx(1.0)
    assert corr.loc["x", "z"] == pytest.approx(-1.0)
    assert np.isnan(corr.loc["c", "x"]) and np.isnan(corr.loc["c", "c"])
    with pytest.raises(ValueError):
        pearson_correlation(frame.iloc[:1])


def test_correlation_is_symmetric_and_bounded():
    rng = np.random.default_rng(0)
    frame = pd.DataFrame(rng.normal(size=(50, 5)))
    corr = pearson_correlation(frame).to_numpy()
    np.testing.assert_allclose(corr, corr.T, atol=1e-15)
    assert (np.abs(corr) <= 1).all() and (np.diag(corr) == 1).all()


def test_speed_heatmap_single_and_median():
    one = speed_heatmap(_trips(["2016-06-06 08:10:00"], durations=[3600.0]).assign(trip_distance=10.0))
    assert one.loc[0, 8] == 10.0 and one.notna().sum().sum() == 1
    two = _trips(["2016-06-06 08:10:00", "2016-06-06 08:50:00"], durations=[3600.0, 1800.0])
    assert speed_heatmap(two.assign(trip_distance=10.0)).loc[0, 8] == 15.0


def test_temporal_split_boundaries():
    trips = _trips(["2016-06-20 23:59:59", "2016-06-21 00:00:00", "2016-07-02 10:00:00"])
    train, test, dropped = temporal_split(trips, ("2016-06-01", "2016-06-20"),
                                          ("2016-06-21", "2016-06-30"))
    assert train["trip_id"].tolist() == [0] and test["trip_id"].tolist() == [1] and dropped == 1
    with pytest.raises(ValueError):
        temporal_split(trips, ("2016-06-01", "2016-06-21"), ("2016-06-21", "2016-06-30"))

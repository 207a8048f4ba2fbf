"""Experiment configuration: YAML files layered over built-in defaults,
with dotted ``key=value`` overrides."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import yaml

from .synth import CityConfig

DEFAULTS = {
    "seed": 0,
    "workers": 0,  # 0 = all available cores
    "paths": {
        "data_dir": "data",
        "models_dir": "models",
        "reports_dir": "reports",
    },
    "city": {k: v for k, v in CityConfig().to_dict().items() if k != "seed"},
    "ingest": {
        "trips": None,      # defaults to <data_dir>/trips_raw.csv
        "weather": None,    # defaults to <data_dir>/weather.csv
        "columns": {},      # field -> column name where the file differs
        "delimiter": ",",
        "bbox": [40.70, 40.88, -74.02, -73.91],
    },
    "cleaning": {"min_duration": 10.0, "max_duration": 10800.0, "max_speed": 60.0},
    "zones": {"cell_size": 0.005},
    "routing": {"snap_radius": 0.25},
    "schema": "longterm",
    "encode_main_street": False,
    "split": {
        "train": ["2016-06-01", "2016-06-21"],
        "test": ["2016-06-22", "2016-06-28"],
    },
    "longterm": {
        "validation_hours": 72,
        "refit": True,
        "models": {
            "cart": {"max_depth": 13, "min_child_weight": 30},
            "random_forest": {"n_trees": 50, "max_depth": 18, "min_child_weight": 5,
                              "subsample": 1.0, "colsample_bytree": 1.0},
            "extra_trees": {"n_trees": 50, "max_depth": 18, "min_child_weight": 5,
                            "colsample_bytree": 1.0},
            "gbt_depthwise": {"learning_rate": 0.1, "max_depth": 6, "min_child_weight": 20,
                              "num_rounds": 2000, "early_stopping_patience": 30},
            "gbt_leafwise": {"learning_rate": 0.1, "max_leaves": 63, "max_depth": 32,
                             "min_child_weight": 20, "num_rounds": 2000,
                             "early_stopping_patience": 30},
        },
    },
    "tune": {"kind": "cart", "grid": "desk", "validation_hours": 72},
    "shortterm": {
        "start": None,  # defaults to the first test date
        "days": 7,
        "lookbacks": 24,
        "kind": "gbt_depthwise",
        "params": {"learning_rate": 0.1, "max_depth": 4, "min_child_weight": 5,
                   "num_rounds": 60, "split_mode": "exact"},
    },
    "compare": {"model": "gbt_depthwise"},
}


def _merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in (update or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def apply_override(config: dict, assignment: str) -> dict:
    """Apply ``a.b.c=value``; the value is parsed as YAML."""
    if "=" not in assignment:
        raise ValueError(f"override must look like key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts):
        raise ValueError(f"bad override key {key!r}")
    out = copy.deepcopy(config)
    node = out
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = yaml.safe_load(raw)
    return out


def load_config(path=None, overrides=()) -> dict:
    config = copy.deepcopy(DEFAULTS)
    if path is not None:
        text = Path(path).read_text()
        loaded = yaml.safe_load(text) or {}
        if not isinstance(loaded, dict):
            raise ValueError(f"{path}: top level must be a mapping")
        config = _merge(config, loaded)
    for assignment in overrides:
        config = apply_override(config, assignment)
    return config


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def dump_config(config: dict) -> str:
    return yaml.safe_dump(config, sort_keys=False)


def city_config(config: dict) -> CityConfig:
    return CityConfig(**dict(config["city"], seed=config["seed"]))

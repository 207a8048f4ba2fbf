"""One fit / predict / save interface over every tree model kind."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .boosting import BoostedModel, GbtParams, fit_gbt
from .forest import BaggedEnsemble, ForestParams, fit_forest, schema_hash
from .tree import RegressionTree, TreeParams, fit_tree, prune_ccp

MODEL_KINDS = ("cart", "random_forest", "extra_trees", "gbt_depthwise", "gbt_leafwise")
CART_FORMAT_VERSION = 1


@dataclass(frozen=True)
class CartParams:
    max_depth: int = 23
    min_child_weight: int = 100
    split_mode: str = "exact"
    histogram_bins: int = 256
    ccp_alpha: float = 0.0

    def tree_params(self) -> TreeParams:
        return TreeParams(self.max_depth, self.min_child_weight, self.split_mode, self.histogram_bins)


class CartModel:
    def __init__(self, tree: RegressionTree, params: CartParams, feature_names=None):
        self.tree = tree
        self.params = params
        self.feature_names = list(feature_names) if feature_names is not None else None

    n_trees = 1

    def predict(self, X) -> np.ndarray:
        return self.tree.predict(X)

    def to_dict(self) -> dict:
        return {
            "format": "cart_model",
            "version": CART_FORMAT_VERSION,
            "params": asdict(self.params),
            "feature_names": self.feature_names,
            "schema_hash": schema_hash(self.feature_names) if self.feature_names else None,
            "tree": self.tree.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CartModel":
        if d.get("format") != "cart_model" or d.get("version") != CART_FORMAT_VERSION:
            raise ValueError("not a supported CART model file")
        names = d.get("feature_names")
        if names and d.get("schema_hash") != schema_hash(names):
            raise ValueError("feature schema hash mismatch")
        return cls(RegressionTree.from_dict(d["tree"]), CartParams(**d["params"]), names)


PARAM_TYPES = {
    "cart": CartParams,
    "random_forest": ForestParams,
    "extra_trees": ForestParams,
    "gbt_depthwise": GbtParams,
    "gbt_leafwise": GbtParams,
}


def make_params(kind: str, params: dict | None = None, seed: int | None = None):
    """Typed parameters for ``kind``; unknown keys are an error."""
    if kind not in PARAM_TYPES:
        raise ValueError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}")
    cls = PARAM_TYPES[kind]
    params = dict(params or {})
    allowed = {f.name for f in fields(cls)} - {"kind", "growth"}
    unknown = sorted(set(params) - allowed)
    if unknown:
        raise ValueError(f"parameters {unknown} are not valid for {kind}")
    if seed is not None and "seed" in allowed:
        params.setdefault("seed", seed)
    if cls is ForestParams:
        params["kind"] = kind
    elif cls is GbtParams:
        params["growth"] = "leafwise" if kind == "gbt_leafwise" else "depthwise"
    return cls(**params)


def fit_model(kind: str, params: dict | None, X, y, X_valid=None, y_valid=None,
              feature_names=None, seed: int | None = None):
    typed = make_params(kind, params, seed)
    if kind == "cart":
        tree = fit_tree(X, y, typed.tree_params())
        if typed.ccp_alpha > 0:
            tree = prune_ccp(tree, typed.ccp_alpha)
        return CartModel(tree, typed, feature_names)
    if kind in ("random_forest", "extra_trees"):
        return fit_forest(X, y, typed, feature_names=feature_names)
    return fit_gbt(X, y, X_valid, y_valid, params=typed, feature_names=feature_names)


def model_kind(model) -> str:
    if isinstance(model, CartModel):
        return "cart"
    if isinstance(model, BaggedEnsemble):
        return model.kind
    if isinstance(model, BoostedModel):
        return "gbt_leafwise" if model.params.growth == "leafwise" else "gbt_depthwise"
    raise TypeError(f"not a model: {type(model).__name__}")


def model_to_json(model) -> str:
    blob = model.to_dict()
    blob["model_kind"] = model_kind(model)
    return json.dumps(blob, sort_keys=True)


def model_from_dict(blob: dict):
    kind = blob.get("model_kind")
    if kind == "cart":
        return CartModel.from_dict(blob)
    if kind in ("random_forest", "extra_trees"):
        return BaggedEnsemble.from_dict(blob)
    if kind in ("gbt_depthwise", "gbt_leafwise"):
        return BoostedModel.from_dict(blob)
    raise ValueError(f"unknown model kind {kind!r} in model file")


def save_model(model, path) -> Path:
    path = Path(path)
    path.write_text(model_to_json(model) + "\n")
    return path


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))

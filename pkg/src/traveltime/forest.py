"""Random Forest and Extra Trees regressors with averaged predictions."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .tree import RegressionTree, grow_tree

FOREST_KINDS = ("random_forest", "extra_trees")
FOREST_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ForestParams:
    kind: str = "random_forest"
    n_trees: int = 50
    subsample: float = 1.0
    colsample_bytree: float = 1.0
    max_depth: int = 12
    min_child_weight: int = 5
    # RF row sampling: with replacement when True, without otherwise.
    # subsample=1.0 with bootstrap=False trains every tree on all rows.
    bootstrap: bool = True
    # Draw exactly floor(.632 n) rows with replacement, ignoring subsample.
    strict_632: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.kind not in FOREST_KINDS:
            raise ValueError(f"kind must be one of {FOREST_KINDS}, got {self.kind!r}")
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        for name in ("subsample", "colsample_bytree"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.max_depth < 1 or self.min_child_weight < 1:
            raise ValueError("max_depth and min_child_weight must be >= 1")


def schema_hash(feature_names) -> str:
    return hashlib.sha256("\x1f".join(feature_names).encode()).hexdigest()[:16]


class BaggedEnsemble:
    def __init__(self, trees, feature_subsets, params: ForestParams, n_features, feature_names=None):
        self.trees: list[RegressionTree] = list(trees)
        self.feature_subsets = [list(map(int, s)) for s in feature_subsets]
        self.params = params
        self.n_features = int(n_features)
        self.feature_names = list(feature_names) if feature_names is not None else None

    @property
    def kind(self) -> str:
        return self.params.kind

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        total = np.zeros(X.shape[0])
        for tree in self.trees:
            total += tree.predict(X)
        return total / len(self.trees)

    def to_dict(self) -> dict:
        return {
            "format": "bagged_ensemble",
            "version": FOREST_FORMAT_VERSION,
            "kind": self.kind,
            "params": asdict(self.params),
            "seed": self.params.seed,
            "n_features": self.n_features,
            "feature_names": self.feature_names,
            "schema_hash": schema_hash(self.feature_names) if self.feature_names else None,
            "trees": [
                {"features": subset, "tree": tree.to_dict()}
                for subset, tree in zip(self.feature_subsets, self.trees)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BaggedEnsemble":
        if d.get("format") != "bagged_ensemble" or d.get("version") != FOREST_FORMAT_VERSION:
            raise ValueError("not a supported bagged ensemble file")
        names = d.get("feature_names")
        if names and d.get("schema_hash") != schema_hash(names):
            raise ValueError("schema hash does not match feature names")
        return cls(
            [RegressionTree.from_dict(t["tree"]) for t in d["trees"]],
            [t["features"] for t in d["trees"]],
            ForestParams(**d["params"]),
            d["n_features"],
            names,
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _tree_rows(params: ForestParams, n: int, rng) -> np.ndarray | None:
    if params.kind == "extra_trees":
        return None
    if params.bootstrap:
        size = math.floor(0.632 * n) if params.strict_632 else math.floor(params.subsample * n)
        return np.sort(rng.integers(0, n, size=max(size, 1)))
    if params.subsample >= 1.0:
        return None
    size = max(math.floor(params.subsample * n), 1)
    return np.sort(rng.choice(n, size=size, replace=False))


def _fit_one(X, y, params: ForestParams, seed_seq):
    rng = np.random.default_rng(seed_seq)
    n, p = X.shape
    rows = _tree_rows(params, n, rng)
    k = min(p, max(1, math.ceil(params.colsample_bytree * p)))
    feats = np.arange(p) if k == p else np.sort(rng.choice(p, size=k, replace=False))
    Xb, yb = (X, y) if rows is None else (X[rows], y[rows])
    tree = grow_tree(
        Xb, yb, max_depth=params.max_depth, min_child_weight=params.min_child_weight,
        features=feats, random_thresholds=params.kind == "extra_trees", rng=rng,
    )
    return tree, feats


def fit_forest(X, y, params: ForestParams, feature_names=None) -> BaggedEnsemble:
    """Fit a bagged ensemble.

    Random Forest trees see ``floor(subsample * n)`` rows drawn with
    replacement and ``ceil(colsample_bytree * p)`` features drawn without
    replacement, with exhaustive split search. Extra Trees use every row and
    cut each candidate feature at one uniform random point per node. Each
    tree draws from its own stream spawned from ``params.seed``, so results
    do not depend on the order trees are trained in.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("fit_forest needs nonempty training data")
    if len(y) != X.shape[0]:
        raise ValueError(f"{X.shape[0]} rows but {len(y)} targets")
    seeds = np.random.SeedSequence(params.seed).spawn(params.n_trees)
    fitted = [_fit_one(X, y, params, s) for s in seeds]
    return BaggedEnsemble(
        [t for t, _ in fitted], [f for _, f in fitted], params, X.shape[1], feature_names
    )


def predict_ensemble(ensemble: BaggedEnsemble, x):
    x = np.asarray(x, dtype=np.float64)
    out = ensemble.predict(x)
    return float(out[0]) if x.ndim == 1 else out

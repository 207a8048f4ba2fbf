"""Gradient-boosted regression trees under squared loss.

With squared loss every hessian is 1, so the regularized leaf weight is
``G / (N + lambda)`` and the split gain is
``0.5 * (G_L^2/(N_L+lambda) + G_R^2/(N_R+lambda) - G^2/(N+lambda))``,
where ``G`` sums the pseudo-residuals ``y - prediction`` of a node.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .forest import schema_hash
from .tree import SPLIT_MODES, RegressionTree, grow_tree

GROWTH_POLICIES = ("depthwise", "leafwise")
GBT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class GbtParams:
    num_rounds: int = 500
    learning_rate: float = 0.1
    reg_lambda: float = 1.0
    gamma: float = 0.0
    max_depth: int = 6
    max_leaves: int = 31
    growth: str = "depthwise"
    min_child_weight: int = 1
    subsample: float = 1.0
    colsample_bytree: float = 1.0
    early_stopping_patience: int = 50
    split_mode: str = "histogram"
    histogram_bins: int = 256
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.learning_rate <= 1:
            raise ValueError(f"learning_rate must lie in (0, 1], got {self.learning_rate}")
        if self.reg_lambda < 0 or self.gamma < 0:
            raise ValueError("reg_lambda and gamma must be >= 0")
        if self.early_stopping_patience < 1:
            raise ValueError("early_stopping_patience must be >= 1")
        if self.num_rounds < 0:
            raise ValueError("num_rounds must be >= 0")
        if self.growth not in GROWTH_POLICIES:
            raise ValueError(f"growth must be one of {GROWTH_POLICIES}, got {self.growth!r}")
        if self.split_mode not in SPLIT_MODES:
            raise ValueError(f"split_mode must be one of {SPLIT_MODES}")
        if self.max_depth < 1 or self.max_leaves < 2 or self.min_child_weight < 1:
            raise ValueError("max_depth >= 1, max_leaves >= 2, min_child_weight >= 1 required")
        for name in ("subsample", "colsample_bytree"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")


class BoostedModel:
    """``base_score + learning_rate * sum(tree_b(x) for b < best_round)``."""

    def __init__(self, base_score, trees, learning_rate, best_round, log, params: GbtParams,
                 n_features, feature_names=None):
        self.base_score = float(base_score)
        self.trees: list[RegressionTree] = list(trees)
        self.learning_rate = float(learning_rate)
        self.best_round = int(best_round)
        self.log = list(log)
        self.params = params
        self.n_features = int(n_features)
        self.feature_names = list(feature_names) if feature_names is not None else None

    @property
    def n_trees(self) -> int:
        return self.best_round

    def _check(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X

    def predict_raw(self, X, n_rounds=None) -> np.ndarray:
        X = self._check(X)
        n_rounds = self.best_round if n_rounds is None else n_rounds
        out = np.full(X.shape[0], self.base_score)
        for tree in self.trees[:n_rounds]:
            out += self.learning_rate * tree.predict(X)
        return out

    def predict(self, X) -> np.ndarray:
        """Predicted durations, clamped at zero."""
        return np.maximum(self.predict_raw(X), 0.0)

    def to_dict(self) -> dict:
        return {
            "format": "boosted_model",
            "version": GBT_FORMAT_VERSION,
            "params": asdict(self.params),
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "best_round": self.best_round,
            "n_features": self.n_features,
            "feature_names": self.feature_names,
            "schema_hash": schema_hash(self.feature_names) if self.feature_names else None,
            "log": self.log,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoostedModel":
        if d.get("format") != "boosted_model" or d.get("version") != GBT_FORMAT_VERSION:
            raise ValueError("not a supported boosted model file")
        return cls(
            d["base_score"], [RegressionTree.from_dict(t) for t in d["trees"]],
            d["learning_rate"], d["best_round"], d["log"], GbtParams(**d["params"]),
            d["n_features"], d.get("feature_names"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def log_csv(self) -> str:
        lines = ["round,train_rmse,valid_rmse"]
        for row in self.log:
            valid = "" if row["valid_rmse"] is None else repr(row["valid_rmse"])
            lines.append(f"{row['round']},{row['train_rmse']!r},{valid}")
        return "\n".join(lines) + "\n"


def _rmse(a, b) -> float:
    return float(np.sqrt(np.mean((a - b) ** 2)))


def fit_gbt(X, y, X_valid=None, y_valid=None, params: GbtParams = GbtParams(),
            feature_names=None) -> BoostedModel:
    """Boost trees on pseudo-residuals with shrinkage and early stopping.

    Training stops after ``num_rounds`` or once the validation RMSE has not
    improved for ``early_stopping_patience`` rounds; ``best_round`` is the
    round with the lowest validation RMSE (first one on ties). The RMSEs in
    the log are computed on unclamped predictions.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("fit_gbt needs a nonempty training set")
    if len(y) != X.shape[0]:
        raise ValueError(f"{X.shape[0]} rows but {len(y)} targets")
    n, p = X.shape
    has_valid = X_valid is not None and len(X_valid) > 0
    if has_valid:
        X_valid = np.asarray(X_valid, dtype=np.float64)
        y_valid = np.asarray(y_valid, dtype=np.float64)
        if X_valid.ndim != 2 or X_valid.shape[1] != p:
            raise ValueError(
                f"validation matrix has {X_valid.shape[-1]} columns, training has {p}"
            )

    rng = np.random.default_rng(params.seed)
    base = float(y.mean())
    pred = np.full(n, base)
    pred_valid = np.full(len(y_valid), base) if has_valid else None
    presorted = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
    n_rows = max(1, math.floor(params.subsample * n))
    n_cols = min(p, max(1, math.ceil(params.colsample_bytree * p)))
    leafwise = params.growth == "leafwise"

    trees, log = [], []
    best_rmse, best_round = math.inf, 0
    for rnd in range(1, params.num_rounds + 1):
        resid = y - pred
        feats = np.arange(p) if n_cols == p else np.sort(rng.choice(p, n_cols, replace=False))
        order = presorted[feats]
        if n_rows < n:
            keep = np.zeros(n, dtype=bool)
            keep[rng.choice(n, n_rows, replace=False)] = True
            order = order[keep[order]].reshape(len(feats), n_rows)
        tree = grow_tree(
            X, resid, max_depth=None if leafwise else params.max_depth,
            min_child_weight=params.min_child_weight, lam=params.reg_lambda,
            gamma=params.gamma, gain_scale=0.5, center=False, split_mode=params.split_mode,
            bins=params.histogram_bins, features=feats,
            growth=params.growth, max_leaves=params.max_leaves if leafwise else None,
            presorted=np.ascontiguousarray(order),
        )
        trees.append(tree)
        pred += params.learning_rate * tree.predict(X)
        entry = {"round": rnd, "train_rmse": _rmse(pred, y), "valid_rmse": None}
        if has_valid:
            pred_valid += params.learning_rate * tree.predict(X_valid)
            v = _rmse(pred_valid, y_valid)
            entry["valid_rmse"] = v
            if v < best_rmse:
                best_rmse, best_round = v, rnd
        log.append(entry)
        if has_valid and rnd - best_round >= params.early_stopping_patience:
            break
    if not has_valid:
        best_round = len(trees)
    return BoostedModel(base, trees, params.learning_rate, best_round, log, params, p, feature_names)


def predict_gbt(model: BoostedModel, x):
    x = np.asarray(x, dtype=np.float64)
    out = model.predict(x)
    return float(out[0]) if x.ndim == 1 else out


def feature_importance(model: BoostedModel) -> dict:
    """Total realized split gain and split count per feature over the trees
    kept by ``best_round``; ``share`` normalizes gains over used features.

    Keys are feature names when the model knows them, indices otherwise.
    """
    gains = np.zeros(model.n_features)
    counts = np.zeros(model.n_features, dtype=np.int64)
    for tree in model.trees[:model.best_round]:
        internal = tree.feature >= 0
        np.add.at(gains, tree.feature[internal], tree.gain[internal])
        np.add.at(counts, tree.feature[internal], 1)
    used = np.nonzero(counts)[0]
    total = gains[used].sum()
    names = model.feature_names or list(range(model.n_features))
    return {
        names[f]: {
            "gain": float(gains[f]),
            "count": int(counts[f]),
            "share": float(gains[f] / total) if total > 0 else 1.0 / len(used),
        }
        for f in used
    }

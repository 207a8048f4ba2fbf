"""Regression trees: greedy variance-reducing splits, leaf means and
cost-complexity pruning.

The same grower backs CART, the bagged ensembles and the boosted trees.
Targets are generic: CART passes the durations themselves, boosting passes
pseudo-residuals together with an L2 penalty on the leaf weights.
"""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass

import numpy as np

SPLIT_MODES = ("exact", "histogram")
TREE_FORMAT_VERSION = 1

# Relative floor below which a gain counts as numerical noise.
_GAIN_RTOL = 1e-12


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 6
    min_child_weight: int = 1
    split_mode: str = "exact"
    histogram_bins: int = 256

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.min_child_weight < 1:
            raise ValueError(f"min_child_weight must be >= 1, got {self.min_child_weight}")
        if self.split_mode not in SPLIT_MODES:
            raise ValueError(f"split_mode must be one of {SPLIT_MODES}, got {self.split_mode!r}")
        if self.histogram_bins < 2:
            raise ValueError(f"histogram_bins must be >= 2, got {self.histogram_bins}")


@dataclass(frozen=True)
class SplitCandidate:
    feature: int
    threshold: float
    gain: float
    n_left: int


class RegressionTree:
    """Binary tree stored as flat node arrays.

    Every node, internal or not, carries the value it would predict as a
    leaf, its sample count and the sum of squared deviations of its targets
    around their mean, so that pruning can collapse any internal node.
    ``feature == -1`` marks a leaf. Rows with ``x[feature] <= threshold``
    go left.
    """

    def __init__(self, feature, threshold, left, right, value, n_samples, sse, gain, n_features):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.float64)
        self.n_samples = np.asarray(n_samples, dtype=np.int64)
        self.sse = np.asarray(sse, dtype=np.float64)
        self.gain = np.asarray(gain, dtype=np.float64)
        self.n_features = int(n_features)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    @property
    def n_leaves(self) -> int:
        return int(self.is_leaf.sum())

    def depth(self) -> int:
        depths = self.node_depths()
        return int(depths.max()) if len(depths) else 0

    def node_depths(self) -> np.ndarray:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):  # children always come after parents
            if self.feature[node] >= 0:
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
        return depths

    def _check(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(
                f"feature vector has {X.shape[-1]} columns, tree was trained on {self.n_features}"
            )
        return X

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        X = self._check(X)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.nonzero(self.feature[node] >= 0)[0]
        while len(active):
            cur = node[active]
            f = self.feature[cur]
            go_left = X[active, f] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def leaf_sse(self) -> float:
        return float(self.sse[self.is_leaf].sum())

    def to_dict(self) -> dict:
        return {
            "format": "regression_tree",
            "version": TREE_FORMAT_VERSION,
            "n_features": self.n_features,
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
            "sse": self.sse.tolist(),
            "gain": self.gain.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        if d.get("format") != "regression_tree":
            raise ValueError("not a serialized regression tree")
        if d.get("version") != TREE_FORMAT_VERSION:
            raise ValueError(f"unsupported tree format version {d.get('version')}")
        return cls(
            d["feature"], d["threshold"], d["left"], d["right"], d["value"],
            d["n_samples"], d["sse"], d["gain"], d["n_features"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "RegressionTree":
        return cls.from_dict(json.loads(text))

    def __repr__(self):
        return f"RegressionTree(n_leaves={self.n_leaves}, depth={self.depth()})"


class _Grower:
    """Greedy split search over presorted per-feature row orders.

    Each node keeps one row ordering per candidate feature (a k x m index
    array). Splitting a node partitions those orderings stably, so rows are
    sorted once per tree and never again.
    """

    def __init__(self, X, target, *, features, min_child_weight, lam, gamma,
                 gain_scale, center, split_mode, bins, rng, random_thresholds):
        self.X = X
        self.XT = np.ascontiguousarray(X.T)
        self.target = target
        self.features = np.asarray(features, dtype=np.int64)
        self.mcw = min_child_weight
        self.lam = lam
        self.gamma = gamma
        self.gain_scale = gain_scale
        self.center = center
        self.split_mode = split_mode
        self.bins = bins
        self.rng = rng
        self.random_thresholds = random_thresholds
        self._mask = np.zeros(X.shape[0], dtype=bool)

        self.feature, self.threshold, self.left, self.right = [], [], [], []
        self.value, self.n_samples, self.sse, self.gain = [], [], [], []

    def root_order(self, presorted=None):
        if presorted is not None:
            return presorted
        cols = self.X[:, self.features]
        return np.ascontiguousarray(np.argsort(cols, axis=0, kind="stable").T)

    def add_node(self, order) -> int:
        rows = order[0]
        t = self.target[rows]
        m = len(rows)
        total = t.sum()
        mean = total / m
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(total / (m + self.lam))
        self.n_samples.append(m)
        self.sse.append(float(((t - mean) ** 2).sum()))
        self.gain.append(0.0)
        return len(self.feature) - 1

    def find_split(self, order) -> SplitCandidate | None:
        k, m = order.shape
        if m < 2 * self.mcw or k == 0:
            return None
        ts = self.target[order]
        if self.center:
            ts = ts - ts[0].sum() / m
        xs = self.XT[self.features[:, None], order]
        csum = np.cumsum(ts, axis=1)
        if self.random_thresholds:
            best = self._random_split(xs, csum, m)
            return best if best is not None and self._admissible(best.gain, ts) else None
        lo, hi = self.mcw - 1, m - self.mcw  # candidate i puts rows 0..i on the left
        if self.split_mode == "histogram" and self.bins < m:
            fi, pos = self._histogram_candidates(xs, m, lo, hi)
            if len(fi) == 0:
                return None
            g_left = csum[fi, pos]
            total = csum[fi, -1]
            n_left = pos + 1.0
        else:
            g_left = csum[:, lo:hi]
            total = csum[:, -1:]
            n_left = np.arange(lo + 1, hi + 1, dtype=np.float64)
        g_right = total - g_left
        gains = (g_left ** 2 / (n_left + self.lam) + g_right ** 2 / (m - n_left + self.lam)
                 - total ** 2 / (m + self.lam)) * self.gain_scale
        if g_left.ndim == 1:
            best_i = int(np.argmax(gains))  # candidates are in (feature, threshold) order
            f, i = int(fi[best_i]), int(pos[best_i])
            best = gains[best_i]
        else:
            gains = np.where(xs[:, lo:hi] < xs[:, lo + 1:hi + 1], gains, -np.inf)
            flat = int(np.argmax(gains))  # first maximum: lowest feature, then lowest threshold
            f, i = divmod(flat, gains.shape[1])
            i += lo
            best = gains.flat[flat]
        if not self._admissible(best, ts):
            return None
        return SplitCandidate(int(self.features[f]), float(xs[f, i]), float(best), i + 1)

    def _histogram_candidates(self, xs, m, lo, hi):
        # Equal-frequency bins over the node's sorted values; a candidate
        # threshold is the last value of each bin, extended to the end of its run.
        bin_id = np.arange(m) * self.bins // m
        boundary = np.nonzero(bin_id[:-1] != bin_id[1:])[0]
        fis, poss = [], []
        for f in range(xs.shape[0]):
            ends = np.unique(np.searchsorted(xs[f], xs[f, boundary], side="right") - 1)
            ends = ends[(ends >= lo) & (ends < hi)]
            fis.append(np.full(len(ends), f))
            poss.append(ends)
        return np.concatenate(fis), np.concatenate(poss)

    def _random_split(self, xs, csum, m):
        best = None
        for f in range(xs.shape[0]):
            lo_v, hi_v = xs[f, 0], xs[f, -1]
            if not lo_v < hi_v:
                continue
            thr = self.rng.uniform(lo_v, hi_v)
            while thr <= lo_v:  # keep the cut strictly inside the range
                thr = self.rng.uniform(lo_v, hi_v)
            nl = int(np.searchsorted(xs[f], thr, side="right"))
            if nl < self.mcw or m - nl < self.mcw:
                continue
            total = csum[f, -1]
            gl = csum[f, nl - 1]
            gr = total - gl
            gain = (gl ** 2 / (nl + self.lam) + gr ** 2 / (m - nl + self.lam)
                    - total ** 2 / (m + self.lam)) * self.gain_scale
            if best is None or gain > best.gain:
                best = SplitCandidate(int(self.features[f]), float(thr), float(gain), nl)
        return best

    def _admissible(self, gain, ts):
        if not np.isfinite(gain):
            return False
        scale = float(ts[0] @ ts[0])
        return gain > _GAIN_RTOL * scale and gain >= self.gamma

    def split(self, node, order, cand: SplitCandidate):
        rows = order[0]
        mask = self._mask
        mask[rows] = self.X[rows, cand.feature] <= cand.threshold
        goes_left = mask[order]
        mask[rows] = False
        k, m = order.shape
        left_order = order[goes_left].reshape(k, cand.n_left)
        right_order = order[~goes_left].reshape(k, m - cand.n_left)
        self.feature[node] = cand.feature
        self.threshold[node] = cand.threshold
        self.gain[node] = cand.gain
        left = self.add_node(left_order)
        right = self.add_node(right_order)
        self.left[node] = left
        self.right[node] = right
        return left_order, right_order

    def build(self):
        return RegressionTree(
            self.feature, self.threshold, self.left, self.right, self.value,
            self.n_samples, self.sse, self.gain, self.X.shape[1],
        )


def grow_tree(X, target, *, max_depth=None, min_child_weight=1, lam=0.0, gamma=0.0,
              gain_scale=1.0, center=True, split_mode="exact", bins=256,
              features=None, growth="depthwise", max_leaves=None,
              random_thresholds=False, rng=None, presorted=None) -> RegressionTree:
    """Grow one tree on ``(X, target)``.

    A leaf predicts ``sum(target) / (n + lam)``; a split's gain is
    ``gain_scale * (G_L^2/(n_L+lam) + G_R^2/(n_R+lam) - G^2/(n+lam))``.
    With ``lam=0`` and ``gain_scale=1`` this is the CART SSE reduction and the
    leaf mean. Splits need a positive gain that is also ``>= gamma``.
    ``growth="leafwise"`` expands the highest-gain leaf first until
    ``max_leaves`` leaves exist.
    """
    X = np.asarray(X, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("cannot grow a tree on empty input")
    if len(target) != X.shape[0]:
        raise ValueError(f"{X.shape[0]} rows but {len(target)} targets")
    if features is None:
        features = np.arange(X.shape[1])
    features = np.sort(np.asarray(features, dtype=np.int64))
    if random_thresholds and rng is None:
        raise ValueError("random thresholds need a random generator")
    grower = _Grower(
        X, target, features=features, min_child_weight=min_child_weight, lam=lam,
        gamma=gamma, gain_scale=gain_scale, center=center, split_mode=split_mode,
        bins=bins, rng=rng, random_thresholds=random_thresholds,
    )
    order = grower.root_order(presorted)
    root = grower.add_node(order)
    depth_ok = (lambda d: True) if max_depth is None else (lambda d: d < max_depth)

    if growth == "depthwise":
        stack = [(root, order, 0)]
        while stack:
            node, order, depth = stack.pop()
            if not depth_ok(depth):
                continue
            cand = grower.find_split(order)
            if cand is None:
                continue
            lo, ro = grower.split(node, order, cand)
            stack.append((grower.right[node], ro, depth + 1))
            stack.append((grower.left[node], lo, depth + 1))
    elif growth == "leafwise":
        if max_leaves is None or max_leaves < 2:
            raise ValueError("leaf-wise growth needs max_leaves >= 2")
        heap = []

        def push(node, order, depth):
            if depth_ok(depth):
                cand = grower.find_split(order)
                if cand is not None:
                    heapq.heappush(heap, (-cand.gain, node, order, depth, cand))

        push(root, order, 0)
        leaves = 1
        while heap and leaves < max_leaves:
            _, node, order, depth, cand = heapq.heappop(heap)
            lo, ro = grower.split(node, order, cand)
            leaves += 1
            push(grower.left[node], lo, depth + 1)
            push(grower.right[node], ro, depth + 1)
    else:
        raise ValueError(f"unknown growth policy {growth!r}")
    return grower.build()


def best_split(X, y, params: TreeParams, features=None) -> SplitCandidate | None:
    """Best variance-reducing split of one node, or None if no admissible
    split has positive gain."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if features is None:
        features = np.arange(X.shape[1])
    grower = _Grower(
        X, y, features=np.sort(np.asarray(features)), min_child_weight=params.min_child_weight,
        lam=0.0, gamma=0.0, gain_scale=1.0, center=True, split_mode=params.split_mode,
        bins=params.histogram_bins, rng=None, random_thresholds=False,
    )
    return grower.find_split(grower.root_order())


def fit_tree(X, y, params: TreeParams = TreeParams()) -> RegressionTree:
    """CART regression tree grown depth-first until max_depth,
    min_child_weight or zero gain stops it; leaves hold target means."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("fit_tree needs at least one row")
    return grow_tree(
        X, y, max_depth=params.max_depth, min_child_weight=params.min_child_weight,
        split_mode=params.split_mode, bins=params.histogram_bins,
    )


def predict_tree(tree: RegressionTree, x) -> float | np.ndarray:
    """Prediction for one feature vector (returns a float) or a matrix."""
    x = np.asarray(x, dtype=np.float64)
    out = tree.predict(x)
    return float(out[0]) if x.ndim == 1 else out


def _subtree_stats(tree: RegressionTree, collapsed: np.ndarray):
    """Post-order sums of leaf SSE and leaf counts with ``collapsed`` nodes
    treated as leaves."""
    n = tree.n_nodes
    r_sub = np.zeros(n)
    leaves = np.zeros(n, dtype=np.int64)
    for node in range(n - 1, -1, -1):  # children have larger ids than parents
        if tree.feature[node] < 0 or collapsed[node]:
            r_sub[node] = tree.sse[node]
            leaves[node] = 1
        else:
            l, r = tree.left[node], tree.right[node]
            r_sub[node] = r_sub[l] + r_sub[r]
            leaves[node] = leaves[l] + leaves[r]
    return r_sub, leaves


def _reachable_internal(tree: RegressionTree, collapsed: np.ndarray) -> list[int]:
    out, stack = [], [0]
    while stack:
        node = stack.pop()
        if tree.feature[node] < 0 or collapsed[node]:
            continue
        out.append(node)
        stack.extend((tree.left[node], tree.right[node]))
    return out


def _weakest_link(tree, collapsed):
    r_sub, leaves = _subtree_stats(tree, collapsed)
    internal = _reachable_internal(tree, collapsed)
    if not internal:
        return None, np.inf
    g = {t: (tree.sse[t] - r_sub[t]) / (leaves[t] - 1) for t in internal}
    weakest = min(internal, key=lambda t: (g[t], t))
    return weakest, g[weakest]


def cost_complexity_path(tree: RegressionTree):
    """Weakest-link sequence: list of (alpha, n_leaves) at which successive
    subtrees become optimal, starting from the full tree at alpha 0."""
    collapsed = np.zeros(tree.n_nodes, dtype=bool)
    path = [(0.0, tree.n_leaves)]
    while True:
        node, g = _weakest_link(tree, collapsed)
        if node is None:
            return path
        collapsed[node] = True
        n_leaves = int(_subtree_stats(tree, collapsed)[1][0])
        alpha = max(g, 0.0)
        if path[-1][0] == alpha:
            path[-1] = (alpha, n_leaves)
        else:
            path.append((alpha, n_leaves))


def prune_ccp(tree: RegressionTree, alpha: float) -> RegressionTree:
    """Subtree minimizing ``sum(leaf SSE) + alpha * n_leaves``.

    Weakest links are collapsed while their effective alpha is <= ``alpha``;
    on a tie the collapse happens, so the smaller tree wins.
    """
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    collapsed = np.zeros(tree.n_nodes, dtype=bool)
    while True:
        node, g = _weakest_link(tree, collapsed)
        if node is None or g > alpha:
            break
        collapsed[node] = True
    if not collapsed.any():
        return tree
    return _rebuild(tree, collapsed)


def _rebuild(tree: RegressionTree, collapsed: np.ndarray) -> RegressionTree:
    cols = {k: [] for k in ("feature", "threshold", "left", "right", "value", "n_samples", "sse", "gain")}

    def copy(node):
        new = len(cols["feature"])
        leaf = tree.feature[node] < 0 or collapsed[node]
        cols["feature"].append(-1 if leaf else int(tree.feature[node]))
        cols["threshold"].append(0.0 if leaf else float(tree.threshold[node]))
        cols["left"].append(-1)
        cols["right"].append(-1)
        cols["value"].append(float(tree.value[node]))
        cols["n_samples"].append(int(tree.n_samples[node]))
        cols["sse"].append(float(tree.sse[node]))
        cols["gain"].append(0.0 if leaf else float(tree.gain[node]))
        return new, leaf

    root, leaf = copy(0)
    stack = [] if leaf else [(0, root)]
    while stack:
        old, new = stack.pop()
        for side in ("left", "right"):
            child_new, child_leaf = copy(getattr(tree, side)[old])
            cols[side][new] = child_new
            if not child_leaf:
                stack.append((getattr(tree, side)[old], child_new))
    return RegressionTree(n_features=tree.n_features, **cols)

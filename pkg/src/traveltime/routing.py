"""Free-flow fastest routes on a road graph and the route features derived
from them (distance, duration, steps, turns, left turns, main street)."""
from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

log = logging.getLogger(__name__)

EARTH_RADIUS_MILES = 3958.8
ROUTE_FEATURES = ["osrm_distance", "osrm_duration", "total_steps", "total_turns",
                  "total_left", "main_street", "main_street_ratio"]


class GraphError(ValueError):
    pass


class UnroutablePoint(ValueError):
    pass


class NoRoute(ValueError):
    pass


def haversine_miles(lat1, lon1, lat2, lon2):
    lat1, lon1, lat2, lon2 = map(np.radians, (lat1, lon1, lat2, lon2))
    a = (np.sin((lat2 - lat1) / 2) ** 2
         + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2)
    return 2 * EARTH_RADIUS_MILES * np.arcsin(np.sqrt(a))


def bearing_degrees(lat1, lon1, lat2, lon2) -> float:
    """Initial compass bearing, 0 = north, 90 = east."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dl = math.radians(lon2 - lon1)
    x = math.sin(dl) * math.cos(p2)
    y = math.cos(p1) * math.sin(p2) - math.sin(p1) * math.cos(p2) * math.cos(dl)
    return math.degrees(math.atan2(x, y)) % 360.0


class RoadGraph:
    """Directed road graph, immutable once built.

    Search costs are edge traversal times quantized to whole microseconds so
    that equal-duration paths tie exactly and tie-breaking is reproducible.
    """

    def __init__(self, nodes: pd.DataFrame, edges: pd.DataFrame):
        nodes = nodes.sort_values("node_id").reset_index(drop=True)
        self.node_ids = nodes["node_id"].to_numpy(dtype=np.int64)
        self.lat = nodes["lat"].to_numpy(dtype=float)
        self.lon = nodes["lon"].to_numpy(dtype=float)
        self.index = {int(n): i for i, n in enumerate(self.node_ids)}
        if len(self.index) != len(self.node_ids):
            raise GraphError("duplicate node ids")

        edges = edges.reset_index(drop=True)
        src, dst = [], []
        for i, (a, b) in enumerate(zip(edges["from_node"], edges["to_node"])):
            if int(a) not in self.index or int(b) not in self.index:
                raise GraphError(f"edge {i} ({a} -> {b}) references an unknown node")
            src.append(self.index[int(a)])
            dst.append(self.index[int(b)])
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        self.length = edges["length_miles"].to_numpy(dtype=float)
        self.speed = edges["speed_mph"].to_numpy(dtype=float)
        self.street = edges["street_name"].astype(str).tolist()
        if (self.length <= 0).any() or (self.speed <= 0).any():
            bad = int(np.argmax((self.length <= 0) | (self.speed <= 0)))
            raise GraphError(f"edge {bad} has nonpositive length or speed")
        self.duration = self.length / self.speed * 3600.0
        self.cost_us = np.rint(self.duration * 1e6).astype(np.int64)

        self.out_edges = [[] for _ in range(len(self.node_ids))]
        for e, s in enumerate(self.src):
            self.out_edges[s].append(e)
        self.by_street = {}
        for e, name in enumerate(self.street):
            self.by_street.setdefault(name, []).append(e)

        lat0 = math.radians(float(np.mean(self.lat))) if len(self.lat) else 0.0
        self._scale = np.array([69.0, 69.17 * math.cos(lat0)])  # miles per degree
        self._kd = cKDTree(np.column_stack([self.lat, self.lon]) * self._scale) if len(self.lat) else None
        self._trees = {}

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def edge_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "from_node": self.node_ids[self.src], "to_node": self.node_ids[self.dst],
            "length_miles": self.length, "speed_mph": self.speed, "street_name": self.street,
        })

    def node_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"node_id": self.node_ids, "lat": self.lat, "lon": self.lon})

    def largest_component(self) -> "RoadGraph":
        """Subgraph on the largest strongly connected component."""
        n = self.n_nodes
        adj = coo_matrix((np.ones(self.n_edges), (self.src, self.dst)), shape=(n, n))
        _, labels = connected_components(adj, directed=True, connection="strong")
        keep_label = np.bincount(labels).argmax()
        keep = labels == keep_label
        edges = self.edge_frame()[keep[self.src] & keep[self.dst]]
        return RoadGraph(self.node_frame()[keep], edges)

    def snap(self, lat, lon, radius_miles=0.25) -> np.ndarray:
        """Index of the nearest node for each point; -1 beyond the radius."""
        pts = np.column_stack([np.atleast_1d(lat), np.atleast_1d(lon)]) * self._scale
        dist, idx = self._kd.query(pts)
        return np.where(dist <= radius_miles, idx, -1)

    def shortest_path_tree(self, source: int):
        """Label-setting search from node index ``source``.

        Labels compare by (microseconds, edge count, node-id sequence), so
        ties go to fewer edges, then the lexicographically smallest path.
        Returns the predecessor edge of every reached node.
        """
        cached = self._trees.get(source)
        if cached is not None:
            return cached
        ids = self.node_ids
        pred = {}
        best = {source: (0, 0, (int(ids[source]),))}
        heap = [(0, 0, (int(ids[source]),), source, -1)]
        while heap:
            cost, hops, path, u, via = heapq.heappop(heap)
            if u in pred:
                continue
            pred[u] = via
            for e in self.out_edges[u]:
                v = int(self.dst[e])
                if v in pred:
                    continue
                label = (cost + int(self.cost_us[e]), hops + 1, path + (int(ids[v]),))
                if v not in best or label < best[v]:
                    best[v] = label
                    heapq.heappush(heap, (*label, v, e))
        self._trees[source] = pred
        return pred

    def route_between(self, src: int, dst: int) -> "Route":
        pred = self.shortest_path_tree(src)
        if dst not in pred:
            raise NoRoute(f"no route from node {self.node_ids[src]} to node {self.node_ids[dst]}")
        edges = []
        node = dst
        while node != src:
            e = pred[node]
            edges.append(e)
            node = int(self.src[e])
        edges.reverse()
        return Route([self._route_edge(e) for e in edges], int(self.node_ids[src]))

    def route_along(self, node_ids) -> "Route":
        """Route through an explicit node sequence, taking the first edge
        between each consecutive pair."""
        edges = []
        for a, b in zip(node_ids, node_ids[1:]):
            ia, ib = self.index[int(a)], self.index[int(b)]
            match = [e for e in self.out_edges[ia] if self.dst[e] == ib]
            if not match:
                raise NoRoute(f"no edge from node {a} to node {b}")
            edges.append(self._route_edge(match[0]))
        return Route(edges, int(node_ids[0]))

    def _route_edge(self, e: int) -> "RouteEdge":
        a, b = self.src[e], self.dst[e]
        return RouteEdge(
            int(self.node_ids[a]), int(self.node_ids[b]), float(self.length[e]),
            float(self.duration[e]), self.street[e],
            bearing_degrees(self.lat[a], self.lon[a], self.lat[b], self.lon[b]),
        )


@dataclass(frozen=True)
class RouteEdge:
    from_node: int
    to_node: int
    length: float
    duration: float
    street: str
    bearing: float


@dataclass(frozen=True)
class Route:
    edges: list
    origin: int

    @property
    def nodes(self) -> list:
        return [self.origin] + [e.to_node for e in self.edges]

    @property
    def duration(self) -> float:
        return float(sum(e.duration for e in self.edges))

    @property
    def distance(self) -> float:
        return float(sum(e.length for e in self.edges))


@dataclass(frozen=True)
class RouteFeatures:
    osrm_distance: float
    osrm_duration: float
    total_steps: int
    total_turns: int
    total_left: int
    main_street: str
    main_street_ratio: float


def read_graph(nodes_path, edges_path) -> RoadGraph:
    return build_graph(pd.read_csv(nodes_path), pd.read_csv(edges_path))


def build_graph(nodes: pd.DataFrame, edges: pd.DataFrame) -> RoadGraph:
    for col in ("node_id", "lat", "lon"):
        if col not in nodes:
            raise GraphError(f"node table lacks column {col!r}")
    for col in ("from_node", "to_node", "length_miles", "speed_mph", "street_name"):
        if col not in edges:
            raise GraphError(f"edge table lacks column {col!r}")
    return RoadGraph(nodes, edges)


def write_graph(graph: RoadGraph, nodes_path, edges_path):
    graph.node_frame().to_csv(nodes_path, index=False, lineterminator="\n")
    graph.edge_frame().to_csv(edges_path, index=False, lineterminator="\n")


def fastest_route(graph: RoadGraph, origin, dest, snap_radius: float = 0.25) -> Route:
    """Minimum free-flow time route between two (lat, lon) points, each
    snapped to its nearest node."""
    (a,), (b,) = graph.snap(origin[0], origin[1], snap_radius), graph.snap(dest[0], dest[1], snap_radius)
    for idx, pt in ((a, origin), (b, dest)):
        if idx < 0:
            raise UnroutablePoint(f"unroutable point {tuple(pt)}: no node within {snap_radius} mi")
    return graph.route_between(int(a), int(b))


def classify_turn(change: float, straight: float = 30.0, uturn: float = 170.0) -> str:
    """Compass-signed bearing change in (-180, 180]: positive turns right."""
    if abs(change) >= uturn:
        return "uturn"
    if abs(change) <= straight:
        return "straight"
    return "right" if change > 0 else "left"


def _bearing_change(a: float, b: float) -> float:
    d = (b - a) % 360.0
    return d - 360.0 if d > 180.0 else d


def extract_route_features(route: Route) -> RouteFeatures:
    """Steps are maximal runs of edges on one street. A turn is a step
    boundary whose bearing change is not straight; right and U-turns count
    toward total_turns only."""
    if not route.edges:
        raise ValueError("cannot extract features from an empty route")
    runs = []
    for e in route.edges:
        if runs and runs[-1][-1].street == e.street:
            runs[-1].append(e)
        else:
            runs.append([e])
    turns = left = 0
    for prev, nxt in zip(runs, runs[1:]):
        kind = classify_turn(_bearing_change(prev[-1].bearing, nxt[0].bearing))
        if kind != "straight":
            turns += 1
            left += kind == "left"
    per_street = {}
    for e in route.edges:
        per_street[e.street] = per_street.get(e.street, 0.0) + e.duration
    main = min(per_street, key=lambda s: (-per_street[s], s))
    total = route.duration
    return RouteFeatures(
        osrm_distance=route.distance,
        osrm_duration=total,
        total_steps=len(runs),
        total_turns=turns,
        total_left=left,
        main_street=main,
        main_street_ratio=min(1.0, per_street[main] / total) if total > 0 else 0.0,
    )


EMPTY_ROUTE_FEATURES = RouteFeatures(0.0, 0.0, 0, 0, 0, "", 0.0)


def route_features_for_trips(graph: RoadGraph, trips: pd.DataFrame, snap_radius: float = 0.25):
    """Route features for every trip, keyed by trip_id.

    Trips whose endpoints do not snap or cannot be connected are left out
    and returned as a second frame with the reason. Trips that snap both
    ends to one node get zero-valued features.
    """
    a = graph.snap(trips["pickup_latitude"], trips["pickup_longitude"], snap_radius)
    b = graph.snap(trips["dropoff_latitude"], trips["dropoff_longitude"], snap_radius)
    rows, failed = [], []
    cache = {}
    for trip_id, s, d in zip(trips["trip_id"].to_numpy(), a, b):
        if s < 0 or d < 0:
            failed.append((int(trip_id), "unroutable point"))
            continue
        key = (int(s), int(d))
        feats = cache.get(key)
        if feats is None:
            if s == d:
                feats = EMPTY_ROUTE_FEATURES
            else:
                try:
                    feats = extract_route_features(graph.route_between(*key))
                except NoRoute:
                    feats = "no route"
            cache[key] = feats
        if isinstance(feats, str):
            failed.append((int(trip_id), feats))
            continue
        rows.append((int(trip_id), *(getattr(feats, f) for f in ROUTE_FEATURES)))
    out = pd.DataFrame(rows, columns=["trip_id"] + ROUTE_FEATURES)
    if failed:
        log.warning("%d trips could not be routed", len(failed))
    return out, pd.DataFrame(failed, columns=["trip_id", "reason"])

"""Location models, distances, neighbor graphs, LR sets and obfuscation ranges.

Two metrics are supported: ``planar`` (Euclidean, coordinates in km) and
``haversine`` (great-circle distance, coordinates in degrees).  Grid models
place one location at the center of every cell, numbered row-major.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

EARTH_RADIUS_KM = 6371.0
PLANAR = "planar"
HAVERSINE = "haversine"
_KM_PER_DEG_LAT = np.pi * EARTH_RADIUS_KM / 180.0
# slack for threshold comparisons, so grid distances equal to a threshold count as within it
DIST_TOL = 1e-9


@dataclass(frozen=True)
class Location:
    """A location id and its coordinate; ``kind`` is ``"planar"`` or ``"geodetic"``."""

    id: int
    coord: tuple
    kind: str = "planar"


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int
    cell_size_km: float
    origin: tuple = (0.0, 0.0)  # lower-left corner, km for planar, (lat, lon) for haversine


class LocationModel:
    """A finite location set with a distance metric.

    :param coords: array of shape (K, 2); ``(x_km, y_km)`` or ``(lat, lon)``.
    :param metric: ``"planar"`` or ``"haversine"``.
    :param grid: the :class:`GridSpec` this model was generated from, if any.
    """

    def __init__(self, coords, metric: str = PLANAR, grid: Optional[GridSpec] = None):
        coords = np.array(coords, dtype=float).reshape(-1, 2)
        if coords.shape[0] == 0:
            raise ValueError("a location model needs at least one location")
        if not np.all(np.isfinite(coords)):
            raise ValueError("coordinates must be finite")
        if metric not in (PLANAR, HAVERSINE):
            raise ValueError(f"unknown metric {metric!r}")
        coords.setflags(write=False)
        self.coords = coords
        self.metric = metric
        self.grid = grid
        self._dist: Optional[np.ndarray] = None

    @property
    def K(self) -> int:
        return self.coords.shape[0]

    def __len__(self):
        return self.K

    @property
    def locations(self) -> list:
        kind = "planar" if self.metric == PLANAR else "geodetic"
        return [Location(i, tuple(c), kind) for i, c in enumerate(self.coords)]

    def _check(self, i):
        if not 0 <= i < self.K:
            raise IndexError(f"location id {i} out of range 0..{self.K - 1}")

    def direct_distance(self, i: int, j: int) -> float:
        self._check(i)
        self._check(j)
        if i == j:
            return 0.0
        return float(pairwise_distance(self.coords[[i]], self.coords[[j]], self.metric)[0, 0])

    def distances_from(self, i: int, cols=None) -> np.ndarray:
        self._check(i)
        other = self.coords if cols is None else self.coords[np.asarray(cols, dtype=int)]
        return pairwise_distance(self.coords[[i]], other, self.metric)[0]

    def distance_matrix(self, rows=None, cols=None) -> np.ndarray:
        """Direct distances between ``rows`` and ``cols`` (all ids by default)."""
        if rows is None and cols is None:
            if self._dist is None:
                d = pairwise_distance(self.coords, self.coords, self.metric)
                np.fill_diagonal(d, 0.0)
                d.setflags(write=False)
                self._dist = d
            return self._dist
        r = np.arange(self.K) if rows is None else np.asarray(rows, dtype=int)
        c = np.arange(self.K) if cols is None else np.asarray(cols, dtype=int)
        if self._dist is not None:
            return self._dist[np.ix_(r, c)]
        d = pairwise_distance(self.coords[r], self.coords[c], self.metric)
        d[r[:, None] == c[None, :]] = 0.0
        return d

    def distance_to_points(self, points) -> np.ndarray:
        """Distances from arbitrary points (same coordinate kind) to every location."""
        return pairwise_distance(np.asarray(points, dtype=float).reshape(-1, 2),
                                 self.coords, self.metric)

    def nearest(self, points) -> np.ndarray:
        """Nearest location id for each point; ties go to the smaller id."""
        return np.argmin(self.distance_to_points(points), axis=1)


def pairwise_distance(a: np.ndarray, b: np.ndarray, metric: str) -> np.ndarray:
    """Distance matrix in km between coordinate arrays ``a`` (n,2) and ``b`` (m,2)."""
    if metric == PLANAR:
        diff = a[:, None, :] - b[None, :, :]
        return np.hypot(diff[..., 0], diff[..., 1])
    lat1 = np.radians(a[:, 0])[:, None]
    lat2 = np.radians(b[:, 0])[None, :]
    dlat = lat2 - lat1
    dlon = np.radians(b[:, 1])[None, :] - np.radians(a[:, 1])[:, None]
    h = np.sin(dlat / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def grid_coordinates(grid: GridSpec, metric: str = PLANAR) -> np.ndarray:
    """Row-major cell centers.  Haversine grids use a local flat-earth layout."""
    if grid.rows < 1 or grid.cols < 1:
        raise ValueError("grid needs rows >= 1 and cols >= 1")
    if not grid.cell_size_km > 0:
        raise ValueError("cell_size_km must be positive")
    r, c = np.divmod(np.arange(grid.rows * grid.cols), grid.cols)
    dy = (r + 0.5) * grid.cell_size_km
    dx = (c + 0.5) * grid.cell_size_km
    o0, o1 = grid.origin
    if metric == PLANAR:
        return np.column_stack([o0 + dx, o1 + dy])
    lat = o0 + dy / _KM_PER_DEG_LAT
    lon = o1 + dx / (_KM_PER_DEG_LAT * np.cos(np.radians(o0)))
    return np.column_stack([lat, lon])


def build_location_model(spec, metric: Optional[str] = None) -> LocationModel:
    """Build a model from a :class:`GridSpec` or a coordinate list.

    A coordinate list may hold plain pairs (kind taken from ``metric``) or
    :class:`Location` objects, whose kinds must agree and whose ids must be
    ``0..K-1`` in order.
    """
    if isinstance(spec, GridSpec):
        metric = metric or PLANAR
        return LocationModel(grid_coordinates(spec, metric), metric, grid=spec)
    items = list(spec)
    if not items:
        raise ValueError("empty coordinate list")
    if isinstance(items[0], Location):
        kinds = {loc.kind for loc in items}
        if len(kinds) > 1:
            raise ValueError("mixed coordinate kinds in one model")
        if [loc.id for loc in items] != list(range(len(items))):
            raise ValueError("location ids must be dense 0..K-1 in order")
        kind = kinds.pop()
        implied = PLANAR if kind == "planar" else HAVERSINE
        if metric is not None and metric != implied:
            raise ValueError(f"metric {metric!r} does not match {kind} coordinates")
        return LocationModel([loc.coord for loc in items], implied)
    return LocationModel(items, metric or PLANAR)


def grid_covering_radius(grid: GridSpec) -> float:
    """Largest distance from a point of the gridded region to its nearest cell center."""
    return grid.cell_size_km * np.sqrt(2.0) / 2.0


# ---------------------------------------------------------------------------
# Geo-Ind graph

@dataclass(frozen=True)
class GeoIndGraph:
    """Undirected graph joining locations at direct distance at most ``gamma_km``."""

    n_nodes: int
    edges: tuple  # (i, j, weight_km) with i < j
    gamma_km: float
    adjacency: tuple = field(repr=False, default=())  # per node: tuple of (nbr, w) sorted by nbr

    def __post_init__(self):
        edges = tuple((int(i), int(j), float(w)) for i, j, w in self.edges)
        for i, j, w in edges:
            if not (0 <= i < j < self.n_nodes) or not w >= 0:
                raise ValueError(f"bad edge ({i}, {j}, {w})")
        object.__setattr__(self, "edges", edges)
        if not self.adjacency:
            adj = [[] for _ in range(self.n_nodes)]
            for i, j, w in edges:
                adj[i].append((j, w))
                adj[j].append((i, w))
            object.__setattr__(self, "adjacency", tuple(tuple(sorted(a)) for a in adj))

    @property
    def nodes(self):
        return range(self.n_nodes)

    def neighbors(self, i: int):
        return self.adjacency[i]

    def edge_array(self) -> np.ndarray:
        if not self.edges:
            return np.zeros((0, 3))
        return np.array(self.edges, dtype=float)


def build_geoind_graph(model: LocationModel, gamma_km: float) -> GeoIndGraph:
    if not gamma_km > 0:
        raise ValueError("gamma_km must be positive")
    d = model.distance_matrix()
    ii, jj = np.nonzero(np.triu(d <= gamma_km + DIST_TOL, k=1))
    edges = tuple((int(i), int(j), float(d[i, j])) for i, j in zip(ii, jj))
    return GeoIndGraph(model.K, edges, float(gamma_km))


def shortest_path_tree(graph: GeoIndGraph, root: int) -> np.ndarray:
    """Dijkstra distances from ``root``; unreachable nodes get ``inf``.

    Equal tentative distances are settled in increasing node id.
    """
    if not 0 <= root < graph.n_nodes:
        raise IndexError(f"root {root} not in graph")
    dist = np.full(graph.n_nodes, np.inf)
    dist[root] = 0.0
    done = np.zeros(graph.n_nodes, dtype=bool)
    heap = [(0.0, root)]
    while heap:
        du, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for v, w in graph.adjacency[u]:
            nd = du + w
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


@dataclass(frozen=True)
class LrSet:
    """Locations whose graph path distance to ``center`` is at most ``gamma_lr_km``.

    ``members`` is sorted ascending; ``path_dist`` is aligned with it.
    """

    center: int
    members: np.ndarray
    path_dist: np.ndarray
    gamma_lr_km: float

    def __len__(self):
        return len(self.members)

    def distance_map(self) -> dict:
        return {int(m): float(d) for m, d in zip(self.members, self.path_dist)}


def lr_set(graph: GeoIndGraph, center: int, gamma_lr_km: float) -> LrSet:
    if gamma_lr_km < 0:
        raise ValueError("gamma_lr_km must be non-negative")
    dist = shortest_path_tree(graph, center)
    members = np.flatnonzero(dist <= gamma_lr_km + DIST_TOL)
    return LrSet(int(center), members, dist[members], float(gamma_lr_km))


@dataclass(frozen=True)
class ObfRange:
    """Locations within direct distance ``radius_km`` of ``center`` (sorted ids)."""

    center: int
    members: np.ndarray
    radius_km: float

    def __len__(self):
        return len(self.members)


def obf_range(model: LocationModel, center: int, r_obf_km: float) -> ObfRange:
    if not r_obf_km > 0:
        raise ValueError("r_obf_km must be positive")
    d = model.distances_from(center)
    d[center] = 0.0
    return ObfRange(int(center), np.flatnonzero(d <= r_obf_km + DIST_TOL), float(r_obf_km))


def read_coordinates_csv(path) -> LocationModel:
    """Read ``id,lat,lon`` (haversine) or ``id,x_km,y_km`` (planar) CSV files."""
    import csv

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        if {"lat", "lon"} <= set(fields):
            keys, metric = ("lat", "lon"), HAVERSINE
        elif {"x_km", "y_km"} <= set(fields):
            keys, metric = ("x_km", "y_km"), PLANAR
        else:
            raise ValueError(f"unrecognized coordinate columns {fields}")
        rows = [(int(r["id"]), float(r[keys[0]]), float(r[keys[1]])) for r in reader]
    rows.sort()
    if [r[0] for r in rows] != list(range(len(rows))):
        raise ValueError("coordinate ids must be dense 0..K-1")
    return LocationModel([(a, b) for _, a, b in rows], metric)

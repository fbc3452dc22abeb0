"""Travel costs, the cost reference table (CRT) and cost-coefficient estimates.

Travel model: reaching target ``l`` from any location ``v`` costs the
straight-line access distance from ``v`` to its nearest fine node plus the
network shortest-path cost from that node to ``l``.  Targets are the fine
nodes, weighted by the prior ``q``.  Under this model the CRT estimates
bracket the exact coefficients with slack equal to the two snap distances.

Coefficients are ``p_i * sum_l q_l |tc(i, l) - tc(k, l)|``: the expected
travel-cost misestimate caused by reporting ``k`` instead of ``i``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from .geo import (GridSpec, LocationModel, LrSet, ObfRange, PLANAR,
                  grid_covering_radius)

_SNAP_SLACK = 1e-9


class CoverageError(ValueError):
    """A location snaps farther than the table's ``delta_max_km`` allows."""


@dataclass(frozen=True)
class TravelCostGraph:
    """Directed travel network over fine node ids ``0..n_nodes-1``."""

    n_nodes: int
    src: np.ndarray
    dst: np.ndarray
    cost_km: np.ndarray

    def __post_init__(self):
        if self.src.shape != self.dst.shape or self.src.shape != self.cost_km.shape:
            raise ValueError("edge arrays must have equal length")
        if self.src.size and (min(self.src.min(), self.dst.min()) < 0
                              or max(self.src.max(), self.dst.max()) >= self.n_nodes):
            raise ValueError("edge endpoint out of range")
        if np.any(~np.isfinite(self.cost_km)) or np.any(self.cost_km < 0):
            raise ValueError("edge costs must be finite and non-negative")

    def matrix(self) -> sp.csr_matrix:
        """Adjacency matrix keeping the cheapest of any parallel edges."""
        order = np.lexsort((self.cost_km, self.dst, self.src))
        s, d, c = self.src[order], self.dst[order], self.cost_km[order]
        keep = np.ones(s.size, dtype=bool)
        keep[1:] = (s[1:] != s[:-1]) | (d[1:] != d[:-1])
        return sp.csr_matrix((c[keep], (s[keep], d[keep])),
                             shape=(self.n_nodes, self.n_nodes))


def make_travel_graph(n_nodes, edges) -> TravelCostGraph:
    """``edges`` is an iterable of ``(src, dst, cost_km)``."""
    arr = np.array(list(edges), dtype=float).reshape(-1, 3)
    return TravelCostGraph(int(n_nodes), arr[:, 0].astype(int), arr[:, 1].astype(int),
                           arr[:, 2].copy())


def grid_travel_graph(grid: GridSpec) -> TravelCostGraph:
    """Orthogonal neighbors in both directions, each edge costing one cell size."""
    ids = np.arange(grid.rows * grid.cols).reshape(grid.rows, grid.cols)
    pairs = [np.column_stack([ids[:, :-1].ravel(), ids[:, 1:].ravel()]),
             np.column_stack([ids[:-1, :].ravel(), ids[1:, :].ravel()])]
    e = np.vstack(pairs)
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    return TravelCostGraph(grid.rows * grid.cols, src, dst,
                           np.full(src.size, float(grid.cell_size_km)))


def road_grid_travel_graph(grid: GridSpec, arterial_every: int = 5,
                           local_factor: float = 3.0) -> TravelCostGraph:
    """Grid network with fast arterials and slow local streets.

    Edges on every ``arterial_every``-th row or column cost one cell size;
    all other edges cost ``local_factor`` cell sizes.  A stand-in for a road
    map where travel costs are not a fixed multiple of straight-line distance.
    """
    g = grid_travel_graph(grid)
    r_src, c_src = np.divmod(g.src, grid.cols)
    r_dst, c_dst = np.divmod(g.dst, grid.cols)
    horizontal = r_src == r_dst
    on_arterial = np.where(horizontal, r_src % arterial_every == 0, c_src % arterial_every == 0)
    cost = g.cost_km * np.where(on_arterial, 1.0, local_factor)
    return TravelCostGraph(g.n_nodes, g.src, g.dst, cost)


def read_travel_csv(path, n_nodes: int) -> TravelCostGraph:
    with open(path, newline="") as fh:
        rows = [(int(r["src"]), int(r["dst"]), float(r["cost_km"]))
                for r in csv.DictReader(fh)]
    return make_travel_graph(n_nodes, rows)


def travel_cost_matrix(travel: TravelCostGraph) -> np.ndarray:
    """All-pairs network costs ``T[u, l]``; raises if some pair is unreachable."""
    t = dijkstra(travel.matrix(), directed=True)
    if not np.all(np.isfinite(t)):
        u, l = np.argwhere(~np.isfinite(t))[0]
        raise ValueError(f"travel graph is disconnected: no path {u} -> {l}")
    return t


def _check_prob(v, n, name):
    v = np.asarray(v, dtype=float).ravel()
    if v.size != n:
        raise ValueError(f"{name} has length {v.size}, expected {n}")
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite and non-negative")
    if abs(v.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} sums to {v.sum():.12g}, not 1")
    return v


@dataclass(frozen=True)
class PriorDistributions:
    """``p`` over real (coarse) locations, ``q`` over targets (fine nodes)."""

    p: np.ndarray
    q: np.ndarray

    @classmethod
    def uniform(cls, n_coarse: int, n_fine: int) -> "PriorDistributions":
        return cls(np.full(n_coarse, 1.0 / n_coarse), np.full(n_fine, 1.0 / n_fine))

    def validated(self, n_coarse: int, n_fine: int) -> "PriorDistributions":
        return PriorDistributions(_check_prob(self.p, n_coarse, "p"),
                                  _check_prob(self.q, n_fine, "q"))


def beta_matrix(tc_rows: np.ndarray, tc_cols: np.ndarray, q: np.ndarray,
                chunk: Optional[int] = None) -> np.ndarray:
    """``out[a, b] = sum_l q_l |tc_rows[a, l] - tc_cols[b, l]|``.

    ``chunk`` rows are processed at once; by default sized to keep the
    temporary block near 16M doubles.
    """
    out = np.empty((tc_rows.shape[0], tc_cols.shape[0]))
    if chunk is None:
        chunk = max(1, int(2 ** 24 // max(1, tc_cols.shape[0] * tc_cols.shape[1])))
    for s in range(0, tc_rows.shape[0], chunk):
        block = tc_rows[s:s + chunk, None, :] - tc_cols[None, :, :]
        out[s:s + chunk] = np.abs(block) @ q
    return out


@dataclass(frozen=True)
class CostReferenceTable:
    """Expected estimation errors ``beta`` between fine nodes.

    ``fine_ids`` are the nodes' ids in the full table (a subtable served for
    a request keeps its original ids).  ``tc_max_km`` is the largest network
    cost, published so clients can bound coefficients the table does not cover.
    """

    fine_model: LocationModel
    beta: np.ndarray
    delta_max_km: float
    tc_max_km: float
    fine_ids: np.ndarray

    @property
    def size(self) -> int:
        return self.beta.shape[0]

    def subtable(self, anchor_coord, radius_km: float) -> "CostReferenceTable":
        """Entries for fine nodes within ``radius_km + delta_max_km`` of the anchor."""
        d = self.fine_model.distance_to_points([anchor_coord])[0]
        keep = np.flatnonzero(d <= radius_km + self.delta_max_km + _SNAP_SLACK)
        sub = LocationModel(self.fine_model.coords[keep], self.fine_model.metric)
        return CostReferenceTable(sub, self.beta[np.ix_(keep, keep)], self.delta_max_km,
                                  self.tc_max_km, self.fine_ids[keep])


def build_crt(fine_model: LocationModel, travel: Optional[TravelCostGraph] = None,
              q=None, coarse_model: Optional[LocationModel] = None,
              delta_max_km: Optional[float] = None) -> CostReferenceTable:
    """Build the table over ``fine_model``.

    :param travel: network over the fine nodes; defaults to the orthogonal
        grid network when ``fine_model`` is a grid.
    :param q: target prior over fine nodes, uniform by default.
    :param coarse_model: when given, ``delta_max_km`` is its exact largest
        snap distance; otherwise the fine grid's covering radius is used.
    """
    n = fine_model.K
    if travel is None:
        if fine_model.grid is None:
            raise ValueError("a travel graph is required for non-grid fine models")
        travel = grid_travel_graph(fine_model.grid)
    if travel.n_nodes != n:
        raise ValueError("travel graph must cover exactly the fine nodes")
    q = _check_prob(np.full(n, 1.0 / n) if q is None else q, n, "q")
    t = travel_cost_matrix(travel)
    beta = beta_matrix(t, t, q)
    if delta_max_km is None:
        if coarse_model is not None:
            delta_max_km = float(fine_model.distance_to_points(coarse_model.coords).min(axis=1).max())
        elif fine_model.grid is not None:
            delta_max_km = float(grid_covering_radius(fine_model.grid))
        else:
            raise ValueError("delta_max_km is needed for non-grid fine models")
    beta.setflags(write=False)
    return CostReferenceTable(fine_model, beta, float(delta_max_km), float(t.max()),
                              np.arange(n))


@dataclass(frozen=True)
class Snap:
    fine_index: np.ndarray  # index into the table that produced it
    distance_km: np.ndarray


def snap_to_table(crt: CostReferenceTable, coords) -> Snap:
    """Nearest table node for each coordinate (ties to the smaller id)."""
    d = crt.fine_model.distance_to_points(coords)
    idx = np.argmin(d, axis=1)
    dist = d[np.arange(idx.size), idx]
    return Snap(idx, dist)


def estimate_block(crt: CostReferenceTable, coarse_model: LocationModel,
                   rows, cols, p_rows) -> tuple:
    """Upper and lower estimates over ``rows x cols`` of coarse ids.

    :returns: ``(upper, lower, row_snap, col_snap)``
    :raises CoverageError: if any location snaps beyond ``delta_max_km``.
    """
    rows = np.asarray(rows, dtype=int)
    cols = np.asarray(cols, dtype=int)
    rs = snap_to_table(crt, coarse_model.coords[rows])
    cs = snap_to_table(crt, coarse_model.coords[cols])
    worst = max(rs.distance_km.max(initial=0.0), cs.distance_km.max(initial=0.0))
    if worst > crt.delta_max_km + _SNAP_SLACK:
        raise CoverageError(f"snap distance {worst:.6g} km exceeds delta_max "
                            f"{crt.delta_max_km:.6g} km")
    p = np.broadcast_to(np.asarray(p_rows, dtype=float), rows.shape)[:, None]
    b = crt.beta[np.ix_(rs.fine_index, cs.fine_index)]
    slack = rs.distance_km[:, None] + cs.distance_km[None, :]
    upper = p * (b + slack)
    lower = p * np.maximum(b - slack, 0.0)
    return upper, lower, rs, cs


@dataclass(frozen=True)
class CostMatrixEstimate:
    """Estimates over ``rows x cols``; ``snap`` maps coarse id -> (table id, km)."""

    rows: np.ndarray
    cols: np.ndarray
    upper: np.ndarray
    lower: np.ndarray
    snap: dict


def estimate_costs(crt: CostReferenceTable, lr: LrSet, obf: ObfRange,
                   coarse_model: LocationModel, p) -> CostMatrixEstimate:
    """Upper/lower cost estimates over ``N_m x O_m``.

    :param p: prior of each LR member (array aligned with ``lr.members``) or
        a full-length prior over coarse ids, or a scalar.
    """
    p = np.asarray(p, dtype=float)
    if p.ndim == 1 and p.size == coarse_model.K and p.size != len(lr.members):
        p = p[lr.members]
    upper, lower, rs, cs = estimate_block(crt, coarse_model, lr.members, obf.members, p)
    snap = {}
    for ids, s in ((lr.members, rs), (obf.members, cs)):
        for c, f, d in zip(ids, s.fine_index, s.distance_km):
            snap[int(c)] = (int(crt.fine_ids[f]), float(d))
    return CostMatrixEstimate(lr.members.copy(), obf.members.copy(), upper, lower, snap)


def request_range(lr: LrSet, r_obf_km: float, rng: np.random.Generator) -> tuple:
    """Random anchor from the LR set and the radius of the requested circle."""
    if len(lr.members) == 0:
        raise ValueError("empty LR set")
    anchor = int(lr.members[rng.integers(len(lr.members))])
    radius = max(2.0 * lr.gamma_lr_km, lr.gamma_lr_km + r_obf_km)
    return anchor, float(radius)


class ExactCostOracle:
    """Ground-truth coefficients; used by evaluation, never by clients."""

    def __init__(self, coarse_model: LocationModel, fine_model: LocationModel,
                 travel: Optional[TravelCostGraph] = None, p=None, q=None,
                 travel_costs: Optional[np.ndarray] = None):
        n = fine_model.K
        if travel_costs is None:
            if travel is None:
                if fine_model.grid is None:
                    raise ValueError("a travel graph is required for non-grid fine models")
                travel = grid_travel_graph(fine_model.grid)
            travel_costs = travel_cost_matrix(travel)
        self.q = _check_prob(np.full(n, 1.0 / n) if q is None else q, n, "q")
        k = coarse_model.K
        self.p = _check_prob(np.full(k, 1.0 / k) if p is None else p, k, "p")
        d = fine_model.distance_to_points(coarse_model.coords)
        self.snap = np.argmin(d, axis=1)
        self.access = d[np.arange(k), self.snap]
        self.tc = self.access[:, None] + travel_costs[self.snap]
        self.K = k

    def matrix(self, rows=None, cols=None) -> np.ndarray:
        r = np.arange(self.K) if rows is None else np.asarray(rows, dtype=int)
        c = np.arange(self.K) if cols is None else np.asarray(cols, dtype=int)
        out = beta_matrix(self.tc[r], self.tc[c], self.q)
        out[r[:, None] == c[None, :]] = 0.0
        return self.p[r][:, None] * out

    def cost(self, i: int, k: int) -> float:
        return float(self.matrix([i], [k])[0, 0])


def exact_cost(model: LocationModel, travel: Optional[TravelCostGraph], priors: PriorDistributions,
               i: int, k: int, fine_model: Optional[LocationModel] = None) -> float:
    """Exact coefficient for one pair; the fine set defaults to ``model`` itself."""
    fine = model if fine_model is None else fine_model
    return ExactCostOracle(model, fine, travel, priors.p, priors.q).cost(i, k)


def write_crt(crt: CostReferenceTable, csv_path, header_path, extra: Optional[dict] = None):
    """Persist as ``fine_i,fine_k,beta_km`` rows plus a JSON header."""
    import json

    n = crt.size
    with open(csv_path, "w", newline="") as fh:
        fh.write("fine_i,fine_k,beta_km\n")
        ids = crt.fine_ids
        for a in range(n):
            fh.writelines(f"{ids[a]},{ids[b]},{crt.beta[a, b]:.9f}\n" for b in range(n))
    header = {
        "n_fine": int(n),
        "metric": crt.fine_model.metric,
        "delta_max_km": round(crt.delta_max_km, 9),
        "tc_max_km": round(crt.tc_max_km, 9),
        "coords": [[round(float(a), 9), round(float(b), 9)] for a, b in crt.fine_model.coords],
    }
    g = crt.fine_model.grid
    if g is not None:
        header["grid"] = {"rows": g.rows, "cols": g.cols, "cell_size_km": g.cell_size_km,
                          "origin": list(g.origin)}
    if extra:
        header.update(extra)
    with open(header_path, "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_crt(csv_path, header_path) -> CostReferenceTable:
    import json

    with open(header_path) as fh:
        header = json.load(fh)
    n = header["n_fine"]
    grid = None
    if "grid" in header:
        g = header["grid"]
        grid = GridSpec(g["rows"], g["cols"], g["cell_size_km"], tuple(g["origin"]))
    model = LocationModel(header["coords"], header.get("metric", PLANAR), grid=grid)
    beta = np.zeros((n, n))
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    beta[data[:, 0].astype(int), data[:, 1].astype(int)] = data[:, 2]
    return CostReferenceTable(model, beta, float(header["delta_max_km"]),
                              float(header["tc_max_km"]), np.arange(n))

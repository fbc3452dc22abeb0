"""Mechanism pipelines: the multi-user LR mechanism and three baselines.

The multi-user pipeline is split along the client/server boundary:

* :func:`client_prepare` runs on the user's side with the public map, its
  real location and a table excerpt served by :func:`serve_crt_request`;
* :func:`server_solve` only ever sees :class:`CoefficientUpload` objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np
from scipy.special import lambertw

from . import benders
from .costs import (CostMatrixEstimate, CostReferenceTable, estimate_block, estimate_costs,
                    request_range)
from .formulation import (CoefficientUpload, IndicatorMatrix, ObfuscationMatrix, TAIL_EXPONENTIAL,
                          TAIL_NONE, assemble_clr, assemble_omg, build_indicator)
from .geo import (DIST_TOL, GeoIndGraph, LocationModel, LrSet, ObfRange, PLANAR, _KM_PER_DEG_LAT,
                  lr_set, obf_range)
from .lp import OPTIMAL, solve

__all__ = [
    "MechanismConfig", "CoefficientUpload", "PreparedClient", "client_prepare",
    "serve_crt_request", "server_solve", "run_lr_geo", "run_full_lp", "run_laplace",
    "laplace_matrix", "run_expmech", "sample",
]


@dataclass
class MechanismConfig:
    """Shared mechanism settings; distances in km, ``epsilon_per_km`` in 1/km."""

    epsilon_per_km: float = 10.0
    gamma_km: float = 0.45
    gamma_lr_km: float = 0.9
    r_obf_km: float = 0.9
    r_exp_km: float = 0.45
    tail: str = TAIL_EXPONENTIAL
    seed: int = 0
    convergence_margin_km: float = benders.DEFAULT_MARGIN_KM
    max_iters: int = 500

    def __post_init__(self):
        if not self.epsilon_per_km > 0:
            raise ValueError("epsilon must be positive")
        if not self.gamma_km > 0:
            raise ValueError("gamma must be positive")
        if not self.gamma_km < self.gamma_lr_km:
            raise ValueError("the LR threshold must exceed the neighbor threshold")
        if not 0 <= self.r_exp_km <= self.r_obf_km:
            raise ValueError("need 0 <= r_exp <= r_obf")
        if self.tail not in (TAIL_EXPONENTIAL, TAIL_NONE):
            raise ValueError(f"unknown tail handling {self.tail!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PreparedClient:
    """Client-side state; only ``upload`` is ever handed to the server."""

    upload: CoefficientUpload
    lr: LrSet
    obf: ObfRange
    indicator: IndicatorMatrix
    estimate: CostMatrixEstimate
    anchor: int
    radius_km: float

    @property
    def row_ids(self) -> np.ndarray:
        return self.lr.members


def serve_crt_request(crt: CostReferenceTable, model: LocationModel, anchor: int,
                      radius_km: float) -> CostReferenceTable:
    """Server answer to a request circle: the table restricted to that circle."""
    return crt.subtable(model.coords[anchor], radius_km)


def client_prepare(model: LocationModel, graph: GeoIndGraph, crt: CostReferenceTable,
                   real_location: int, config: MechanismConfig, rng: np.random.Generator,
                   p=None) -> PreparedClient:
    """Compute the LR set, obfuscation range and cost estimates for one user.

    :param p: prior over locations (defaults to uniform).
    """
    if not 0 <= real_location < model.K:
        raise IndexError(f"location {real_location} not in model")
    p = np.full(model.K, 1.0 / model.K) if p is None else np.asarray(p, dtype=float)
    lr = lr_set(graph, real_location, config.gamma_lr_km)
    obf = obf_range(model, real_location, config.r_obf_km)
    anchor, radius = request_range(lr, config.r_obf_km, rng)
    table = serve_crt_request(crt, model, anchor, radius)
    est = estimate_costs(table, lr, obf, model, p[lr.members])
    ind = build_indicator(lr, model, config.r_exp_km, config.r_obf_km, obf)
    rows = lr.members
    d_nn = model.distance_matrix(rows, rows).copy()
    d_no = model.distance_matrix(rows, obf.members).copy()
    if config.tail == TAIL_EXPONENTIAL:
        tail = np.setdiff1d(np.arange(model.K), obf.members)
        d_tail = np.minimum(model.distance_matrix(rows, tail), config.r_obf_km)
        cap = p[rows][:, None] * (crt.tc_max_km + crt.delta_max_km)
        c_tail = np.broadcast_to(cap, d_tail.shape).copy()
        covered = tail[model.distances_from(anchor, tail) <= radius + DIST_TOL]
        if covered.size:
            up, _, _, _ = estimate_block(table, model, rows, covered, p[rows])
            pos = np.searchsorted(tail, covered)
            c_tail[:, pos] = np.minimum(up, c_tail[:, pos])
    else:
        d_tail = np.zeros((0, 0))
        c_tail = np.zeros((0, 0))
    upload = CoefficientUpload(d_nn, d_no, est.upper.copy(), obf.members.copy(),
                               ind.q_flags.copy(), d_tail, c_tail, (anchor, radius))
    return PreparedClient(upload, lr, obf, ind, est, anchor, radius)


def server_solve(uploads: Sequence[CoefficientUpload], n_locations: int,
                 config: MechanismConfig, workers: int = 1):
    """Assemble and solve the multi-user problem from uploads alone.

    :returns: ``(problem, matrices indexed by local rows, BendersState)``
    """
    problem = assemble_clr(uploads, config.epsilon_per_km, n_locations, config.gamma_km,
                           config.r_obf_km)
    mats, state = benders.run(problem, config.convergence_margin_km, config.max_iters,
                              workers=workers)
    return problem, mats, state


@dataclass
class LrGeoResult:
    matrices: list
    state: benders.BendersState
    problem: object
    clients: list
    info: dict = field(default_factory=dict)


def run_lr_geo(users: Sequence[int], config: MechanismConfig, model: LocationModel,
               graph: GeoIndGraph, crt: CostReferenceTable, p=None,
               rng: Optional[np.random.Generator] = None, workers: int = 1) -> LrGeoResult:
    """Full pipeline for users at ``users`` (real location ids).

    Returned matrices are re-indexed to global row ids on the client side.
    """
    if len(users) == 0:
        raise ValueError("at least one user is required")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    clients = [client_prepare(model, graph, crt, int(u), config, rng, p) for u in users]
    problem, mats, state = server_solve([c.upload for c in clients], model.K, config, workers)
    for mat, cl in zip(mats, clients):
        mat.row_ids = cl.row_ids.copy()
    return LrGeoResult(mats, state, problem, clients)


# ---------------------------------------------------------------------------
# Baselines

def run_full_lp(model: LocationModel, graph: GeoIndGraph, cost: np.ndarray,
                epsilon: float) -> ObfuscationMatrix:
    """Optimal matrix over all locations with Geo-Ind on every graph edge."""
    inst = assemble_omg(model, graph, cost, epsilon)
    out = solve(inst)
    if out.status != OPTIMAL:
        raise RuntimeError(f"full LP is {out.status}")
    z = np.maximum(out.primal.reshape(model.K, model.K), 0.0)
    z /= z.sum(axis=1, keepdims=True)
    return ObfuscationMatrix(-1, np.arange(model.K), z,
                             diagnostics={"objective": out.objective_value})


def polar_laplace_radius(u: np.ndarray, epsilon: float) -> np.ndarray:
    """Inverse CDF of the radial part, ``C(r) = 1 - (1 + eps r) exp(-eps r)``."""
    w = lambertw((np.asarray(u) - 1.0) / np.e, k=-1).real
    return -(w + 1.0) / epsilon


def _displace(model: LocationModel, origin, radius, theta):
    dx = radius * np.cos(theta)
    dy = radius * np.sin(theta)
    if model.metric == PLANAR:
        return np.column_stack([origin[0] + dx, origin[1] + dy])
    lat = origin[0] + dy / _KM_PER_DEG_LAT
    lon = origin[1] + dx / (_KM_PER_DEG_LAT * np.cos(np.radians(origin[0])))
    return np.column_stack([lat, lon])


def _outside_region(model: LocationModel, pts: np.ndarray) -> np.ndarray:
    g = model.grid
    if g is None or model.metric != PLANAR:
        lo = model.coords.min(axis=0)
        hi = model.coords.max(axis=0)
        return np.any((pts < lo) | (pts > hi), axis=1)
    x0, y0 = g.origin
    return ((pts[:, 0] < x0) | (pts[:, 0] > x0 + g.cols * g.cell_size_km)
            | (pts[:, 1] < y0) | (pts[:, 1] > y0 + g.rows * g.cell_size_km))


def laplace_draws(model: LocationModel, real_location: int, epsilon: float,
                  rng: np.random.Generator, size: int = 1) -> tuple:
    """``size`` snapped draws and the fraction that fell outside the region."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    theta = rng.uniform(0.0, 2.0 * np.pi, size)
    r = polar_laplace_radius(rng.uniform(0.0, 1.0, size), epsilon)
    pts = _displace(model, model.coords[real_location], r, theta)
    out_rate = float(_outside_region(model, pts).mean()) if size else 0.0
    ids = np.empty(size, dtype=int)
    for s in range(0, size, 4096):
        ids[s:s + 4096] = model.nearest(pts[s:s + 4096])
    return ids, out_rate


def run_laplace(model: LocationModel, real_location: int, epsilon: float,
                rng: np.random.Generator) -> int:
    """One polar-Laplace report snapped to the nearest location."""
    ids, _ = laplace_draws(model, real_location, epsilon, rng, 1)
    return int(ids[0])


def laplace_matrix(model: LocationModel, rows, epsilon: float, rng: np.random.Generator,
                   n_samples: int = 20000) -> ObfuscationMatrix:
    """Monte-Carlo estimate of the snapped polar-Laplace rows."""
    rows = np.asarray(rows, dtype=int)
    z = np.zeros((rows.size, model.K))
    rates = []
    for r, loc in enumerate(rows):
        ids, rate = laplace_draws(model, int(loc), epsilon, rng, n_samples)
        z[r] = np.bincount(ids, minlength=model.K) / n_samples
        rates.append(rate)
    return ObfuscationMatrix(-1, rows, z, diagnostics={"outside_rate": float(np.mean(rates)),
                                                       "n_samples": n_samples})


def run_expmech(model: LocationModel, cost_row, epsilon: float) -> np.ndarray:
    """Probabilities proportional to ``exp(-eps * cost / 2)``."""
    c = np.asarray(cost_row, dtype=float).ravel()
    if c.size != model.K:
        raise ValueError("cost row must have one entry per location")
    if np.any(np.isnan(c)) or np.all(np.isinf(c)):
        raise ValueError("cost row must contain a finite value and no NaN")
    s = -epsilon * c / 2.0
    s -= s[np.isfinite(s)].max()
    w = np.exp(s)
    return w / w.sum()


def sample(matrix: ObfuscationMatrix, real_location: int, rng: np.random.Generator,
           size: Optional[int] = None):
    """Categorical draw(s) from the row of ``real_location``."""
    row = matrix.row(real_location)
    row = np.maximum(row, 0.0)
    return rng.choice(row.size, size=size, p=row / row.sum())

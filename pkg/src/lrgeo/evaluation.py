"""Metrics: expected cost, Geo-Ind violation audit, cost bounds, table-matching counts."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .costs import CostReferenceTable, ExactCostOracle, estimate_block
from .formulation import ObfuscationMatrix
from .geo import DIST_TOL, LocationModel
from .lp import EQ, LE, OPTIMAL, LpInstance, solve

GV_TOL = 1e-9


def _cost_rows(cost, row_ids, K):
    if isinstance(cost, ExactCostOracle):
        return cost.matrix(row_ids, np.arange(K))
    cost = np.asarray(cost, dtype=float)
    if cost.shape[1] != K:
        raise ValueError(f"cost has {cost.shape[1]} columns, matrix has {K}")
    return cost[np.asarray(row_ids, dtype=int)]


def expected_cost(matrix: ObfuscationMatrix, cost, rows=None) -> float:
    """``sum_i sum_k c[i, k] z[i, k]`` over the matrix rows (or a subset of ids).

    :param cost: full ``K x K`` exact cost matrix or an :class:`ExactCostOracle`.
    """
    K = matrix.probs.shape[1]
    if rows is None:
        ids, z = matrix.row_ids, matrix.probs
    else:
        ids = np.asarray(rows, dtype=int)
        z = np.vstack([matrix.row(i) for i in ids]) if ids.size else np.zeros((0, K))
    c = _cost_rows(cost, ids, K)
    if c.shape != z.shape:
        raise ValueError("cost and matrix dimensions differ")
    return float(np.sum(c * z))


@dataclass
class PrivacyReport:
    gv_ratio: float
    gve_samples: np.ndarray
    n_checked: int
    n_violations: int
    cross_checked: int = 0
    cross_violations: int = 0
    prop_bound_pairwise: dict = field(default_factory=dict)
    prop_bound_global: Optional[float] = None

    @property
    def cross_gv_ratio(self) -> float:
        return self.cross_violations / self.cross_checked if self.cross_checked else 0.0

    @property
    def max_gve(self) -> float:
        return float(self.gve_samples.max()) if self.gve_samples.size else 0.0


def gv_audit(matrices: Sequence[ObfuscationMatrix], model: LocationModel, epsilon: float,
             gamma_km: float, tol: float = GV_TOL) -> PrivacyReport:
    """Check ``z_ik <= exp(eps d_ij) z_jk`` for every ordered pair of rows within ``gamma_km``.

    Rows from all matrices are pooled; two rows of different users at the
    same location form a pair at distance 0.
    """
    owners = np.concatenate([np.full(len(m.row_ids), n) for n, m in enumerate(matrices)])
    locs = np.concatenate([np.asarray(m.row_ids, dtype=int) for m in matrices])
    z = np.vstack([m.probs for m in matrices])
    K = z.shape[1]
    d = model.distance_matrix(locs, locs)
    a, b = np.nonzero((d <= gamma_km + DIST_TOL) & ~np.eye(locs.size, dtype=bool))
    n_viol = cross_viol = cross_pairs = 0
    gve = []
    for s in range(0, a.size, 2048):
        aa, bb = a[s:s + 2048], b[s:s + 2048]
        diff = z[aa] - np.exp(epsilon * d[aa, bb])[:, None] * z[bb]
        bad = diff > tol
        n_viol += int(bad.sum())
        cross = owners[aa] != owners[bb]
        cross_pairs += int(cross.sum())
        cross_viol += int(bad[cross].sum())
        gve.append(diff[bad])
    checked = a.size * K
    gve = np.concatenate(gve) if gve else np.zeros(0)
    rep = PrivacyReport(n_viol / checked if checked else 0.0, gve, checked, n_viol,
                        cross_pairs * K, cross_viol)
    if all(m.tied is not None for m in matrices):
        rep.prop_bound_pairwise, rep.prop_bound_global = violation_bounds(
            [m.tied for m in matrices])
    return rep


def violation_bounds(tied: Sequence[np.ndarray]) -> tuple:
    """Closed-form upper bounds on the violation ratio from tied-column overlaps.

    ``tied[m]`` is user ``m``'s boolean ``(|N_m|, K)`` mask of tied entries.
    Returns ``({(n, m): bound}, global_bound)``.
    """
    M = len(tied)
    K = tied[0].shape[1] if M else 0
    sizes = [t.shape[0] for t in tied]
    overlap = {}
    for n in range(M):
        for m in range(n + 1, M):
            overlap[(n, m)] = float((tied[n].astype(float) @ tied[m].T.astype(float)).sum())
    pairwise = {}
    for (n, m), ov in overlap.items():
        nn, nm = sizes[n], sizes[m]
        num = 2 * ov + (nn ** 2 + nm ** 2 - nn - nm) * K
        den = (nn + nm) * (nn + nm - 1) * K
        pairwise[(n, m)] = 1.0 - num / den
    total = sum(sizes)
    num = 2 * sum(overlap.values()) + sum(s * s - s for s in sizes) * K
    den = total * (total - 1) * K
    glob = 1.0 - num / den if den else 0.0
    return pairwise, glob


def relaxed_lower_problem(c_lower: np.ndarray, d_nn: np.ndarray, epsilon: float,
                          gamma_km: float) -> LpInstance:
    """LP over ``n x K`` entries: Geo-Ind within the rows plus unit measure, no ties."""
    n, K = c_lower.shape
    ks = np.arange(K)
    rr, cc, vv = [], [], []
    r = 0
    pi, pj = np.nonzero((d_nn <= gamma_km + DIST_TOL) & ~np.eye(n, dtype=bool))
    for i, j in zip(pi, pj):
        rid = r + ks
        rr += [rid, rid]
        cc += [i * K + ks, j * K + ks]
        vv += [np.ones(K), np.full(K, -np.exp(epsilon * d_nn[i, j]))]
        r += K
    n_geo = r
    rr.append(n_geo + np.repeat(np.arange(n), K))
    cc.append(np.arange(n * K))
    vv.append(np.ones(n * K))
    mat = sp.csr_matrix((np.concatenate(vv), (np.concatenate(rr), np.concatenate(cc))),
                        shape=(n_geo + n, n * K))
    senses = np.array([LE] * n_geo + [EQ] * n, dtype=object)
    rhs = np.concatenate([np.zeros(n_geo), np.ones(n)])
    return LpInstance(c_lower.ravel(), mat, senses, rhs, np.zeros(n * K), np.full(n * K, np.inf))


def lower_bound_user(crt: CostReferenceTable, model: LocationModel, rows, p, epsilon: float,
                     gamma_km: float) -> float:
    """Optimum of the relaxed problem for one LR set with lower cost estimates."""
    rows = np.asarray(rows, dtype=int)
    p = np.asarray(p, dtype=float)
    if p.ndim == 1 and p.size == model.K:
        p = p[rows]
    _, lower, _, _ = estimate_block(crt, model, rows, np.arange(model.K), p)
    inst = relaxed_lower_problem(lower, model.distance_matrix(rows, rows), epsilon, gamma_km)
    out = solve(inst)
    if out.status != OPTIMAL:
        raise RuntimeError(f"relaxed lower-bound problem is {out.status}")
    return float(out.objective_value)


@dataclass
class CostReport:
    expected_cost_km: dict
    lower_bound_km: float
    upper_bound_km: float
    approximation_ratio: float
    per_user: list = field(default_factory=list)


def cost_bounds(result, model: LocationModel, crt: CostReferenceTable, oracle: ExactCostOracle,
                epsilon: float, gamma_km: float) -> CostReport:
    """Lower bound, achieved exact cost and upper bound for an LR-Geo result.

    ``result`` is what :func:`lrgeo.mechanisms.run_lr_geo` returns.  The
    upper bound is the estimated-cost objective of the produced matrices;
    the lower bound solves the relaxed problem with lower estimates over
    every column.
    """
    c_hats = [blk.c_hat for blk in result.problem.blocks]
    return cost_bounds_from(result.matrices, c_hats, model, crt, oracle, epsilon, gamma_km)


def cost_bounds_from(matrices: Sequence[ObfuscationMatrix], c_hats, model: LocationModel,
                     crt: CostReferenceTable, oracle: ExactCostOracle, epsilon: float,
                     gamma_km: float) -> CostReport:
    """Same as :func:`cost_bounds` from matrices and their ``(n, K)`` upper estimates."""
    lower = upper = achieved = 0.0
    per_user = []
    for m, (mat, c_hat) in enumerate(zip(matrices, c_hats)):
        lo = lower_bound_user(crt, model, mat.row_ids, oracle.p, epsilon, gamma_km)
        up = float(np.sum(np.asarray(c_hat) * mat.probs))
        ach = expected_cost(mat, oracle)
        per_user.append({"user": m, "lower_km": lo, "achieved_km": ach, "upper_km": up})
        lower += lo
        upper += up
        achieved += ach
    ratio = achieved / lower if lower > 0 else (1.0 if achieved == 0 else np.inf)
    return CostReport({"lr-geo": achieved}, lower, upper, ratio, per_user)


def attack_rows(crt: CostReferenceTable, c_hat_values, p, half_width_km: Optional[float] = None
                ) -> np.ndarray:
    """Number of table entries consistent with each uploaded coefficient.

    An entry matches ``c_hat`` when ``p * beta`` lies within
    ``c_hat +- p * half_width``; the default half width is ``2 * delta_max``.
    """
    c = np.asarray(c_hat_values, dtype=float).ravel()
    p = np.broadcast_to(np.asarray(p, dtype=float), c.shape)
    hw = 2.0 * crt.delta_max_km if half_width_km is None else float(half_width_km)
    beta = np.sort(crt.beta.ravel())
    # compare in beta units to keep a single sorted array
    lo = np.searchsorted(beta, c / p - hw, side="left")
    hi = np.searchsorted(beta, c / p + hw, side="right")
    return hi - lo


def mean_half_width(values) -> tuple:
    """Sample mean and 1.96 standard errors."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return float(v.mean()) if v.size else float("nan"), 0.0
    return float(v.mean()), float(1.96 * v.std(ddof=1) / np.sqrt(v.size))

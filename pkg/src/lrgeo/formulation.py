"""Assembly of the full obfuscation LP and of the multi-user block-ladder LP.

Multi-user problem
------------------
Each user uploads, for its LR set ``N`` (rows, local indices) and its
obfuscation range ``O`` (global column ids):

* pairwise distances between rows, row-to-column distances and estimated
  costs over ``N x O``,
* a flag per ``(i, k)`` saying whether the entry is *tied* to the shared
  variable ``y_k`` through ``z_ik = y_k * w_ik`` or left *free*,
* for the tail columns outside ``O`` (always tied) the distances truncated
  at ``r_obf`` and upper cost estimates.

The tie weight is ``w_ik = exp(-eps * min(d_ik, r_obf) / 2)``.  It is
``eps/2``-Lipschitz in the row location, so any two tied entries of a
column satisfy Geo-Ind for every pair of rows, across users as well.

With ``z'`` the free entries, every user block reads ``A z' + B y >= b``
(Geo-Ind rows and the unit-measure equality split into two inequalities),
and the objective is ``alpha . y + sum_m c'_m . z'_m``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path

from .geo import DIST_TOL, GeoIndGraph, LocationModel, LrSet, ObfRange
from .lp import GE, EQ, LE, LpInstance

ROW_GEO, ROW_UNIT_UP, ROW_UNIT_DOWN = "geo", "unit>=", "unit<="
TAIL_EXPONENTIAL, TAIL_NONE = "exponential", "none"


# ---------------------------------------------------------------------------
# Full LP over all K x K entries

def omg_var(i, k, K):
    return i * K + k


def assemble_omg(model: LocationModel, graph: GeoIndGraph, cost: np.ndarray,
                 epsilon: float) -> LpInstance:
    """LP over all ``K*K`` entries with Geo-Ind rows on every graph edge."""
    K = model.K
    cost = np.asarray(cost, dtype=float)
    if cost.shape != (K, K):
        raise ValueError(f"cost must be {K}x{K}, got {cost.shape}")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    e = graph.edge_array()
    ks = np.arange(K)
    rows, cols, vals = [], [], []
    r = 0
    for i, j, d in e:
        i, j = int(i), int(j)
        f = np.exp(epsilon * d)
        for a, b in ((i, j), (j, i)):
            rid = r + ks
            rows += [rid, rid]
            cols += [a * K + ks, b * K + ks]
            vals += [np.ones(K), np.full(K, -f)]
            r += K
    n_geo = r
    rid = n_geo + np.repeat(ks, K)
    rows.append(rid)
    cols.append(np.arange(K * K))
    vals.append(np.ones(K * K))
    nrows = n_geo + K
    if rows:
        mat = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(nrows, K * K))
    else:
        mat = sp.csr_matrix((nrows, K * K))
    senses = np.array([LE] * n_geo + [EQ] * K, dtype=object)
    rhs = np.concatenate([np.zeros(n_geo), np.ones(K)])
    return LpInstance(cost.ravel(), mat, senses, rhs, np.zeros(K * K), np.full(K * K, np.inf))


# ---------------------------------------------------------------------------
# Client-side pieces

@dataclass(frozen=True)
class IndicatorMatrix:
    """``q_flags[i, c]`` is True when entry (LR row i, range column c) is tied."""

    q_flags: np.ndarray
    r_exp_km: float


def build_indicator(lr: LrSet, model: LocationModel, r_exp_km: float, r_obf_km: float,
                    obf: Optional[ObfRange] = None) -> IndicatorMatrix:
    """Tie every entry farther than ``r_exp_km``; ``r_exp_km = 0`` ties all entries."""
    if r_exp_km < 0 or r_exp_km > r_obf_km:
        raise ValueError("need 0 <= r_exp_km <= r_obf_km")
    if obf is None:
        from .geo import obf_range
        obf = obf_range(model, lr.center, r_obf_km)
    d = model.distance_matrix(lr.members, obf.members)
    if r_exp_km == 0:
        # fully exponential: the distance-0 entries are tied as well
        return IndicatorMatrix(np.ones_like(d, dtype=bool), 0.0)
    return IndicatorMatrix(d > r_exp_km + DIST_TOL, float(r_exp_km))


@dataclass
class CoefficientUpload:
    """What a client sends to the server.  Rows are local indices ``0..n-1``.

    ``obf_ids`` are global ids of the range columns; ``d_tail``/``c_tail``
    cover the remaining columns in increasing id order (distances already
    truncated at ``r_obf``).  Empty tail arrays mean the tail carries no mass.
    """

    d_nn: np.ndarray
    d_no: np.ndarray
    c_hat: np.ndarray
    obf_ids: np.ndarray
    q_flags: np.ndarray
    d_tail: np.ndarray
    c_tail: np.ndarray
    request_circle: tuple

    def __post_init__(self):
        n = self.d_nn.shape[0]
        if self.d_nn.shape != (n, n):
            raise ValueError("d_nn must be square")
        if not np.allclose(self.d_nn, self.d_nn.T) or np.any(np.diag(self.d_nn) != 0):
            raise ValueError("d_nn must be symmetric with zero diagonal")
        o = len(self.obf_ids)
        for name in ("d_no", "c_hat", "q_flags"):
            if getattr(self, name).shape != (n, o):
                raise ValueError(f"{name} must have shape {(n, o)}")
        if self.d_tail.shape != self.c_tail.shape or self.d_tail.shape[0] not in (0, n):
            raise ValueError("tail arrays must be aligned with the rows")

    @property
    def n_rows(self) -> int:
        return self.d_nn.shape[0]

    def to_dict(self) -> dict:
        """Serializable form; used to check nothing else leaves the client."""
        return {
            "d_nn": self.d_nn.tolist(), "d_no": self.d_no.tolist(),
            "c_hat": self.c_hat.tolist(), "obf_ids": [int(v) for v in self.obf_ids],
            "q_flags": self.q_flags.tolist(), "d_tail": self.d_tail.tolist(),
            "c_tail": self.c_tail.tolist(),
            "request_circle": [int(self.request_circle[0]), float(self.request_circle[1])],
        }


# ---------------------------------------------------------------------------
# Server-side block-ladder problem

@dataclass
class UserBlock:
    """One user's slice ``A z' + B y >= b`` of the block-ladder problem."""

    user: int
    n_rows: int
    free_mask: np.ndarray       # (n, K) bool
    free_index: np.ndarray      # (n_free, 2) row, global column
    tie_weight: np.ndarray      # (n, K); 0 where the entry carries no mass
    c_hat: np.ndarray           # (n, K) upper cost estimates (tail included)
    cost: np.ndarray            # c' over free entries
    A: sp.csr_matrix
    B: sp.csr_matrix
    b: np.ndarray
    row_kind: np.ndarray
    chain_factor: Optional[np.ndarray] = None   # (n, n) exp(eps * path distance) inside the LR set

    @property
    def n_free(self) -> int:
        return self.cost.size

    @property
    def n_constraints(self) -> int:
        return self.b.size

    def structural_rows(self) -> np.ndarray:
        """Rows with no free variable: pure constraints on ``y``."""
        return np.flatnonzero(np.diff(self.A.indptr) == 0)

    def rhs_at(self, y: np.ndarray) -> np.ndarray:
        """``b - B y``, the right-hand side of the subproblem at ``y``."""
        return self.b - self.B @ y


@dataclass
class ClrProblem:
    n_locations: int
    epsilon: float
    gamma_km: float
    r_obf_km: float
    alpha: np.ndarray
    blocks: list
    meta: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return len(self.blocks)

    @property
    def K(self) -> int:
        return self.n_locations

    def offsets(self) -> np.ndarray:
        """Start of each user's ``z'`` inside the direct-LP variable vector."""
        sizes = [blk.n_free for blk in self.blocks]
        return self.K + np.concatenate([[0], np.cumsum(sizes)]).astype(int)

    def direct_instance(self) -> LpInstance:
        """The whole problem as one LP over ``[y, z'_1, ..., z'_M]``."""
        K = self.K
        off = self.offsets()
        n = int(off[-1])
        c = np.concatenate([self.alpha] + [blk.cost for blk in self.blocks])
        mats, rhs = [], []
        for m, blk in enumerate(self.blocks):
            left = blk.B
            mid = blk.A
            parts = [left]
            if off[m] > K:
                parts.insert(1, sp.csr_matrix((blk.n_constraints, off[m] - K)))
            parts.append(mid)
            if n > off[m + 1]:
                parts.append(sp.csr_matrix((blk.n_constraints, n - off[m + 1])))
            mats.append(sp.hstack(parts, format="csr"))
            rhs.append(blk.b)
        mat = sp.vstack(mats, format="csr") if mats else sp.csr_matrix((0, n))
        b = np.concatenate(rhs) if rhs else np.zeros(0)
        return LpInstance(c, mat, np.full(b.size, GE, dtype=object), b,
                          np.zeros(n), np.full(n, np.inf))

    def split_solution(self, x: np.ndarray) -> tuple:
        """``(y, [z'_m])`` from a direct-LP variable vector."""
        off = self.offsets()
        return x[:self.K], [x[off[m]:off[m + 1]] for m in range(self.M)]

    def block_cost(self, m: int, z_free: np.ndarray) -> float:
        return float(self.blocks[m].cost @ z_free)

    def objective(self, y: np.ndarray, z_free: Sequence[np.ndarray]) -> float:
        return float(self.alpha @ y) + sum(self.block_cost(m, z) for m, z in enumerate(z_free))


def tie_weights(dist: np.ndarray, epsilon: float, r_obf_km: float) -> np.ndarray:
    return np.exp(-epsilon * np.minimum(dist, r_obf_km) / 2.0)


def _user_block(m: int, up: CoefficientUpload, K: int, epsilon: float, gamma_km: float,
                r_obf_km: float, emit_implied_rows: bool) -> tuple:
    n = up.n_rows
    obf = np.asarray(up.obf_ids, dtype=int)
    in_obf = np.zeros(K, dtype=bool)
    in_obf[obf] = True
    tail = np.flatnonzero(~in_obf)

    weight = np.zeros((n, K))
    c_hat = np.zeros((n, K))
    free = np.zeros((n, K), dtype=bool)
    weight[:, obf] = tie_weights(up.d_no, epsilon, r_obf_km)
    c_hat[:, obf] = up.c_hat
    free[:, obf] = ~np.asarray(up.q_flags, dtype=bool)
    if up.d_tail.size:
        if up.d_tail.shape[1] != tail.size:
            raise ValueError(f"user {m}: tail arrays cover {up.d_tail.shape[1]} columns, "
                             f"expected {tail.size}")
        weight[:, tail] = tie_weights(up.d_tail, epsilon, r_obf_km)
        c_hat[:, tail] = up.c_tail
    weight[free] = 0.0

    fr, fc = np.nonzero(free)
    var = -np.ones((n, K), dtype=int)
    var[fr, fc] = np.arange(fr.size)
    cost = c_hat[fr, fc].copy()
    alpha = (c_hat * weight).sum(axis=0)

    a_r, a_c, a_v = [], [], []
    b_r, b_c, b_v = [], [], []
    kinds = []
    r = 0
    pi, pj = np.nonzero((up.d_nn <= gamma_km + DIST_TOL) & ~np.eye(n, dtype=bool))
    for i, j in zip(pi, pj):
        f = np.exp(epsilon * up.d_nn[i, j])
        cols = np.arange(K) if emit_implied_rows else np.flatnonzero(free[i] | free[j])
        rid = r + np.arange(cols.size)
        # f * z_jk - z_ik >= 0
        fi = free[i, cols]
        fj = free[j, cols]
        a_r += [rid[fi], rid[fj]]
        a_c += [var[i, cols[fi]], var[j, cols[fj]]]
        a_v += [np.full(fi.sum(), -1.0), np.full(fj.sum(), f)]
        b_r += [rid[~fi], rid[~fj]]
        b_c += [cols[~fi], cols[~fj]]
        b_v += [-weight[i, cols[~fi]], f * weight[j, cols[~fj]]]
        r += cols.size
    n_geo = r
    kinds += [ROW_GEO] * n_geo
    for sgn, kind in ((1.0, ROW_UNIT_UP), (-1.0, ROW_UNIT_DOWN)):
        for i in range(n):
            fcols = np.flatnonzero(free[i])
            tcols = np.flatnonzero(weight[i] > 0)
            a_r.append(np.full(fcols.size, r))
            a_c.append(var[i, fcols])
            a_v.append(np.full(fcols.size, sgn))
            b_r.append(np.full(tcols.size, r))
            b_c.append(tcols)
            b_v.append(sgn * weight[i, tcols])
            kinds.append(kind)
            r += 1
    b = np.concatenate([np.zeros(n_geo), np.ones(n), -np.ones(n)])

    def build(rr, cc, vv, ncols):
        if rr:
            rr, cc, vv = np.concatenate(rr), np.concatenate(cc), np.concatenate(vv)
            keep = vv != 0
            return sp.csr_matrix((vv[keep], (rr[keep], cc[keep])), shape=(r, ncols))
        return sp.csr_matrix((r, ncols))

    hops = np.where((up.d_nn <= gamma_km + DIST_TOL) & ~np.eye(n, dtype=bool), up.d_nn, 0.0)
    path = shortest_path(sp.csr_matrix(hops), method="D", directed=False)
    with np.errstate(over="ignore"):
        chain = np.exp(epsilon * path)
    blk = UserBlock(m, n, free, np.column_stack([fr, fc]), weight, c_hat, cost,
                    build(a_r, a_c, a_v, fr.size), build(b_r, b_c, b_v, K), b,
                    np.array(kinds, dtype=object), chain)
    return blk, alpha


def assemble_clr(uploads: Sequence[CoefficientUpload], epsilon: float, n_locations: int,
                 gamma_km: float, r_obf_km: float, emit_implied_rows: bool = False) -> ClrProblem:
    """Block-ladder problem from client uploads only.

    :param emit_implied_rows: also emit Geo-Ind rows whose two entries are
        both tied.  Those rows hold for every ``y >= 0``; they are only useful
        for checking row counts against the full formulation.
    """
    if not uploads:
        raise ValueError("at least one user is required")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    alpha = np.zeros(n_locations)
    blocks = []
    for m, up in enumerate(uploads):
        if up.n_rows == 0:
            raise ValueError(f"user {m} has an empty LR set")
        blk, a = _user_block(m, up, n_locations, epsilon, gamma_km, r_obf_km, emit_implied_rows)
        alpha += a
        blocks.append(blk)
    return ClrProblem(n_locations, float(epsilon), float(gamma_km), float(r_obf_km),
                      alpha, blocks)


# ---------------------------------------------------------------------------
# Matrices

@dataclass
class ObfuscationMatrix:
    """Rows of an obfuscation matrix; ``probs[r]`` belongs to location ``row_ids[r]``.

    ``tied`` marks entries produced by the shared-variable tie (None for
    mechanisms without ties).
    """

    owner: int
    row_ids: np.ndarray
    probs: np.ndarray
    tied: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def rows(self) -> dict:
        return {int(i): self.probs[r] for r, i in enumerate(self.row_ids)}

    def row(self, location: int) -> np.ndarray:
        hit = np.flatnonzero(self.row_ids == location)
        if hit.size == 0:
            raise KeyError(f"no row for location {location}")
        return self.probs[hit[0]]


def extract_matrix(problem: ClrProblem, y: np.ndarray, z_free: np.ndarray, user: int,
                   row_ids: Optional[np.ndarray] = None, tol: float = 1e-6) -> ObfuscationMatrix:
    """Rebuild the user's rows from ``y`` and its free entries.

    ``row_ids`` (global ids of the LR rows) is known only to the client; the
    server-side result is indexed by local row number.
    """
    blk = problem.blocks[user]
    y = np.asarray(y, dtype=float)
    z_free = np.asarray(z_free, dtype=float)
    if y.size != problem.K or z_free.size != blk.n_free:
        raise ValueError("solution does not match the problem dimensions")
    if np.any(~np.isfinite(y)) or np.any(~np.isfinite(z_free)):
        raise ValueError("solution contains non-finite values")
    probs = blk.tie_weight * np.maximum(y, 0.0)[None, :]
    probs[blk.free_index[:, 0], blk.free_index[:, 1]] = np.maximum(z_free, 0.0)
    sums = probs.sum(axis=1)
    drift = np.abs(sums - 1.0)
    diag = {"max_row_drift": float(drift.max(initial=0.0)), "renormalized_rows": []}
    bad = np.flatnonzero(drift > tol)
    if bad.size:
        if np.any(sums[bad] <= 0):
            raise ValueError("solution leaves a row without probability mass")
        probs[bad] /= sums[bad, None]
        diag["renormalized_rows"] = [int(r) for r in bad]
    ids = np.arange(blk.n_rows) if row_ids is None else np.asarray(row_ids, dtype=int)
    tied = ~blk.free_mask & (blk.tie_weight > 0)
    return ObfuscationMatrix(user, ids, probs, tied, diag)

"""Linear-program solve contract shared by every other module.

All callers go through :func:`solve`.  The backend is the HiGHS solver
shipped with scipy; this module adds what the decomposition needs on top
of it:

* dual multipliers expressed as d(objective)/d(rhs) for every row,
  independent of the row's relation,
* an improving extreme ray for unbounded problems, synthesized from the
  homogenized recession LP because HiGHS does not return one,
* a plain-text export/import in the CPLEX LP subset, so instances can be
  cross-checked with external solvers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

LE, EQ, GE = "<=", "=", ">="
_SENSES = (LE, EQ, GE)


class MalformedInstanceError(ValueError):
    """Raised for NaN coefficients, shape mismatches or unknown relations."""


class SolverError(RuntimeError):
    """Raised when the backend reports a numerical failure."""


@dataclass
class LpInstance:
    """``min c.x`` subject to ``A x (sense) rhs`` and ``lower <= x <= upper``.

    ``matrix`` is stored as CSR.  ``senses`` holds one of ``"<="``, ``"="``
    or ``">="`` per row.
    """

    objective: np.ndarray
    matrix: sp.csr_matrix
    senses: np.ndarray
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float).ravel()
        n = self.objective.size
        m = len(self.rhs)
        if self.matrix is None:
            self.matrix = sp.csr_matrix((m, n))
        self.matrix = sp.csr_matrix(self.matrix, dtype=float)
        self.rhs = np.asarray(self.rhs, dtype=float).ravel()
        self.senses = np.asarray(self.senses, dtype=object).ravel()
        self.lower = np.asarray(self.lower, dtype=float).ravel()
        self.upper = np.asarray(self.upper, dtype=float).ravel()
        self.validate()

    @property
    def n_vars(self) -> int:
        return self.objective.size

    @property
    def n_rows(self) -> int:
        return self.rhs.size

    def validate(self) -> None:
        n = self.n_vars
        if self.matrix.shape != (self.rhs.size, n):
            raise MalformedInstanceError(
                f"matrix shape {self.matrix.shape} does not match "
                f"{self.rhs.size} rows x {n} variables")
        if self.senses.size != self.rhs.size:
            raise MalformedInstanceError("one relation per row is required")
        if self.lower.size != n or self.upper.size != n:
            raise MalformedInstanceError("bounds must have one entry per variable")
        bad = [s for s in self.senses if s not in _SENSES]
        if bad:
            raise MalformedInstanceError(f"unknown relation {bad[0]!r}")
        if not np.all(np.isfinite(self.objective)):
            raise MalformedInstanceError("objective has non-finite entries")
        if not np.all(np.isfinite(self.matrix.data)):
            raise MalformedInstanceError("constraint matrix has non-finite entries")
        if not np.all(np.isfinite(self.rhs)):
            raise MalformedInstanceError("rhs has non-finite entries")
        if np.any(np.isnan(self.lower)) or np.any(np.isnan(self.upper)):
            raise MalformedInstanceError("bounds contain NaN")
        if np.any(self.lower == np.inf) or np.any(self.upper == -np.inf):
            raise MalformedInstanceError("bounds are empty")


def make_instance(objective: Sequence[float],
                  rows: Iterable[tuple] = (),
                  bounds: Optional[Sequence[tuple]] = None) -> LpInstance:
    """Build an :class:`LpInstance` from dense row tuples.

    :param objective: cost vector to minimize.
    :param rows: iterable of ``(coefficients, relation, rhs)``.
    :param bounds: optional ``(lo, hi)`` per variable; ``None`` entries mean
        the default ``0`` / ``+inf``.
    """
    c = np.asarray(objective, dtype=float).ravel()
    n = c.size
    coeffs, senses, rhs = [], [], []
    for r in rows:
        a, s, b = r
        a = np.asarray(a, dtype=float).ravel()
        if a.size != n:
            raise MalformedInstanceError(
                f"row has {a.size} coefficients, expected {n}")
        coeffs.append(a)
        senses.append(s)
        rhs.append(b)
    mat = sp.csr_matrix(np.vstack(coeffs)) if coeffs else sp.csr_matrix((0, n))
    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    if bounds is not None:
        if len(bounds) != n:
            raise MalformedInstanceError("bounds must have one entry per variable")
        for j, (a, b) in enumerate(bounds):
            lo[j] = 0.0 if a is None else a
            hi[j] = np.inf if b is None else b
    return LpInstance(c, mat, np.array(senses, dtype=object),
                      np.array(rhs, dtype=float), lo, hi)


@dataclass
class LpOutcome:
    """Result of :func:`solve`.

    ``dual[r]`` is the sensitivity of the optimal value to ``rhs[r]``; for a
    minimization it is ``>= 0`` on ``>=`` rows and ``<= 0`` on ``<=`` rows.
    ``reduced`` holds the bound multipliers (``c - A^T dual``).
    """

    status: str
    primal: Optional[np.ndarray] = None
    dual: Optional[np.ndarray] = None
    reduced: Optional[np.ndarray] = None
    objective_value: Optional[float] = None
    certificate: Optional[np.ndarray] = None
    message: str = ""
    info: dict = field(default_factory=dict)


_HIGHS_OPTIONS = dict(primal_feasibility_tolerance=1e-10,
                      dual_feasibility_tolerance=1e-10)


def _split(inst: LpInstance):
    """Translate into linprog's ``A_ub x <= b_ub`` / ``A_eq x = b_eq`` form."""
    le = inst.senses == LE
    ge = inst.senses == GE
    eq = inst.senses == EQ
    ub_idx = np.flatnonzero(le | ge)
    eq_idx = np.flatnonzero(eq)
    sign = np.where(ge[ub_idx], -1.0, 1.0)
    a_ub = b_ub = a_eq = b_eq = None
    if ub_idx.size:
        a_ub = sp.diags(sign) @ inst.matrix[ub_idx]
        b_ub = sign * inst.rhs[ub_idx]
    if eq_idx.size:
        a_eq = inst.matrix[eq_idx]
        b_eq = inst.rhs[eq_idx]
    return a_ub, b_ub, a_eq, b_eq, ub_idx, eq_idx, sign


def _bounds(lower, upper):
    # linprog reads infinite entries as missing bounds
    return np.column_stack([np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)])


def _run(c, a_ub, b_ub, a_eq, b_eq, bounds):
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                  bounds=bounds, method="highs", options=_HIGHS_OPTIONS)
    if res.status == 4:
        # tight tolerances occasionally stall HiGHS; the defaults (1e-7) still
        # meet the contract after the primal check in solve()
        res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                      bounds=bounds, method="highs")
    return res


def recession_ray(inst: LpInstance) -> Optional[np.ndarray]:
    """Return a direction ``d`` with ``c.d < 0`` in the recession cone, or None.

    Solves ``min c.d`` over the homogenized constraints inside the box
    ``[-1, 1]^n``; a negative optimum certifies unboundedness whenever the
    original problem is feasible.
    """
    n = inst.n_vars
    lo = np.where(np.isfinite(inst.lower), 0.0, -1.0)
    hi = np.where(np.isfinite(inst.upper), 0.0, 1.0)
    zero = LpInstance(inst.objective, inst.matrix, inst.senses,
                      np.zeros(inst.n_rows), lo, hi)
    a_ub, b_ub, a_eq, b_eq, *_ = _split(zero)
    res = _run(zero.objective, a_ub, b_ub, a_eq, b_eq, _bounds(lo, hi))
    if res.status != 0 or res.fun >= -1e-12 * max(1.0, np.abs(inst.objective).max(initial=0.0)):
        return None
    d = np.asarray(res.x, dtype=float)
    d[np.abs(d) < 1e-13] = 0.0
    return d if n else None


def solve(inst: LpInstance, tol: float = 1e-9) -> LpOutcome:
    """Solve ``inst`` and return an :class:`LpOutcome`.

    :param tol: tolerance used when double-checking the returned primal.
    :raises SolverError: on numerical failure or iteration limits.
    """
    inst.validate()
    a_ub, b_ub, a_eq, b_eq, ub_idx, eq_idx, sign = _split(inst)
    bounds = _bounds(inst.lower, inst.upper)
    res = _run(inst.objective, a_ub, b_ub, a_eq, b_eq, bounds)

    if res.status == 0:
        dual = np.zeros(inst.n_rows)
        if ub_idx.size:
            dual[ub_idx] = sign * np.asarray(res.ineqlin.marginals)
        if eq_idx.size:
            dual[eq_idx] = np.asarray(res.eqlin.marginals)
        x = np.asarray(res.x, dtype=float)
        reduced = inst.objective - inst.matrix.T @ dual
        out = LpOutcome(OPTIMAL, primal=x, dual=dual, reduced=reduced,
                        objective_value=float(res.fun), message=res.message)
        out.info["max_violation"] = primal_violation(inst, x)
        if out.info["max_violation"] > max(tol, 1e-8) * 100:
            raise SolverError(
                f"backend primal violates constraints by {out.info['max_violation']:.3g}")
        return out
    if res.status == 3:
        return LpOutcome(UNBOUNDED, certificate=recession_ray(inst),
                         message=res.message)
    if res.status == 2:
        if "unbounded" not in str(res.message).lower():
            return LpOutcome(INFEASIBLE, message=res.message)
        # "infeasible or unbounded": settle it with a feasibility probe
        probe = _run(np.zeros(inst.n_vars), a_ub, b_ub, a_eq, b_eq, bounds)
        if probe.status == 0:
            return LpOutcome(UNBOUNDED, certificate=recession_ray(inst),
                             message=res.message)
        return LpOutcome(INFEASIBLE, message=res.message)
    raise SolverError(f"LP backend failed (status {res.status}): {res.message}")


def primal_violation(inst: LpInstance, x: np.ndarray) -> float:
    """Largest violation of rows or bounds by ``x`` (0 when feasible)."""
    ax = inst.matrix @ x
    viol = np.zeros(inst.n_rows)
    le = inst.senses == LE
    ge = inst.senses == GE
    eq = inst.senses == EQ
    viol[le] = np.maximum(ax[le] - inst.rhs[le], 0.0)
    viol[ge] = np.maximum(inst.rhs[ge] - ax[ge], 0.0)
    viol[eq] = np.abs(ax[eq] - inst.rhs[eq])
    bnd = np.maximum(inst.lower - x, 0.0)
    bnd = np.maximum(bnd, x - inst.upper)
    return float(max(viol.max(initial=0.0), bnd.max(initial=0.0)))


def dual_objective(inst: LpInstance, out: LpOutcome) -> float:
    """Dual objective ``rhs.dual + sum(bound * reduced)`` for an optimal outcome."""
    val = float(inst.rhs @ out.dual)
    r = out.reduced
    pos = r > 0
    neg = r < 0
    # a positive reduced cost sits at the lower bound, a negative one at the upper
    val += float(np.sum(np.where(pos, r * np.where(np.isfinite(inst.lower), inst.lower, 0.0), 0.0)))
    val += float(np.sum(np.where(neg, r * np.where(np.isfinite(inst.upper), inst.upper, 0.0), 0.0)))
    return val


# ---------------------------------------------------------------------------
# LP text format (CPLEX LP subset)

def _num(v: float) -> str:
    return f"{v:.17g}"


def _linear(coeffs: np.ndarray, cols: np.ndarray) -> str:
    if cols.size == 0:
        return "0 x0"
    parts = []
    for j, a in zip(cols, coeffs):
        s = _num(a)
        if parts:
            s = f"- {s[1:]}" if s.startswith("-") else f"+ {s}"
        parts.append(f"{s} x{j}")
    return " ".join(parts)


def to_lp_text(inst: LpInstance, name: str = "instance") -> str:
    """Serialize ``inst`` in CPLEX LP format with 17 significant digits."""
    lines = [f"\\ {name}", "Minimize"]
    nz = np.flatnonzero(inst.objective)
    lines.append(" obj: " + _linear(inst.objective[nz], nz))
    lines.append("Subject To")
    csr = inst.matrix.tocsr()
    csr.sort_indices()
    for r in range(inst.n_rows):
        lo, hi = csr.indptr[r], csr.indptr[r + 1]
        lhs = _linear(csr.data[lo:hi], csr.indices[lo:hi])
        lines.append(f" r{r}: {lhs} {inst.senses[r]} {_num(inst.rhs[r])}")
    lines.append("Bounds")
    for j in range(inst.n_vars):
        lo, hi = inst.lower[j], inst.upper[j]
        if lo == -np.inf and hi == np.inf:
            lines.append(f" x{j} free")
            continue
        los = "-inf" if lo == -np.inf else _num(lo)
        his = "+inf" if hi == np.inf else _num(hi)
        lines.append(f" {los} <= x{j} <= {his}")
    lines.append("End")
    return "\n".join(lines) + "\n"


_TERM = re.compile(r"([+-]?)\s*([0-9.eE+-]+)\s+x(\d+)")


def _parse_linear(text: str, n: int) -> dict:
    out: dict = {}
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _TERM.match(text, pos)
        if not m:
            raise MalformedInstanceError(f"cannot parse term near {text[pos:pos + 30]!r}")
        sgn = -1.0 if m.group(1) == "-" else 1.0
        j = int(m.group(3))
        out[j] = out.get(j, 0.0) + sgn * float(m.group(2))
        pos = m.end()
        while pos < len(text) and text[pos] == " ":
            pos += 1
    return out


def _bound_value(s: str) -> float:
    s = s.strip().lower()
    if s in ("-inf", "-infinity"):
        return -np.inf
    if s in ("+inf", "inf", "+infinity", "infinity"):
        return np.inf
    return float(s)


def from_lp_text(text: str) -> LpInstance:
    """Parse the subset written by :func:`to_lp_text`."""
    section = None
    obj_line = None
    rows = []
    bound_lines = []
    nmax = -1
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("\\"):
            continue
        low = line.lower()
        if low in ("minimize", "subject to", "bounds", "end"):
            section = low
            continue
        for j in re.findall(r"x(\d+)", line):
            nmax = max(nmax, int(j))
        if section == "minimize":
            obj_line = line.split(":", 1)[1]
        elif section == "subject to":
            body = line.split(":", 1)[1]
            m = re.match(r"(.*)\s(<=|>=|=)\s(\S+)$", body)
            if not m:
                raise MalformedInstanceError(f"bad row {line!r}")
            rows.append((m.group(1), m.group(2), float(m.group(3))))
        elif section == "bounds":
            bound_lines.append(line)
    n = nmax + 1
    c = np.zeros(n)
    for j, a in _parse_linear(obj_line or "", n).items():
        c[j] += a
    data, ri, ci, senses, rhs = [], [], [], [], []
    for r, (lhs, s, b) in enumerate(rows):
        for j, a in _parse_linear(lhs, n).items():
            if a != 0.0:
                data.append(a)
                ri.append(r)
                ci.append(j)
        senses.append(s)
        rhs.append(b)
    mat = sp.csr_matrix((data, (ri, ci)), shape=(len(rows), n))
    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    for line in bound_lines:
        m = re.match(r"x(\d+)\s+free$", line)
        if m:
            j = int(m.group(1))
            lo[j], hi[j] = -np.inf, np.inf
            continue
        m = re.match(r"(\S+)\s*<=\s*x(\d+)\s*<=\s*(\S+)$", line)
        if not m:
            raise MalformedInstanceError(f"bad bound {line!r}")
        j = int(m.group(2))
        lo[j] = _bound_value(m.group(1))
        hi[j] = _bound_value(m.group(3))
    return LpInstance(c, mat, np.array(senses, dtype=object), np.array(rhs), lo, hi)

"""Scenario orchestration and persistence behind the ``lrgeo`` subcommands.

A scenario is a JSON file holding a :class:`ScenarioConfig`.  Every run
directory gets a ``manifest.json`` with the full configuration and seeds, so
``cmd_evaluate`` can rebuild the map, table and exact costs deterministically
and recompute all metrics from the raw matrix files.

Run directory layout::

    manifest.json
    crt.csv, crt_header.json           (cmd_build_crt)
    matrices_<mechanism>.csv           user,row_loc,col_loc,prob
    coefficients_lr-geo.csv            user,row_loc,col_loc,c_hat_km,in_range
    trace_lr-geo.csv                   iter,lower_km,upper_km
    timing.csv                         mechanism,K,M,seconds
    metrics.json, metrics.csv          (cmd_evaluate)
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import benders
from .costs import (CostReferenceTable, ExactCostOracle, TravelCostGraph, build_crt,
                    grid_travel_graph, read_crt, read_travel_csv, road_grid_travel_graph,
                    write_crt)
from .evaluation import (attack_rows, cost_bounds_from, expected_cost, gv_audit,
                         mean_half_width)
from .formulation import TAIL_EXPONENTIAL, ObfuscationMatrix
from .geo import (DIST_TOL, PLANAR, GeoIndGraph, GridSpec, LocationModel, build_geoind_graph, build_location_model,
                  grid_covering_radius, read_coordinates_csv)
from .mechanisms import (MechanismConfig, laplace_matrix, run_expmech, run_full_lp, run_lr_geo)

log = logging.getLogger(__name__)

MECHANISMS = ("lr-geo", "full-lp", "laplace", "expmech")
PLACEMENTS = ("uniform", "fixed")
NETWORKS = ("grid", "road", "csv")
SWEEP_PARAMS = ("gamma_lr_km", "crt_cell_km", "n_users", "grid_size")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    """A module error re-raised with the pipeline stage that produced it."""

    def __init__(self, stage: str, err: Exception):
        super().__init__(f"{stage}: {type(err).__name__}: {err}")
        self.stage = stage
        self.__cause__ = err


@dataclass
class ScenarioConfig:
    """Everything a run needs; distances in km.

    The coarse map is a ``grid_rows x grid_cols`` grid of ``cell_km`` cells
    unless ``coords_csv`` is given.  The table and the exact costs use a
    fine grid of ``crt_cell_km`` cells over the same region, with travel
    over ``network`` (orthogonal grid, arterial road grid, or ``travel_csv``
    edges over the fine nodes of ``fine_coords_csv``).
    """

    grid_rows: int = 10
    grid_cols: int = 10
    cell_km: float = 0.3
    coords_csv: Optional[str] = None
    crt_cell_km: float = 0.1
    network: str = "road"
    arterial_every: int = 5
    local_factor: float = 3.0
    fine_coords_csv: Optional[str] = None
    travel_csv: Optional[str] = None
    mechanisms: list = field(default_factory=lambda: ["lr-geo", "laplace", "expmech"])
    mechanism: MechanismConfig = field(default_factory=MechanismConfig)
    n_users: int = 2
    placement: str = "uniform"
    user_ids: list = field(default_factory=list)
    seed: int = 0
    laplace_samples: int = 20000
    workers: int = 1
    out_dir: str = "runs/default"

    def __post_init__(self):
        if isinstance(self.mechanism, dict):
            self.mechanism = MechanismConfig(**self.mechanism)
        self.validate()

    def validate(self) -> None:
        bad = [m for m in self.mechanisms if m not in MECHANISMS]
        if bad:
            raise ConfigError(f"unknown mechanism(s) {bad}; choose from {list(MECHANISMS)}")
        if not self.mechanisms:
            raise ConfigError("no mechanism selected")
        if self.placement not in PLACEMENTS:
            raise ConfigError(f"unknown placement {self.placement!r}")
        if self.placement == "fixed" and len(self.user_ids) != self.n_users:
            raise ConfigError("fixed placement needs exactly n_users ids")
        if self.network not in NETWORKS:
            raise ConfigError(f"unknown network {self.network!r}")
        if self.network == "csv" and not (self.travel_csv and self.fine_coords_csv):
            raise ConfigError("network 'csv' needs travel_csv and fine_coords_csv")
        for name in ("coords_csv", "fine_coords_csv", "travel_csv"):
            path = getattr(self, name)
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"{name} {path!r} does not exist")
        if self.n_users < 1:
            raise ConfigError("n_users must be at least 1")
        if not (self.cell_km > 0 and self.crt_cell_km > 0):
            raise ConfigError("cell sizes must be positive")
        if self.laplace_samples < 1:
            raise ConfigError("laplace_samples must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mechanism"] = self.mechanism.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown configuration keys {sorted(extra)}")
        try:
            return cls(**d)
        except TypeError as err:
            raise ConfigError(str(err)) from err

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def with_overrides(self, seed=None, out_dir=None, margin_km=None) -> "ScenarioConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=int(seed), mechanism=replace(cfg.mechanism, seed=int(seed)))
        if out_dir is not None:
            cfg = replace(cfg, out_dir=str(out_dir))
        if margin_km is not None:
            cfg = replace(cfg, mechanism=replace(cfg.mechanism,
                                                 convergence_margin_km=float(margin_km)))
        return cfg


# ---------------------------------------------------------------------------
# Scene: map, Geo-Ind graph, table and exact costs

@dataclass
class Scene:
    model: LocationModel
    graph: GeoIndGraph
    fine: LocationModel
    travel: TravelCostGraph
    crt: CostReferenceTable
    oracle: ExactCostOracle

    @property
    def p(self) -> np.ndarray:
        return self.oracle.p


def _fine_grid(cfg: ScenarioConfig, model: LocationModel) -> GridSpec:
    if cfg.coords_csv is None:
        w, h = cfg.grid_cols * cfg.cell_km, cfg.grid_rows * cfg.cell_km
        origin = (0.0, 0.0)
    else:
        if model.metric != PLANAR:
            raise ConfigError("lat/lon maps need network 'csv' with their own fine nodes")
        lo = model.coords.min(axis=0)
        hi = model.coords.max(axis=0)
        origin = (float(lo[0]), float(lo[1]))
        w, h = float(hi[0] - lo[0]), float(hi[1] - lo[1])
        cols = max(1, int(np.ceil(w / cfg.crt_cell_km - 1e-9)))
        rows = max(1, int(np.ceil(h / cfg.crt_cell_km - 1e-9)))
        return GridSpec(rows, cols, cfg.crt_cell_km, origin)
    cols = int(round(w / cfg.crt_cell_km))
    rows = int(round(h / cfg.crt_cell_km))
    if (min(rows, cols) < 1 or abs(cols * cfg.crt_cell_km - w) > 1e-9 * max(1.0, w)
            or abs(rows * cfg.crt_cell_km - h) > 1e-9 * max(1.0, h)):
        raise ConfigError("crt_cell_km must divide the map extent")
    return GridSpec(rows, cols, cfg.crt_cell_km, origin)


def build_fine(cfg: ScenarioConfig, model: LocationModel) -> tuple:
    """Fine table nodes and the travel network over them."""
    if cfg.network == "csv":
        fine = read_coordinates_csv(cfg.fine_coords_csv)
        return fine, read_travel_csv(cfg.travel_csv, fine.K)
    grid = _fine_grid(cfg, model)
    fine = build_location_model(grid)
    if cfg.network == "road":
        travel = road_grid_travel_graph(grid, cfg.arterial_every, cfg.local_factor)
    else:
        travel = grid_travel_graph(grid)
    return fine, travel


def build_map(cfg: ScenarioConfig) -> LocationModel:
    if cfg.coords_csv is not None:
        return read_coordinates_csv(cfg.coords_csv)
    return build_location_model(GridSpec(cfg.grid_rows, cfg.grid_cols, cfg.cell_km))


def build_scene(cfg: ScenarioConfig, crt: Optional[CostReferenceTable] = None) -> Scene:
    model = build_map(cfg)
    graph = build_geoind_graph(model, cfg.mechanism.gamma_km)
    fine, travel = build_fine(cfg, model)
    if crt is None:
        crt = build_crt(fine, travel)
    oracle = ExactCostOracle(model, fine, travel)
    return Scene(model, graph, fine, travel, crt, oracle)


def place_users(cfg: ScenarioConfig, K: int, rng: np.random.Generator) -> np.ndarray:
    if cfg.placement == "fixed":
        ids = np.asarray(cfg.user_ids, dtype=int)
        if np.any((ids < 0) | (ids >= K)):
            raise ConfigError("user id outside the map")
        return ids
    return rng.choice(K, size=cfg.n_users, replace=cfg.n_users > K)


def _streams(seed: int) -> dict:
    names = ("placement", "lr-geo", "laplace")
    return dict(zip(names, (np.random.default_rng(s)
                            for s in np.random.SeedSequence(seed).spawn(len(names)))))


# ---------------------------------------------------------------------------
# Running mechanisms

@dataclass
class RunResult:
    config: ScenarioConfig
    scene: Scene
    users: np.ndarray
    matrices: dict
    timings: dict
    lr_geo: object = None

    @property
    def c_hats(self) -> list:
        return [blk.c_hat for blk in self.lr_geo.problem.blocks]

    @property
    def in_range(self) -> list:
        out = []
        for cl in self.lr_geo.clients:
            mask = np.zeros((cl.row_ids.size, self.scene.model.K), dtype=bool)
            mask[:, cl.obf.members] = True
            out.append(mask)
        return out


def _lr_rows(scene: Scene, cfg: ScenarioConfig, users) -> list:
    from .geo import lr_set
    return [lr_set(scene.graph, int(u), cfg.mechanism.gamma_lr_km).members for u in users]


def run_scenario(cfg: ScenarioConfig, scene: Optional[Scene] = None) -> RunResult:
    """Run every selected mechanism; baselines are evaluated on each user's LR rows."""
    cfg.validate()
    try:
        scene = build_scene(cfg) if scene is None else scene
    except Exception as err:
        raise StageError("build scene", err) from err
    rng = _streams(cfg.seed)
    users = place_users(cfg, scene.model.K, rng["placement"])
    rows = _lr_rows(scene, cfg, users)
    eps = cfg.mechanism.epsilon_per_km
    out = RunResult(cfg, scene, users, {}, {})
    for mech in cfg.mechanisms:
        t0 = time.perf_counter()
        try:
            if mech == "lr-geo":
                res = run_lr_geo(users, cfg.mechanism, scene.model, scene.graph, scene.crt,
                                 scene.p, rng["lr-geo"], workers=cfg.workers)
                out.lr_geo = res
                mats = res.matrices
            elif mech == "full-lp":
                full = run_full_lp(scene.model, scene.graph, scene.oracle.matrix(), eps)
                mats = [ObfuscationMatrix(m, r, full.probs[r]) for m, r in enumerate(rows)]
            elif mech == "laplace":
                mats = []
                for m, r in enumerate(rows):
                    lm = laplace_matrix(scene.model, r, eps, rng["laplace"], cfg.laplace_samples)
                    lm.owner = m
                    mats.append(lm)
            else:
                mats = []
                for m, r in enumerate(rows):
                    c = scene.oracle.matrix(r) / scene.p[r][:, None]
                    z = np.vstack([run_expmech(scene.model, c[a], eps) for a in range(r.size)])
                    mats.append(ObfuscationMatrix(m, r, z))
        except Exception as err:
            raise StageError(mech, err) from err
        out.timings[mech] = time.perf_counter() - t0
        out.matrices[mech] = mats
        log.info("%s done in %.3f s", mech, out.timings[mech])
    return out


# ---------------------------------------------------------------------------
# Persistence

def _fmt(v: float) -> str:
    return f"{v:.9f}"


def write_matrices(path, matrices: Sequence[ObfuscationMatrix]) -> None:
    """``user,row_loc,col_loc,prob``; exact zeros are omitted.

    Probabilities are written losslessly so that an audit of the persisted
    matrices agrees with one of the in-memory matrices.
    """
    with open(path, "w", newline="") as fh:
        fh.write("user,row_loc,col_loc,prob\n")
        for m, mat in enumerate(matrices):
            for r, loc in enumerate(mat.row_ids):
                row = mat.probs[r]
                for k in np.flatnonzero(row != 0):
                    fh.write(f"{m},{int(loc)},{int(k)},{float(row[k])!r}\n")


def read_matrices(path, K: int) -> list:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    mats = []
    if data.size == 0:
        return mats
    for m in range(int(data[:, 0].max()) + 1):
        d = data[data[:, 0] == m]
        ids = np.unique(d[:, 1].astype(int))
        z = np.zeros((ids.size, K))
        z[np.searchsorted(ids, d[:, 1].astype(int)), d[:, 2].astype(int)] = d[:, 3]
        mats.append(ObfuscationMatrix(m, ids, z))
    return mats


def write_coefficients(path, result: RunResult) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("user,row_loc,col_loc,c_hat_km,in_range\n")
        for m, (mat, c, rng_mask) in enumerate(zip(result.lr_geo.matrices, result.c_hats,
                                                    result.in_range)):
            for r, loc in enumerate(mat.row_ids):
                for k in range(c.shape[1]):
                    fh.write(f"{m},{int(loc)},{k},{_fmt(c[r, k])},{int(rng_mask[r, k])}\n")


def read_coefficients(path, matrices: Sequence[ObfuscationMatrix], K: int) -> tuple:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    c_hats, masks = [], []
    for m, mat in enumerate(matrices):
        d = data[data[:, 0] == m]
        r = np.searchsorted(mat.row_ids, d[:, 1].astype(int))
        c = np.zeros((mat.row_ids.size, K))
        mask = np.zeros_like(c, dtype=bool)
        c[r, d[:, 2].astype(int)] = d[:, 3]
        mask[r, d[:, 2].astype(int)] = d[:, 4] > 0
        c_hats.append(c)
        masks.append(mask)
    return c_hats, masks


def write_manifest(path, cfg: ScenarioConfig, extra: Optional[dict] = None) -> None:
    import platform
    import scipy

    doc = {"config": cfg.to_dict(), "seed": cfg.seed,
           "versions": {"python": platform.python_version(), "numpy": np.__version__,
                        "scipy": scipy.__version__}}
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(run_dir) -> dict:
    path = Path(run_dir) / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"missing run artifact {path}")
    with open(path) as fh:
        return json.load(fh)


def write_run(result: RunResult, out_dir=None) -> Path:
    cfg = result.config
    out = Path(cfg.out_dir if out_dir is None else out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for mech, mats in result.matrices.items():
        write_matrices(out / f"matrices_{mech}.csv", mats)
    if result.lr_geo is not None:
        write_coefficients(out / "coefficients_lr-geo.csv", result)
        benders.write_trace(result.lr_geo.state, out / "trace_lr-geo.csv")
    with open(out / "timing.csv", "w", newline="") as fh:
        fh.write("mechanism,K,M,seconds\n")
        for mech, sec in result.timings.items():
            fh.write(f"{mech},{result.scene.model.K},{len(result.users)},{sec:.6f}\n")
    extra = {"users": [int(u) for u in result.users], "mechanisms": list(result.matrices)}
    if result.lr_geo is not None:
        st = result.lr_geo.state
        extra["lr_geo"] = {"iterations": st.iteration, "converged": st.converged,
                           "lower_km": st.best_lower_km, "upper_km": st.best_upper_km,
                           "relaxed_extractions": st.relaxed_extractions}
    write_manifest(out / "manifest.json", cfg, extra)
    return out


# ---------------------------------------------------------------------------
# Subcommands

def cmd_build_crt(cfg: ScenarioConfig) -> tuple:
    """Build the table for the scenario map and write ``crt.csv`` + ``crt_header.json``."""
    model = build_map(cfg)
    fine, travel = build_fine(cfg, model)
    crt = build_crt(fine, travel)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, header_path = out / "crt.csv", out / "crt_header.json"
    write_crt(crt, csv_path, header_path, extra={"network": cfg.network})
    return csv_path, header_path


def _scene_for(cfg: ScenarioConfig) -> Scene:
    out = Path(cfg.out_dir)
    crt = None
    if (out / "crt.csv").is_file() and (out / "crt_header.json").is_file():
        crt = read_crt(out / "crt.csv", out / "crt_header.json")
    return build_scene(cfg, crt)


def cmd_run(cfg: ScenarioConfig) -> Path:
    """Run the scenario and persist its artifacts under ``cfg.out_dir``."""
    cfg.validate()
    return write_run(run_scenario(cfg, _scene_for(cfg)))


def own_row_costs(matrices: Sequence[ObfuscationMatrix], users, oracle: ExactCostOracle) -> np.ndarray:
    """Expected travel-cost error in km at each user's real location (cost divided by ``p``)."""
    out = []
    for mat, u in zip(matrices, users):
        c = oracle.matrix([int(u)])[0] / oracle.p[int(u)]
        out.append(float(c @ mat.row(int(u))))
    return np.asarray(out)


def evaluate(matrices: dict, users, scene: Scene, cfg: ScenarioConfig,
             c_hats=None, in_range=None) -> dict:
    """Metrics for every mechanism plus bounds, privacy audit and table matching for LR-Geo."""
    eps, gamma = cfg.mechanism.epsilon_per_km, cfg.mechanism.gamma_km
    report = {"K": scene.model.K, "M": len(users), "mechanisms": {}}
    for mech, mats in matrices.items():
        own = own_row_costs(mats, users, scene.oracle)
        lr_cost = np.array([expected_cost(m, scene.oracle) for m in mats])
        mean, hw = mean_half_width(own)
        report["mechanisms"][mech] = {
            "own_row_cost_km": own.tolist(), "mean_km": mean, "half_width_km": hw,
            "lr_set_cost_km": lr_cost.tolist(),
        }
    if "lr-geo" in matrices and c_hats is not None:
        mats = matrices["lr-geo"]
        cr = cost_bounds_from(mats, c_hats, scene.model, scene.crt, scene.oracle, eps, gamma)
        report["cost"] = {"lower_bound_km": cr.lower_bound_km, "upper_bound_km": cr.upper_bound_km,
                          "achieved_km": cr.expected_cost_km["lr-geo"],
                          "approximation_ratio": cr.approximation_ratio, "per_user": cr.per_user}
        if in_range is not None and any(m.tied is None for m in mats):
            mats = [_with_ties(m, mk, scene.model, cfg.mechanism) for m, mk in zip(mats, in_range)]
        priv = gv_audit(mats, scene.model, eps, gamma)
        report["privacy"] = {"gv_ratio": priv.gv_ratio, "cross_gv_ratio": priv.cross_gv_ratio,
                             "n_checked": priv.n_checked, "n_violations": priv.n_violations,
                             "max_gve": priv.max_gve,
                             "prop_bound_global": priv.prop_bound_global}
        if in_range is not None:
            vals = np.concatenate([c[mk] for c, mk in zip(c_hats, in_range)])
            p_rows = np.concatenate([np.broadcast_to(scene.p[mat.row_ids][:, None], c.shape)[mk]
                                     for mat, c, mk in zip(mats, c_hats, in_range)])
            counts = attack_rows(scene.crt, vals, p_rows)
            hist = np.bincount(counts)
            report["attack"] = {"mean_rows": float(counts.mean()) if counts.size else 0.0,
                                "min_rows": int(counts.min(initial=0)),
                                "histogram": {int(k): int(v) for k, v in enumerate(hist) if v}}
    return report


def _with_ties(mat: ObfuscationMatrix, in_range: np.ndarray, model: LocationModel,
               mc: MechanismConfig) -> ObfuscationMatrix:
    """Rebuild the tied-entry mask of a persisted LR-Geo matrix."""
    near = model.distance_matrix(mat.row_ids, np.arange(model.K)) <= mc.r_exp_km + DIST_TOL
    if mc.r_exp_km == 0:
        near[:] = False
    free = in_range & near
    tied = ~free if mc.tail == TAIL_EXPONENTIAL else in_range & ~near
    return replace(mat, tied=tied)


def write_metrics(report: dict, out_dir) -> None:
    out = Path(out_dir)
    with open(out / "metrics.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "K", "mean", "half_width"])
        for mech, r in report["mechanisms"].items():
            w.writerow([mech, report["K"], _fmt(r["mean_km"]), _fmt(r["half_width_km"])])


def cmd_evaluate(run_dir) -> dict:
    """Recompute metrics from a run directory's raw artifacts."""
    run_dir = Path(run_dir)
    man = read_manifest(run_dir)
    cfg = ScenarioConfig.from_dict(man["config"])
    cfg = replace(cfg, out_dir=str(run_dir))
    scene = _scene_for(cfg)
    K = scene.model.K
    matrices = {}
    for mech in man["mechanisms"]:
        path = run_dir / f"matrices_{mech}.csv"
        if not path.is_file():
            raise FileNotFoundError(f"missing run artifact {path}")
        matrices[mech] = read_matrices(path, K)
    c_hats = in_range = None
    if "lr-geo" in matrices:
        path = run_dir / "coefficients_lr-geo.csv"
        if not path.is_file():
            raise FileNotFoundError(f"missing run artifact {path}")
        c_hats, in_range = read_coefficients(path, matrices["lr-geo"], K)
    report = evaluate(matrices, man["users"], scene, cfg, c_hats, in_range)
    write_metrics(report, run_dir)
    return report


def attack_sim(cfg: ScenarioConfig, cell_sizes: Sequence[float], run_dir=None) -> list:
    """Table rows matching each uploaded coefficient as the table cell size grows.

    The coefficients and table of one run stay fixed; only the matching
    interval widens with the cell size (half width twice the cell's
    covering radius).  Writes ``attack.csv`` with per-cell-size summaries.
    """
    cfg.validate()
    run_dir = Path(cfg.out_dir if run_dir is None else run_dir)
    if (run_dir / "manifest.json").is_file() and (run_dir / "coefficients_lr-geo.csv").is_file():
        man = read_manifest(run_dir)
        scene = _scene_for(replace(ScenarioConfig.from_dict(man["config"]), out_dir=str(run_dir)))
        mats = read_matrices(run_dir / "matrices_lr-geo.csv", scene.model.K)
        c_hats, masks = read_coefficients(run_dir / "coefficients_lr-geo.csv", mats, scene.model.K)
    else:
        res = run_scenario(replace(cfg, mechanisms=["lr-geo"]))
        scene, mats, c_hats, masks = res.scene, res.lr_geo.matrices, res.c_hats, res.in_range
    vals = np.concatenate([c[mk] for c, mk in zip(c_hats, masks)])
    p_rows = np.concatenate([np.broadcast_to(scene.p[m.row_ids][:, None], c.shape)[mk]
                             for m, c, mk in zip(mats, c_hats, masks)])
    rows = []
    for s in sorted(cell_sizes):
        hw = 2.0 * grid_covering_radius(GridSpec(1, 1, float(s)))
        counts = attack_rows(scene.crt, vals, p_rows, half_width_km=hw)
        mean, half = mean_half_width(counts)
        rows.append({"cell_km": float(s), "half_width_km": hw, "mean_rows": mean,
                     "ci_half_width": half, "min_rows": int(counts.min(initial=0)),
                     "counts": counts})
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "attack.csv", "w", newline="") as fh:
        fh.write("cell_km,interval_half_width_km,mean_rows,ci_half_width,min_rows\n")
        for r in rows:
            fh.write(f"{_fmt(r['cell_km'])},{_fmt(r['half_width_km'])},{_fmt(r['mean_rows'])},"
                     f"{_fmt(r['ci_half_width'])},{r['min_rows']}\n")
    return rows


def _sweep_config(cfg: ScenarioConfig, param: str, value) -> ScenarioConfig:
    if param == "gamma_lr_km":
        return replace(cfg, mechanism=replace(cfg.mechanism, gamma_lr_km=float(value)))
    if param == "crt_cell_km":
        return replace(cfg, crt_cell_km=float(value))
    if param == "n_users":
        return replace(cfg, n_users=int(value), placement="uniform", user_ids=[])
    if param == "grid_size":
        return replace(cfg, grid_rows=int(value), grid_cols=int(value))
    raise ConfigError(f"unknown sweep parameter {param!r}; choose from {list(SWEEP_PARAMS)}")


def sweep(cfg: ScenarioConfig, param: str, values: Sequence) -> list:
    """Run LR-Geo over a parameter grid; writes ``sweep_<param>.csv`` under ``cfg.out_dir``."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"unknown sweep parameter {param!r}; choose from {list(SWEEP_PARAMS)}")
    rows = []
    for v in values:
        sub = _sweep_config(cfg, param, v)
        sub = replace(sub, mechanisms=["lr-geo"])
        res = run_scenario(sub)
        rep = evaluate(res.matrices, res.users, res.scene, sub, res.c_hats, res.in_range)
        st = res.lr_geo.state
        rows.append({"param": param, "value": v, "K": res.scene.model.K, "M": len(res.users),
                     "seconds": res.timings["lr-geo"], "iterations": st.iteration,
                     "converged": st.converged, "lower_km": rep["cost"]["lower_bound_km"],
                     "achieved_km": rep["cost"]["achieved_km"],
                     "upper_km": rep["cost"]["upper_bound_km"],
                     "approximation_ratio": rep["cost"]["approximation_ratio"],
                     "gv_ratio": rep["privacy"]["gv_ratio"],
                     "mean_attack_rows": rep["attack"]["mean_rows"]})
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    keys = list(rows[0]) if rows else []
    with open(out / f"sweep_{param}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, float) else v for v in r.values()])
    return rows

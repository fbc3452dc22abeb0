"""Several users solved jointly: do their matrices stay private with respect to each other?

Rows of different users at the same or neighboring locations are checked
against each other.  With every entry tied (``r_exp_km = 0``) the shared
columns force identical behavior, so no cross-user pair can violate.
With the default partly-free entries a few cross-user violations remain.

Run with ``python3 demos/02_many_users_privacy.py``.
"""

from dataclasses import replace

from lrgeo.evaluation import gv_audit
from lrgeo.harness import ScenarioConfig, build_scene, run_scenario

cfg = ScenarioConfig(grid_rows=12, grid_cols=12, cell_km=0.3, crt_cell_km=0.3,
                     mechanisms=["lr-geo"], n_users=5, seed=1, out_dir="unused")
scene = build_scene(cfg)

for label, r_exp in (("all entries tied", 0.0), ("default", cfg.mechanism.r_exp_km)):
    run_cfg = replace(cfg, mechanism=replace(cfg.mechanism, r_exp_km=r_exp))
    res = run_scenario(run_cfg, scene)
    rep = gv_audit(res.lr_geo.matrices, scene.model, cfg.mechanism.epsilon_per_km,
                   cfg.mechanism.gamma_km)
    print(f"{label:>17}: users {res.users.tolist()}, "
          f"{res.lr_geo.state.iteration} iterations, "
          f"cross-user violations {rep.cross_violations}/{rep.cross_checked}, "
          f"overall ratio {rep.gv_ratio:.2e}")

"""One user on a small road map: what the client uploads and what comes back.

Run with ``python3 demos/01_single_user.py``.
"""

import numpy as np

from lrgeo import (GridSpec, MechanismConfig, build_crt, build_geoind_graph, build_location_model,
                   gv_audit, road_grid_travel_graph, run_lr_geo)
from lrgeo.mechanisms import sample

# 8x8 map of 0.3 km cells; costs come from a 0.1 km road network over the same region
coarse = GridSpec(8, 8, 0.3)
fine = GridSpec(24, 24, 0.1)
model = build_location_model(coarse)
crt = build_crt(build_location_model(fine), road_grid_travel_graph(fine))
config = MechanismConfig()
graph = build_geoind_graph(model, config.gamma_km)

user = 27
res = run_lr_geo([user], config, model, graph, crt, rng=np.random.default_rng(0))
client = res.clients[0]
upload = client.upload

print(f"real location {user}; LR set has {client.row_ids.size} rows, "
      f"obfuscation range {client.obf.members.size} columns")
print("upload fields:", sorted(vars(upload)))
print(f"Benders: {res.state.iteration} iterations, best objective "
      f"{res.state.best_upper_km:.4f} km")

mat = res.matrices[0]
row = mat.row(user)
top = np.argsort(row)[::-1][:5]
print("most likely reported locations:", ", ".join(f"{k} ({row[k]:.3f})" for k in top))

rep = gv_audit(res.matrices, model, config.epsilon_per_km, config.gamma_km)
print(f"Geo-Ind audit: {rep.n_violations} violations over {rep.n_checked} checks")

draws = [sample(mat, user, np.random.default_rng(s)) for s in range(5)]
print("five reported locations:", draws)

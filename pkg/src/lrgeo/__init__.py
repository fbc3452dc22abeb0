"""Locally relevant geo-obfuscation for many users, solved by Benders' decomposition.

Modules
-------
geo          discrete locations, the Geo-Ind neighbor graph, LR sets and ranges
costs        travel networks, the cost reference table and cost estimates
formulation  full-map LP and the multi-user block-ladder LP
lp           LP instances, HiGHS-backed solving, LP text files
benders      master/subproblem loop with feasibility and optimality cuts
mechanisms   the multi-user pipeline and the baseline mechanisms
evaluation   expected cost, Geo-Ind audits, cost bounds, table-matching counts
harness      scenarios, run directories and the ``lrgeo`` subcommands
"""

from .geo import (GridSpec, LocationModel, build_geoind_graph, build_location_model, lr_set,
                  obf_range, shortest_path_tree)
from .costs import (CostReferenceTable, ExactCostOracle, build_crt, estimate_costs,
                    grid_travel_graph, road_grid_travel_graph)
from .formulation import ObfuscationMatrix, assemble_clr, assemble_omg
from .mechanisms import (MechanismConfig, client_prepare, run_expmech, run_full_lp, run_laplace,
                         run_lr_geo, server_solve)
from .evaluation import cost_bounds, expected_cost, gv_audit

__version__ = "0.1.0"

__all__ = [
    "GridSpec", "LocationModel", "build_geoind_graph", "build_location_model", "lr_set",
    "obf_range", "shortest_path_tree", "CostReferenceTable", "ExactCostOracle", "build_crt",
    "estimate_costs", "grid_travel_graph", "road_grid_travel_graph", "ObfuscationMatrix",
    "assemble_clr", "assemble_omg", "MechanismConfig", "client_prepare", "run_expmech",
    "run_full_lp", "run_laplace", "run_lr_geo", "server_solve", "cost_bounds", "expected_cost",
    "gv_audit",
]

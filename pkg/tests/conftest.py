import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lrgeo.costs import ExactCostOracle, build_crt, grid_travel_graph
from lrgeo.geo import GridSpec, build_geoind_graph, build_location_model
from lrgeo.mechanisms import MechanismConfig

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=300, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


class Scene:
    """Coarse grid, Geo-Ind graph, table on a finer grid and exact costs."""

    def __init__(self, n, cell, fine_factor, cfg, travel_fn=grid_travel_graph):
        self.cfg = cfg
        self.model = build_location_model(GridSpec(n, n, cell))
        self.graph = build_geoind_graph(self.model, cfg.gamma_km)
        fine_grid = GridSpec(n * fine_factor, n * fine_factor, cell / fine_factor)
        self.fine = build_location_model(fine_grid)
        self.travel = travel_fn(fine_grid)
        self.crt = build_crt(self.fine, self.travel)
        self.oracle = ExactCostOracle(self.model, self.fine, self.travel)


@pytest.fixture(scope="session")
def small_scene():
    """5x5 grid of 0.2 km cells, table at 0.1 km (snap distances are non-zero)."""
    cfg = MechanismConfig(epsilon_per_km=10.0, gamma_km=0.25, gamma_lr_km=0.45,
                          r_obf_km=0.45, r_exp_km=0.2)
    return Scene(5, 0.2, 2, cfg)


@pytest.fixture(scope="session")
def aligned_scene():
    """5x5 grid of 0.3 km cells, table at 0.1 km; every cell center is a table node."""
    cfg = MechanismConfig(epsilon_per_km=10.0, gamma_km=0.45, gamma_lr_km=0.9,
                          r_obf_km=0.9, r_exp_km=0.45)
    return Scene(5, 0.3, 3, cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

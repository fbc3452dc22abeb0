import itertools
import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from lrgeo.costs import (CostReferenceTable, CoverageError, ExactCostOracle, PriorDistributions,
                         beta_matrix, build_crt, estimate_block, estimate_costs, exact_cost,
                         grid_travel_graph, make_travel_graph, read_crt, read_travel_csv,
                         request_range, road_grid_travel_graph, travel_cost_matrix, write_crt)
from lrgeo.geo import (GridSpec, build_geoind_graph, build_location_model, lr_set, obf_range)


def fine_grid(n, cell=0.1):
    g = GridSpec(n, n, cell)
    return build_location_model(g), g


def nx_costs(travel):
    g = nx.DiGraph()
    g.add_nodes_from(range(travel.n_nodes))
    for s, d, c in zip(travel.src, travel.dst, travel.cost_km):
        if not g.has_edge(s, d) or g[s][d]["weight"] > c:
            g.add_edge(int(s), int(d), weight=float(c))
    n = travel.n_nodes
    out = np.full((n, n), np.inf)
    for s, dist in nx.all_pairs_dijkstra_path_length(g):
        for t, v in dist.items():
            out[s, t] = v
    return out


def brute_beta(t, q):
    n = t.shape[0]
    out = np.zeros((n, n))
    for i, k in itertools.product(range(n), range(n)):
        out[i, k] = sum(q[l] * abs(t[i, l] - t[k, l]) for l in range(n))
    return out


class TestTravel:
    def test_grid_matches_networkx(self):
        _, g = fine_grid(4)
        t = grid_travel_graph(g)
        np.testing.assert_allclose(travel_cost_matrix(t), nx_costs(t), atol=1e-12)

    def test_road_matches_networkx(self):
        _, g = fine_grid(6)
        t = road_grid_travel_graph(g, 3, 4.0)
        np.testing.assert_allclose(travel_cost_matrix(t), nx_costs(t), atol=1e-12)

    def test_directed_edges(self):
        t = make_travel_graph(3, [(0, 1, 1.0), (1, 2, 1.0), (2, 0, 5.0)])
        m = travel_cost_matrix(t)
        assert m[0, 2] == 2.0 and m[2, 0] == 5.0 and m[1, 0] == 6.0

    def test_parallel_edges_keep_minimum(self):
        t = make_travel_graph(2, [(0, 1, 3.0), (0, 1, 1.0), (1, 0, 1.0)])
        assert travel_cost_matrix(t)[0, 1] == 1.0

    def test_disconnected_is_error(self):
        t = make_travel_graph(3, [(0, 1, 1.0), (1, 0, 1.0)])
        with pytest.raises(ValueError):
            travel_cost_matrix(t)

    def test_csv(self, tmp_path):
        p = tmp_path / "edges.csv"
        p.write_text("src,dst,cost_km\n0,1,0.5\n1,0,0.5\n")
        assert travel_cost_matrix(read_travel_csv(p, 2))[1, 0] == 0.5


class TestBeta:
    def test_two_node_hand_value(self):
        t = np.array([[0.0, 1.0], [1.0, 0.0]])
        b = beta_matrix(t, t, np.array([0.5, 0.5]))
        assert b[0, 1] == pytest.approx(1.0)
        assert b[0, 0] == 0.0

    def test_brute_force_3x3(self):
        m, g = fine_grid(3)
        crt = build_crt(m)
        t = travel_cost_matrix(grid_travel_graph(g))
        np.testing.assert_allclose(crt.beta, brute_beta(t, np.full(9, 1 / 9)), atol=1e-12)
        assert np.all(np.diag(crt.beta) == 0)
        np.testing.assert_allclose(crt.beta, crt.beta.T, atol=1e-12)

    def test_chunking_is_invisible(self):
        r = np.random.default_rng(1)
        t = r.uniform(0, 3, (17, 11))
        q = r.dirichlet(np.ones(11))
        np.testing.assert_allclose(beta_matrix(t, t, q, chunk=1), beta_matrix(t, t, q), atol=1e-12)

    def test_triangle_bound(self):
        m, g = fine_grid(4)
        crt = build_crt(m)
        t = travel_cost_matrix(grid_travel_graph(g))
        b = crt.beta
        gap = np.abs(b[:, :, None] - b[:, None, :])
        assert np.all(gap <= t[None, :, :] + 1e-12)

    def test_prior_validation(self):
        m, _ = fine_grid(2)
        with pytest.raises(ValueError):
            build_crt(m, q=np.array([0.5, 0.5, 0.5, 0.5]))
        with pytest.raises(ValueError):
            build_crt(m, q=np.array([1.0, 0.0, 0.0]))
        with pytest.raises(ValueError):
            PriorDistributions(np.array([1.2, -0.2]), np.array([1.0])).validated(2, 1)

    def test_delta_max_default(self):
        m, _ = fine_grid(3)
        assert build_crt(m).delta_max_km == pytest.approx(0.1 * math.sqrt(2) / 2)
        assert build_crt(m).delta_max_km == pytest.approx(0.0707, abs=1e-4)


class TestExactCost:
    def test_line_graph_hand_values(self):
        # four locations on a line, unit spacing, both directions
        model = build_location_model([(float(i), 0.0) for i in range(4)])
        travel = make_travel_graph(4, [(i, i + 1, 1.0) for i in range(3)]
                                   + [(i + 1, i, 1.0) for i in range(3)])
        pri = PriorDistributions(np.full(4, 0.25), np.full(4, 0.25))
        # targets 0..3 from 0 and 2: |0-2|,|1-1|,|2-0|,|3-1| -> 2,0,2,2
        assert exact_cost(model, travel, pri, 0, 2) == pytest.approx(0.25 * 0.25 * 6)
        assert exact_cost(model, travel, pri, 1, 1) == 0.0

    def test_linearity_in_p(self):
        model = build_location_model([(float(i), 0.0) for i in range(4)])
        travel = make_travel_graph(4, [(i, i + 1, 1.0) for i in range(3)]
                                   + [(i + 1, i, 1.0) for i in range(3)])
        q = np.full(4, 0.25)
        point = exact_cost(model, travel, PriorDistributions(np.eye(4)[0], q), 0, 3)
        uniform = exact_cost(model, travel, PriorDistributions(np.full(4, 0.25), q), 0, 3)
        assert uniform == pytest.approx(point / 4)

    def test_oracle_matches_triple_loop(self, small_scene):
        s = small_scene
        t = travel_cost_matrix(s.travel)
        d = s.fine.distance_to_points(s.model.coords)
        snap = d.argmin(axis=1)
        acc = d[np.arange(s.model.K), snap]
        tc = acc[:, None] + t[snap]
        q = np.full(s.fine.K, 1 / s.fine.K)
        want = np.array([[sum(q[l] * abs(tc[i, l] - tc[k, l]) for l in range(s.fine.K))
                          for k in range(5)] for i in range(5)]) / s.model.K
        np.fill_diagonal(want, 0.0)
        np.testing.assert_allclose(s.oracle.matrix(range(5), range(5)), want, atol=1e-12)


class TestEstimates:
    def test_zero_snap_collapses(self, aligned_scene):
        s = aligned_scene
        lr = lr_set(s.graph, 12, s.cfg.gamma_lr_km)
        ob = obf_range(s.model, 12, s.cfg.r_obf_km)
        p = s.oracle.p[lr.members]
        est = estimate_costs(s.crt, lr, ob, s.model, p)
        np.testing.assert_allclose(est.upper, est.lower, atol=1e-15)
        np.testing.assert_allclose(est.upper, s.oracle.matrix(lr.members, ob.members), atol=1e-12)

    def test_upper_minus_lower(self, small_scene):
        s = small_scene
        lr = lr_set(s.graph, 12, s.cfg.gamma_lr_km)
        ob = obf_range(s.model, 12, s.cfg.r_obf_km)
        p = s.oracle.p[lr.members]
        est = estimate_costs(s.crt, lr, ob, s.model, p)
        sr = np.array([est.snap[int(i)][1] for i in lr.members])
        sc = np.array([est.snap[int(k)][1] for k in ob.members])
        gap = 2 * p[:, None] * (sr[:, None] + sc[None, :])
        unclamped = est.lower > 0
        np.testing.assert_allclose((est.upper - est.lower)[unclamped], gap[unclamped], atol=1e-12)
        assert np.all(est.lower >= 0)

    def test_snap_ties_smaller_id(self):
        # coarse center equidistant to four fine nodes
        fine, _ = fine_grid(2, 0.1)
        coarse = build_location_model([(0.1, 0.1)])
        crt = build_crt(fine)
        up, lo, rs, cs = estimate_block(crt, coarse, [0], [0], 1.0)
        assert rs.fine_index[0] == 0

    def test_coverage_error(self):
        fine, _ = fine_grid(2, 0.1)
        crt = build_crt(fine)
        far = build_location_model([(5.0, 5.0)])
        with pytest.raises(CoverageError):
            estimate_block(crt, far, [0], [0], 1.0)

    @pytest.mark.parametrize("fixture", ["small_scene", "aligned_scene"])
    def test_sandwich_all_pairs(self, fixture, request):
        s = request.getfixturevalue(fixture)
        K = s.model.K
        up, lo, _, _ = estimate_block(s.crt, s.model, np.arange(K), np.arange(K), s.oracle.p)
        exact = s.oracle.matrix()
        assert np.all(lo <= exact + 1e-12)
        assert np.all(exact <= up + 1e-12)

    @given(st.integers(2, 5), st.integers(1, 3), st.integers(0, 10 ** 6))
    def test_sandwich_random_layouts(self, n, factor, seed):
        r = np.random.default_rng(seed)
        cell = 0.2
        fine_g = GridSpec(n * factor, n * factor, cell / factor)
        fine = build_location_model(fine_g)
        pts = r.uniform(0, n * cell, (6, 2))
        coarse = build_location_model([tuple(p) for p in pts])
        travel = road_grid_travel_graph(fine_g, 2, float(r.uniform(1, 4)))
        q = r.dirichlet(np.ones(fine.K))
        p = r.dirichlet(np.ones(6))
        crt = build_crt(fine, travel, q)
        oracle = ExactCostOracle(coarse, fine, travel, p, q)
        up, lo, _, _ = estimate_block(crt, coarse, np.arange(6), np.arange(6), p)
        exact = oracle.matrix()
        assert np.all(lo <= exact + 1e-12)
        assert np.all(exact <= up + 1e-12)


class TestRequestRange:
    def test_radius_branches(self):
        chain = build_location_model([(0.0, 0.0)])
        g = build_geoind_graph(chain, 1.0)
        r = np.random.default_rng(0)
        lr20 = lr_set(g, 0, 20.0)
        assert request_range(lr20, 4.0, r)[1] == 40.0
        lr1 = lr_set(g, 0, 1.0)
        assert request_range(lr1, 3.0, r)[1] == 4.0

    def test_anchor_uniform_over_members(self):
        model = build_location_model(GridSpec(5, 5, 0.1))
        lr = lr_set(build_geoind_graph(model, 0.12), 12, 0.1)
        r = np.random.default_rng(3)
        draws = [request_range(lr, 0.2, r)[0] for _ in range(5000)]
        counts = np.array([draws.count(int(m)) for m in lr.members])
        expected = 5000 / len(lr)
        sd = math.sqrt(5000 * (1 / len(lr)) * (1 - 1 / len(lr)))
        assert np.all(np.abs(counts - expected) <= 4 * sd)

    def test_coverage_200_instances(self):
        model = build_location_model(GridSpec(8, 8, 0.1))
        r = np.random.default_rng(7)
        for _ in range(200):
            gamma = float(r.uniform(0.1, 0.2))
            g = build_geoind_graph(model, gamma)
            c = int(r.integers(model.K))
            lr = lr_set(g, c, float(r.uniform(gamma, 0.5)))
            ob = obf_range(model, c, float(r.uniform(0.05, 0.5)))
            a, rad = request_range(lr, ob.radius_km, r)
            # the anchor is a member, so the center is within gamma_lr of it
            assert model.direct_distance(c, a) <= lr.gamma_lr_km + 1e-9
            ids = np.union1d(lr.members, ob.members)
            assert np.all(model.distances_from(a, ids) <= rad + 1e-9)

    def test_empty_lr_set(self):
        from lrgeo.geo import LrSet
        with pytest.raises(ValueError):
            request_range(LrSet(0, np.array([], dtype=int), np.array([]), 1.0), 1.0,
                          np.random.default_rng(0))


class TestPersistence:
    def test_roundtrip_and_bytes(self, tmp_path):
        m, _ = fine_grid(10)
        crt = build_crt(m)
        write_crt(crt, tmp_path / "a.csv", tmp_path / "a.json")
        write_crt(build_crt(m), tmp_path / "b.csv", tmp_path / "b.json")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        lines = (tmp_path / "a.csv").read_text().splitlines()
        assert len(lines) == 1 + 100 ** 2
        back = read_crt(tmp_path / "a.csv", tmp_path / "a.json")
        np.testing.assert_allclose(back.beta, crt.beta, atol=5e-10)
        assert back.delta_max_km == pytest.approx(crt.delta_max_km)
        assert back.fine_model.grid == crt.fine_model.grid

    def test_subtable_keeps_ids(self):
        m, _ = fine_grid(6)
        crt = build_crt(m)
        sub = crt.subtable((0.05, 0.05), 0.15)
        assert isinstance(sub, CostReferenceTable)
        assert sub.size < crt.size
        np.testing.assert_allclose(sub.beta, crt.beta[np.ix_(sub.fine_ids, sub.fine_ids)])

import json

import numpy as np
import pytest

from lrgeo import cli, harness
from lrgeo.evaluation import expected_cost, gv_audit
from lrgeo.formulation import ObfuscationMatrix
from lrgeo.harness import ConfigError, ScenarioConfig
from lrgeo.mechanisms import MechanismConfig


def small_config(out_dir, **kw):
    base = dict(grid_rows=4, grid_cols=4, cell_km=0.3, crt_cell_km=0.1, network="grid",
                mechanism=MechanismConfig(10.0, 0.45, 0.9, 0.9, 0.45),
                n_users=2, laplace_samples=2000, seed=3, out_dir=str(out_dir))
    base.update(kw)
    return ScenarioConfig(**base)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    cfg = small_config(tmp_path_factory.mktemp("run"))
    return harness.cmd_run(cfg)


class TestConfig:
    def test_unknown_mechanism(self):
        with pytest.raises(ConfigError, match="unknown mechanism"):
            ScenarioConfig(mechanisms=["lr-geo", "magic"])

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown configuration keys"):
            ScenarioConfig.from_dict({"grid_rows": 3, "colour": "red"})

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="does not exist"):
            ScenarioConfig(coords_csv="/nonexistent/coords.csv")

    @pytest.mark.parametrize("kw", [dict(placement="fixed", user_ids=[1]),
                                    dict(network="csv"), dict(n_users=0),
                                    dict(crt_cell_km=0.0), dict(placement="clustered")])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            ScenarioConfig(**kw)

    def test_roundtrip_and_overrides(self, tmp_path):
        cfg = small_config(tmp_path)
        path = tmp_path / "cfg.json"
        cfg.dump(path)
        back = ScenarioConfig.load(path)
        assert back == cfg
        o = back.with_overrides(seed=11, out_dir="x", margin_km=0.5)
        assert o.seed == 11 and o.mechanism.seed == 11
        assert o.out_dir == "x" and o.mechanism.convergence_margin_km == 0.5

    def test_rejected_before_compute(self, tmp_path, monkeypatch):
        def boom(*a, **k):
            raise AssertionError("scene built")
        monkeypatch.setattr(harness, "build_scene", boom)
        path = tmp_path / "cfg.json"
        d = small_config(tmp_path).to_dict()
        d["mechanisms"] = ["nope"]
        path.write_text(json.dumps(d))
        assert cli.main(["run", str(path)]) == 2


class TestBuildCrt:
    def test_row_count_and_determinism(self, tmp_path):
        cfg = small_config(tmp_path, grid_rows=1, grid_cols=1, cell_km=1.0)
        a = harness.cmd_build_crt(cfg)
        first = [p.read_bytes() for p in map(lambda x: x, a)]
        lines = first[0].decode().strip().splitlines()
        # 10 x 10 fine grid: every ordered pair plus the header
        assert len(lines) == 100 ** 2 + 1
        b = harness.cmd_build_crt(cfg)
        assert [p.read_bytes() for p in b] == first


class TestRun:
    def test_artifacts(self, run_dir):
        names = {p.name for p in run_dir.iterdir()}
        for mech in ("lr-geo", "laplace", "expmech"):
            assert f"matrices_{mech}.csv" in names
        assert {"timing.csv", "trace_lr-geo.csv", "manifest.json",
                "coefficients_lr-geo.csv"} <= names
        timing = (run_dir / "timing.csv").read_text().strip().splitlines()
        assert timing[0] == "mechanism,K,M,seconds" and len(timing) == 4
        man = harness.read_manifest(run_dir)
        assert man["seed"] == 3 and man["config"]["seed"] == 3
        assert man["lr_geo"]["converged"]

    def test_reproducible(self, run_dir, tmp_path):
        cfg = ScenarioConfig.from_dict(harness.read_manifest(run_dir)["config"])
        again = harness.cmd_run(cfg.with_overrides(out_dir=tmp_path))
        for name in ("matrices_lr-geo.csv", "matrices_laplace.csv", "matrices_expmech.csv",
                     "coefficients_lr-geo.csv", "trace_lr-geo.csv"):
            assert (again / name).read_bytes() == (run_dir / name).read_bytes()

    def test_stage_error(self, tmp_path, monkeypatch):
        def boom(*a, **k):
            raise RuntimeError("solver down")
        monkeypatch.setattr(harness, "run_expmech", boom)
        with pytest.raises(harness.StageError, match="expmech"):
            harness.run_scenario(small_config(tmp_path, mechanisms=["expmech"]))


class TestEvaluate:
    def test_report_cross_checks(self, run_dir):
        rep = harness.cmd_evaluate(run_dir)
        man = harness.read_manifest(run_dir)
        cfg = ScenarioConfig.from_dict(man["config"])
        scene = harness.build_scene(cfg)
        mats = harness.read_matrices(run_dir / "matrices_lr-geo.csv", scene.model.K)
        # recompute from raw matrices
        own = [float(scene.oracle.matrix([u])[0] @ m.row(u)) / scene.p[u]
               for m, u in zip(mats, man["users"])]
        np.testing.assert_allclose(rep["mechanisms"]["lr-geo"]["own_row_cost_km"], own,
                                   rtol=1e-12)
        achieved = sum(expected_cost(m, scene.oracle) for m in mats)
        assert rep["cost"]["achieved_km"] == pytest.approx(achieved, rel=1e-12)
        assert rep["cost"]["approximation_ratio"] >= 1.0
        assert rep["cost"]["lower_bound_km"] <= achieved + 1e-6
        assert achieved <= rep["cost"]["upper_bound_km"] + 1e-6
        audit = gv_audit(mats, scene.model, cfg.mechanism.epsilon_per_km, cfg.mechanism.gamma_km)
        assert rep["privacy"]["gv_ratio"] == pytest.approx(audit.gv_ratio)
        assert rep["attack"]["mean_rows"] >= 1
        csv_lines = (run_dir / "metrics.csv").read_text().strip().splitlines()
        assert csv_lines[0] == "method,K,mean,half_width" and len(csv_lines) == 4

    def test_matches_in_memory(self, tmp_path):
        cfg = small_config(tmp_path)
        res = harness.run_scenario(cfg)
        harness.write_run(res)
        mem = harness.evaluate(res.matrices, res.users, res.scene, cfg, res.c_hats, res.in_range)
        disk = harness.cmd_evaluate(tmp_path)
        for mech in res.matrices:
            assert disk["mechanisms"][mech]["mean_km"] == pytest.approx(
                mem["mechanisms"][mech]["mean_km"], abs=1e-7)
        assert disk["cost"]["achieved_km"] == pytest.approx(mem["cost"]["achieved_km"], abs=1e-6)
        assert disk["privacy"]["n_violations"] == mem["privacy"]["n_violations"]

    def test_identity_fixture(self, tmp_path):
        cfg = small_config(tmp_path, mechanisms=["lr-geo"])
        scene = harness.build_scene(cfg)
        users = [0, 15]
        mats = [ObfuscationMatrix(m, np.array([u]), np.eye(scene.model.K)[[u]])
                for m, u in enumerate(users)]
        rep = harness.evaluate({"lr-geo": mats}, users, scene, cfg)
        assert rep["mechanisms"]["lr-geo"]["mean_km"] == 0.0

        audit = gv_audit(mats, scene.model, 10.0, 0.45)
        assert audit.gv_ratio == 0.0

    def test_missing_artifacts(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            harness.cmd_evaluate(tmp_path)
        assert cli.main(["evaluate", str(tmp_path)]) == 2


class TestAttackAndSweep:
    def test_attack_sim_monotone(self, run_dir):
        cfg = ScenarioConfig.from_dict(harness.read_manifest(run_dir)["config"])
        rows = harness.attack_sim(cfg, [0.05, 0.1, 0.2], run_dir=run_dir)
        means = [r["mean_rows"] for r in rows]
        assert means == sorted(means)
        for a, b in zip(rows, rows[1:]):
            assert np.all(a["counts"] <= b["counts"])
        assert (run_dir / "attack.csv").is_file()

    def test_sweep_users(self, tmp_path):
        cfg = small_config(tmp_path, grid_rows=3, grid_cols=3)
        rows = harness.sweep(cfg, "n_users", [1, 2])
        assert [r["M"] for r in rows] == [1, 2]
        lines = (tmp_path / "sweep_n_users.csv").read_text().strip().splitlines()
        assert len(lines) == 3

    def test_sweep_unknown(self, tmp_path):
        with pytest.raises(ConfigError):
            harness.sweep(small_config(tmp_path), "colour", [1])


def test_cli_end_to_end(tmp_path, capsys):
    cfg = small_config(tmp_path / "out", grid_rows=3, grid_cols=3,
                       mechanisms=["lr-geo", "expmech"])
    path = tmp_path / "cfg.json"
    cfg.dump(path)
    assert cli.main(["build-crt", str(path)]) == 0
    assert cli.main(["run", str(path), "--seed", "5", "--margin-km", "0.001"]) == 0
    assert harness.read_manifest(tmp_path / "out")["seed"] == 5
    assert cli.main(["evaluate", str(tmp_path / "out")]) == 0
    out = capsys.readouterr().out
    assert "lr-geo" in out and "expmech" in out
    assert cli.main(["attack-sim", str(path), "--cells", "0.1,0.2"]) == 0
    assert cli.main(["sweep", str(path), "--param", "gamma_lr_km", "--values", "0.6,0.9"]) == 0

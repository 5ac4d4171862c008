import json
from pathlib import Path

import pytest

from flowmapf.cli import main
from support import ASSETS


def octile_file(tmp_path, rows, name="tiny.map"):
    text = (f"type octile\nheight {len(rows)}\nwidth {len(rows[0])}\nmap\n"
            + "\n".join(rows) + "\n")
    p = tmp_path / name
    p.write_text(text)
    return p


def scen_file(tmp_path, entries, name="tiny.scen"):
    lines = ["version 1"]
    for sx, sy, gx, gy in entries:
        lines.append(f"0\ttiny.map\t8\t8\t{sx}\t{sy}\t{gx}\t{gy}\t1.0")
    p = tmp_path / name
    p.write_text("\n".join(lines) + "\n")
    return p


def traj_csv(tmp_path, name="trajs.csv"):
    lines = ["traj_id,t,x,y"]
    for i in range(24):
        y = 1.5 + (i % 2)
        for t in range(8):
            lines.append(f"u{i},{t},{0.5 + t},{y}")
    p = tmp_path / name
    p.write_text("\n".join(lines) + "\n")
    return p


@pytest.fixture
def grid8(tmp_path):
    return octile_file(tmp_path, ["." * 8] * 8)


class TestFitMod:
    def test_fit_writes_cliffmap(self, tmp_path, grid8, capsys):
        csv = traj_csv(tmp_path)
        out = tmp_path / "mod.json"
        rc = main(["fit-mod", "--trajectories", str(csv), "--map", str(grid8),
                   "--out", str(out)])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert doc["schema_version"] == 1
        assert len(doc["cells"]) > 0
        assert "coverage" in capsys.readouterr().out

    def test_empty_csv_gives_modelless_map(self, tmp_path, grid8, capsys):
        csv = tmp_path / "empty.csv"
        csv.write_text("traj_id,t,x,y\n")
        out = tmp_path / "mod.json"
        rc = main(["fit-mod", "--trajectories", str(csv), "--map", str(grid8),
                   "--out", str(out)])
        assert rc == 0
        assert json.loads(out.read_text())["cells"] == []
        assert "modelless" in capsys.readouterr().out

    def test_bad_schema_exit_2(self, tmp_path, grid8, capsys):
        csv = tmp_path / "bad.csv"
        csv.write_text("foo,bar\n1,2\n")
        rc = main(["fit-mod", "--trajectories", str(csv), "--map", str(grid8),
                   "--out", str(tmp_path / "x.json")])
        assert rc == 2

    def test_missing_file_exit_2(self, tmp_path, grid8):
        rc = main(["fit-mod", "--trajectories", str(tmp_path / "nope.csv"),
                   "--map", str(grid8), "--out", str(tmp_path / "x.json")])
        assert rc == 2


class TestSolve:
    def test_small_solve(self, tmp_path, grid8, capsys):
        scen = scen_file(tmp_path, [(0, 0, 7, 7), (7, 0, 0, 7)])
        out = tmp_path / "run"
        rc = main(["solve", "--map", str(grid8), "--scen", str(scen),
                   "--agents", "2", "--out", str(out)])
        assert rc == 0
        assert "solved" in capsys.readouterr().out
        doc = json.loads((out / "solution.json").read_text())
        assert len(doc["agents"]) == 2
        assert "runtime" not in doc["stats"]
        stats = (out / "stats.csv").read_text()
        assert "True" in stats

    def test_determinism_byte_identical(self, tmp_path, grid8):
        scen = scen_file(tmp_path, [(0, 0, 7, 7), (7, 0, 0, 7), (0, 7, 7, 0)])
        blobs = []
        for d in ("a", "b"):
            out = tmp_path / d
            rc = main(["solve", "--map", str(grid8), "--scen", str(scen),
                       "--agents", "3", "--omega1", "1.2", "--out", str(out)])
            assert rc == 0
            blobs.append((out / "solution.json").read_bytes())
        assert blobs[0] == blobs[1]

    def test_timeout_reports_unsolved_exit_zero(self, tmp_path, capsys):
        grid = octile_file(tmp_path, [".@..", "...."])
        scen = scen_file(tmp_path, [(0, 1, 3, 1), (3, 1, 0, 1)])
        out = tmp_path / "run"
        rc = main(["solve", "--map", str(grid), "--scen", str(scen),
                   "--agents", "2", "--time-limit", "0.0", "--out", str(out)])
        assert rc == 0
        assert "not solved" in capsys.readouterr().out
        assert "False" in (out / "stats.csv").read_text()


class TestGuidanceExport:
    def test_export_json_csv_svg(self, tmp_path, grid8):
        csv = traj_csv(tmp_path)
        mod = tmp_path / "mod.json"
        main(["fit-mod", "--trajectories", str(csv), "--map", str(grid8),
              "--out", str(mod)])
        rc = main(["guidance-export", "--map", str(grid8), "--cliffmap", str(mod),
                   "--out-json", str(tmp_path / "g.json"),
                   "--out-csv", str(tmp_path / "g.csv"),
                   "--svg", str(tmp_path / "g.svg")])
        assert rc == 0
        rows = json.loads((tmp_path / "g.json").read_text())
        assert all(1.0 <= r["omega"] <= 2.0 + 1e-12 for r in rows)
        assert (tmp_path / "g.csv").read_text().startswith("x,y,action,omega")
        assert (tmp_path / "g.svg").read_text().startswith("<?xml")


class TestGenUasEvalConflicts:
    def test_gen_dataset_deterministic(self, tmp_path, grid8):
        cfg = tmp_path / "ua.json"
        cfg.write_text((ASSETS / "ua-random.json").read_text())
        outs = []
        for name in ("u1.csv", "u2.csv"):
            rc = main(["gen-uas", "--map", str(grid8), "--ua-config", str(cfg),
                       "--mode", "dataset", "--n", "30",
                       "--out", str(tmp_path / name)])
            assert rc == 0
            outs.append((tmp_path / name).read_bytes())
        assert outs[0] == outs[1]

    def test_eval_conflicts_on_solution(self, tmp_path, grid8):
        scen = scen_file(tmp_path, [(0, 4, 7, 4)])
        out = tmp_path / "run"
        main(["solve", "--map", str(grid8), "--scen", str(scen),
              "--agents", "1", "--out", str(out)])
        uas = tmp_path / "uas.csv"
        uas.write_text("traj_id,t,x,y\nu0,0,3.5,7.5\nu0,7,3.5,0.5\n")
        rc = main(["eval-conflicts", "--map", str(grid8), "--uas", str(uas),
                   "--solution", str(out / "solution.json"),
                   "--out", str(tmp_path / "conf.json")])
        assert rc == 0
        doc = json.loads((tmp_path / "conf.json").read_text())
        assert doc["total"] >= 1


class TestLifelong:
    def test_smoke_32x32_under_budget(self, tmp_path):
        import time
        out = tmp_path / "run"
        t0 = time.perf_counter()
        rc = main(["lifelong", "--map", str(ASSETS / "empty-32-32.map"),
                   "--agents", "6", "--sim-time", "50", "--replan", "10",
                   "--horizon", "20", "--task-seed", "1",
                   "--ua-config", str(ASSETS / "ua-random.json"),
                   "--out", str(out)])
        elapsed = time.perf_counter() - t0
        assert rc == 0
        assert elapsed < 10.0
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["throughput"] > 0
        assert metrics["ua_conflicts_per_timestep"] is not None
        assert (out / "log.jsonl").exists()
        assert (out / "uas.csv").exists()


class TestBench:
    def test_grid_rows_and_aggregates(self, tmp_path, grid8):
        cfg = {
            "maps": [str(grid8)],
            "variants": ["baseline", "flow-aware"],
            "seeds": [0, 1, 2],
            "agents": 2,
            "sim": {"sim_time": 30, "replan_period": 10, "horizon": 20},
            "ua": {"movement_type": "random", "areas": [], "seed": 5},
            "dataset_size": 60,
            "fit": {"min_observations": 10},
        }
        cfg_path = tmp_path / "bench.json"
        cfg_path.write_text(json.dumps(cfg))
        out = tmp_path / "report"
        rc = main(["bench", "--config", str(cfg_path), "--out", str(out),
                   "--jobs", "1"])
        assert rc == 0
        doc = json.loads((out / "report.json").read_text())
        assert len(doc["rows"]) == 6
        assert len(doc["aggregates"]) == 2
        for agg in doc["aggregates"]:
            sel = [r for r in doc["rows"] if r["variant"] == agg["variant"]]
            mean = sum(r["throughput"] for r in sel) / len(sel)
            assert agg["throughput_mean"] == pytest.approx(mean)
        assert (out / "report.csv").exists()
        assert (out / "ua_conflicts_per_ts.svg").exists()

    def test_missing_map_is_config_error(self, tmp_path):
        cfg_path = tmp_path / "bench.json"
        cfg_path.write_text(json.dumps({"maps": ["/nope.map"], "variants": ["baseline"]}))
        rc = main(["bench", "--config", str(cfg_path), "--out", str(tmp_path / "r")])
        assert rc == 2

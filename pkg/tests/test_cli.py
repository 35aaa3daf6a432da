import csv
import filecmp
import json

import numpy as np
import pytest

from nodefdm import cli, data, evaluation as ev


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("gen-data", "--train", 10, "--val", 2, "--test", 2, "--seed", 7,
               "--out", root / "ds") == 0
    return root


@pytest.fixture(scope="module")
def trained(workspace):
    out = workspace / "train"
    assert run("train", "--data", workspace / "ds" / "manifest.json", "--epochs", 2,
               "--lr", 1e-3, "--out", out) == 0
    return out


def same_bytes(a, b):
    names = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file()
                   and p.name != cli.CONFIG_ECHO)
    assert names == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file()
                           and p.name != cli.CONFIG_ECHO)
    for n in names:
        assert filecmp.cmp(a / n, b / n, shallow=False), n
    return names


class TestGenData:
    def test_layout(self, workspace):
        ds = workspace / "ds"
        assert len(list((ds / "flights").glob("*.csv"))) == 14
        assert (ds / "manifest.json").is_file()
        echo = json.loads((ds / cli.CONFIG_ECHO).read_text())
        assert echo["seed"] == 7 and echo["command"] == "gen-data"

    def test_identical_bytes(self, workspace, tmp_path):
        assert run("gen-data", "--train", 10, "--val", 2, "--test", 2, "--seed", 7,
                   "--out", tmp_path) == 0
        same_bytes(workspace / "ds", tmp_path)

    def test_empty_training_split(self, tmp_path, capsys):
        assert run("gen-data", "--train", 0, "--out", tmp_path) != 0
        assert "empty training split" in capsys.readouterr().err

    def test_config_overrides_flags(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"train": 1, "val": 1, "test": 1, "seed": 3}))
        assert run("gen-data", "--train", 50, "--config", cfg, "--out", tmp_path / "o") == 0
        manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert manifest["seed"] == 3 and len(manifest["splits"]["train"]) == 1

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"colour": "red"}))
        assert run("gen-data", "--config", cfg, "--out", tmp_path / "o") != 0
        assert "colour" in capsys.readouterr().err


class TestTrain:
    def test_outputs(self, trained):
        rows = list(csv.reader(open(trained / "loss.csv")))
        assert rows[0] == ["epoch", "train_loss", "val_loss"]
        assert len(rows) - 1 == 3
        ck = json.loads((trained / "checkpoint.json").read_text())
        assert ck["format"] == "nodefdm-checkpoint"
        assert ck["train_config"]["epochs"] == 2

    def test_zero_epochs(self, workspace, tmp_path):
        assert run("train", "--data", workspace / "ds" / "manifest.json", "--epochs", 0,
                   "--out", tmp_path) == 0
        rows = list(csv.reader(open(tmp_path / "loss.csv")))
        assert len(rows) == 2 and (tmp_path / "checkpoint.json").is_file()

    def test_identical_rerun(self, workspace, trained, tmp_path):
        assert run("train", "--data", workspace / "ds" / "manifest.json", "--epochs", 2,
                   "--lr", 1e-3, "--out", tmp_path) == 0
        same_bytes(trained, tmp_path)

    def test_missing_manifest(self, tmp_path, capsys):
        assert run("train", "--data", tmp_path / "nope.json", "--out", tmp_path) != 0
        assert "not found" in capsys.readouterr().err


@pytest.fixture(scope="module")
def sims(workspace, trained):
    manifest = workspace / "ds" / "manifest.json"
    node_rc = run("simulate", "--data", manifest, "--checkpoint", trained / "checkpoint.json",
                  "--model", "node-fdm", "--out", workspace / "node")
    base_rc = run("simulate", "--data", manifest, "--model", "baseline", "--perturb", 0.03,
                  "--out", workspace / "base")
    return node_rc, base_rc


class TestSimulateEvaluate:

    def test_schema_identical(self, workspace, sims):
        base = sorted((workspace / "base").glob("*.csv"))
        assert sims[1] == 0 and len(base) == 2
        headers = {open(p).readline() for p in base}
        headers |= {open(p).readline() for p in (workspace / "node").glob("*.csv")}
        assert headers == {",".join(data.CSV_COLUMNS) + "\n"}

    def test_horizon(self, workspace, sims):
        refs = {f.tag: f for f in data.load_split(workspace / "ds" / "manifest.json", "test")}
        for path in (workspace / "base").glob("*.csv"):
            assert len(data.ingest_csv(path)) == len(refs[path.stem])

    def test_failures_file_matches_exit_code(self, workspace, sims):
        failures = json.loads((workspace / "node" / "failures.json").read_text())
        assert (sims[0] == 0) == (failures == [])
        written = {p.stem for p in (workspace / "node").glob("*.csv")}
        assert written.isdisjoint({f["tag"] for f in failures})

    def test_abort_listed(self, workspace, tmp_path, capsys):
        # a model that dives immediately
        ck = json.loads((workspace / "train" / "checkpoint.json").read_text())
        head = ck["layers"]["derivative"]["params"]
        head["head.d_fpa.weight"]["data"] = [0.0] * len(head["head.d_fpa.weight"]["data"])
        head["head.d_fpa.bias"]["data"] = [-50.0]
        path = tmp_path / "dive.json"
        path.write_text(json.dumps(ck))
        rc = run("simulate", "--data", workspace / "ds" / "manifest.json", "--checkpoint", path,
                 "--out", tmp_path / "o")
        failures = json.loads((tmp_path / "o" / "failures.json").read_text())
        assert rc != 0 and len(failures) == 2
        assert all(isinstance(f["step"], int) for f in failures)
        assert "FAILED" in capsys.readouterr().err

    def test_evaluate_self(self, workspace, tmp_path):
        ref_dir = workspace / "ds" / "flights"
        # reference CSVs double as perfect predictions
        assert run("evaluate", "--data", workspace / "ds" / "manifest.json",
                   "--baseline", ref_dir, "--out", tmp_path) == 0
        tables, cons = ev.from_json((tmp_path / "metrics.json").read_text())
        for phases in tables["baseline"].rows.values():
            for cell in phases.values():
                assert cell["mae"] == (0.0, 0.0)
        assert cons["baseline"].mae == (0.0, 0.0)

    def test_evaluate_outputs(self, workspace, sims, tmp_path):
        # reference CSVs stand in for a model that completes every flight
        assert run("evaluate", "--data", workspace / "ds" / "manifest.json",
                   "--node", workspace / "ds" / "flights", "--baseline", workspace / "base",
                   "--out", tmp_path) == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        for path in (tmp_path / "plots").glob("*.csv"):
            assert open(path).readline().strip() == ",".join(ev.PLOT_COLUMNS)
        assert len(list((tmp_path / "plots").glob("*.csv"))) == len(summary["evaluated"])
        tables, _ = ev.from_json((tmp_path / "metrics.json").read_text())
        text = (tmp_path / "metrics.txt").read_text()
        mae = tables["baseline"].get("alt", "all", "mae")
        assert f"{mae[0]:.2f} ({mae[1]:.2f})" in text

    def test_evaluate_deterministic(self, workspace, sims, tmp_path):
        for out in ("a", "b"):
            run("evaluate", "--data", workspace / "ds" / "manifest.json",
                "--baseline", workspace / "base", "--out", tmp_path / out)
        same_bytes(tmp_path / "a", tmp_path / "b")

    def test_export_plots(self, workspace, sims, tmp_path):
        run("evaluate", "--data", workspace / "ds" / "manifest.json",
            "--baseline", workspace / "base", "--out", tmp_path / "ev")
        assert run("export-plots", "--plots", tmp_path / "ev" / "plots",
                   "--out", tmp_path / "svg") == 0
        svgs = list((tmp_path / "svg").glob("*.svg"))
        assert len(svgs) == 2
        assert svgs[0].read_text().startswith("<svg")

    def test_evaluate_requires_predictions(self, workspace, tmp_path, capsys):
        assert run("evaluate", "--data", workspace / "ds" / "manifest.json",
                   "--out", tmp_path) != 0


def test_log_level_env(monkeypatch, tmp_path):
    monkeypatch.setenv(cli.LOG_ENV, "bogus")
    assert run("export-plots", "--plots", tmp_path, "--out", tmp_path / "o") != 0

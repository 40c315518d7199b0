import json
import subprocess
import sys

import numpy as np
import pytest

from conceptlogic import config as cfgmod
from conceptlogic.cli import main, resolve_threads
from conceptlogic.concept_bank import save_matrix
from conceptlogic.dataset import read_split, read_world
from conceptlogic.fixtures import fixture_vocabulary, ntu_matrix

TINY = {
    "world": {"T": 4, "V": 6, "D": 8, "num_actions": 4, "n_concepts": 8, "text_dim": 6, "density": 0.4},
    "data": {"n_train": 64, "n_test": 32},
    "model": {"groups_spatial": 2, "groups_sequence": 2, "hidden": 6, "align_dim": 4, "nodes": [6, 6],
              "epochs": 3, "batch_size": 16, "encoder_warmup_epochs": 1, "logic_frozen_epochs": 1},
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(TINY))
    return path


@pytest.fixture
def run_dir(tmp_path, tiny_config):
    out = tmp_path / "run"
    assert main(["train", "--config", str(tiny_config), "--seed", "7", "--out", str(out)]) == 0
    return out


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError, match="bogus"):
        cfgmod.resolve({"model": {"bogus": 1}})
    with pytest.raises(ValueError):
        cfgmod.resolve({"extra": 1})
    with pytest.raises(ValueError):
        cfgmod.resolve(None, **{"model.nope": 3})
    cfg = cfgmod.resolve(TINY, seed=4, **{"model.epochs": 9})
    assert cfg["seed"] == 4 and cfg["model"]["epochs"] == 9 and cfg["model"]["lam"] == 1e-6


def test_threads_resolution(monkeypatch):
    monkeypatch.delenv("REASON_THREADS", raising=False)
    assert resolve_threads(None) == 1
    monkeypatch.setenv("REASON_THREADS", "3")
    assert resolve_threads(None) == 3 and resolve_threads(2) == 2
    monkeypatch.setenv("REASON_THREADS", "many")
    with pytest.raises(ValueError):
        resolve_threads(None)
    with pytest.raises(ValueError):
        resolve_threads(0)


def test_usage_errors_exit_1(tmp_path, capsys):
    assert main(["frobnicate"]) == 1
    assert main(["train", "--no-such-flag"]) == 1
    assert main(["eval"]) == 1  # --model is required
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["data", "gen", "--config", str(bad), "--out", str(tmp_path)]) == 1
    bad.write_text(json.dumps({"model": {"bogus": 1}}))
    assert main(["data", "gen", "--config", str(bad), "--out", str(tmp_path)]) == 1


def test_bad_thread_env_exit_1(monkeypatch, tmp_path):
    monkeypatch.setenv("REASON_THREADS", "x")
    assert main(["bank", "check"]) == 1


def test_bank_check_duplicates(tmp_path, capsys):
    m = ntu_matrix()
    rows = m.entries.copy()
    rows[1] = rows[0]
    dup = type(m)(rows, m.action_names, m.concept_names)
    save_matrix(dup, tmp_path / "m.json")
    assert main(["bank", "check", "--matrix", str(tmp_path / "m.json")]) == 1
    err = capsys.readouterr().err
    assert f"{m.action_names[0]} == {m.action_names[1]}" in err


def test_bank_check_fixture_ok(capsys):
    assert main(["bank", "check", "--fixture", "desk67"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["concepts"] == {"spatial": 51, "temporal": 15, "interaction": 1}


def test_bank_build(tmp_path):
    assert main(["bank", "build", "--out", str(tmp_path)]) == 0
    clusters = json.loads((tmp_path / "clusters.json").read_text())
    assert {"schema_version", "config_hash", "seed"} <= set(clusters)
    assert len(fixture_vocabulary("ntu74")) == len(json.loads((tmp_path / "vocabulary.json").read_text())["concepts"])


def test_data_gen_layout(tmp_path, tiny_config):
    out = tmp_path / "d"
    assert main(["data", "gen", "--config", str(tiny_config), "--out", str(out)]) == 0
    header = json.loads((out / "train.json").read_text())
    assert header["shape"] == [64, 4, 6, 8] and header["dtype"] == "float32"
    raw = np.frombuffer((out / "train.bin").read_bytes(), dtype="<f4")
    assert raw.size == 64 * 4 * 6 * 8
    world, cfg = read_world(out)
    batch = read_split(out, "train", world)
    np.testing.assert_array_equal(batch.features.ravel(), raw)
    assert cfg["world"]["T"] == 4


def test_train_and_downstream_commands(run_dir, tmp_path, capsys):
    records = [json.loads(l) for l in (run_dir / "metrics.ndjson").read_text().splitlines()]
    assert [r["epoch"] for r in records] == [1, 2, 3]
    run = json.loads((run_dir / "run.json").read_text())
    assert run["seed"] == 7 and run["status"] == "ok"
    out = tmp_path / "reports"
    out.mkdir()
    assert main(["eval", "--model", str(run_dir), "--out", str(out)]) == 0
    ev = json.loads((out / "eval.json").read_text())
    assert ev["config_hash"] == run["config_hash"] and 0 <= ev["acc"] <= 1
    assert main(["rules", "extract", "--model", str(run_dir), "--out", str(out)]) == 0
    rules = json.loads((out / "rules.json").read_text())
    assert rules["schema_version"] == 1 and len(rules["rules"]) == 2 * 8 + 4 * 6
    assert main(["explain", "--model", str(run_dir), "--index", "1", "--action", "action_0",
                 "--out", str(out)]) == 0
    assert json.loads((out / "explain.json").read_text())["index"] == 1
    assert main(["explain", "--model", str(run_dir), "--index", "999", "--out", str(out)]) == 1
    assert main(["intervene", "--model", str(run_dir), "--max-level", "2", "--out", str(out)]) == 0
    assert json.loads((out / "intervention.json").read_text())["levels"] == [0, 1, 2]
    groups = tmp_path / "g.json"
    groups.write_text(json.dumps({"first": ["action_0", "action_1"]}))
    assert main(["stats", "--model", str(run_dir), "--groups", str(groups), "--out", str(out)]) == 0
    assert "first" in json.loads((out / "stats.json").read_text())["per_group"]


def test_train_from_dataset_dir(tmp_path, tiny_config):
    data = tmp_path / "d"
    assert main(["data", "gen", "--config", str(tiny_config), "--seed", "2", "--out", str(data)]) == 0
    out = tmp_path / "r"
    assert main(["train", "--config", str(tiny_config), "--data", str(data), "--epochs", "2",
                 "--out", str(out)]) == 0
    assert len((out / "metrics.ndjson").read_text().splitlines()) == 2


def test_train_is_deterministic(tmp_path, tiny_config):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "--config", str(tiny_config), "--seed", "7", "--threads", "1", "--out", str(out)]) == 0
        outs.append(out)
    for f in ("metrics.ndjson", "checkpoint/manifest.json", "checkpoint/tensors.bin", "run.json"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes(), f


def test_missing_model_exit_1(tmp_path):
    assert main(["eval", "--model", str(tmp_path / "none")]) == 1


def test_gradcheck_subset(tmp_path, capsys):
    assert main(["gradcheck", "--component", "classifier", "--component", "align", "--points", "2",
                 "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "gradcheck.json").read_text())
    assert [c["name"] for c in report["components"]] == ["classifier", "align"]
    assert "PASS" in capsys.readouterr().out


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "conceptlogic.cli", "bank", "check", "--fixture", "ntu74"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "conceptlogic.cli", "nonsense"], capture_output=True, text=True)
    assert proc.returncode == 1

import json
import math

import pytest

from duetgraph.cli import run_command
from duetgraph.config import ConfigError, RunConfig, config_from_dict, parse_config
from duetgraph.kg_data import write_split
from duetgraph.synthetic import kinship_split

FAST = {"epochs": 1, "coarse_epochs": 1, "hidden_dim": 4, "coarse_dim": 4, "negatives": 4,
        "local_layers": 1, "max_queries": 6}


# -- config ----------------------------------------------------------------

def test_empty_config_is_defaults():
    assert config_from_dict({}) == RunConfig()


def test_override_and_rejections():
    assert config_from_dict({"hidden_dim": 64}).hidden_dim == 64
    for bad in ({"k": 0}, {"hidden_dim": 2.5}, {"mode": "semi"}, {"lr": -1.0}, {"delta": "lots"},
                {"epochs": True}, {"max_queries": 0}):
        with pytest.raises(ConfigError):
            config_from_dict(bad)


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="hiden_dim"):
        config_from_dict({"hiden_dim": 3})


def test_delta_infinity():
    assert config_from_dict({"delta": "inf"}).delta == math.inf
    assert config_from_dict({"delta": 0}).delta == 0.0
    assert config_from_dict({"delta": "inf"}).to_dict()["delta"] == "inf"


def test_malformed_json_and_relative_dataset(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{oops", encoding="utf-8")
    with pytest.raises(ConfigError, match="malformed"):
        parse_config(bad)
    good = tmp_path / "c.json"
    good.write_text(json.dumps({"dataset_dir": "data"}), encoding="utf-8")
    assert parse_config(good).dataset_dir == str(tmp_path / "data")


def test_seed_streams():
    cfg = config_from_dict({"seed": 10})
    assert cfg.fine_train_config().seed == 10 and cfg.coarse_train_config().seed == 11


# -- cli -------------------------------------------------------------------

@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    write_split(root / "data", kinship_split(20, seed=1))
    (root / "c.json").write_text(json.dumps({"dataset_dir": "data", **FAST}), encoding="utf-8")
    return root


def _run(ws, *argv):
    return run_command([a if not a.startswith("@") else str(ws / a[1:]) for a in argv])


def test_usage_errors(workspace, capsys):
    assert run_command(["frobnicate"]) == 2
    assert run_command(["eval", "--config", "x.json"]) == 2
    assert _run(workspace, "train-fine", "--config", "@missing.json", "--out", "@f.ckpt") == 2
    assert "error" in capsys.readouterr().err


def test_missing_checkpoint_is_runtime_failure(workspace):
    assert _run(workspace, "eval", "--config", "@c.json", "--fine", "@nope.ckpt", "--coarse", "@nope.ckpt",
                "--out", "@m.json") == 1


def test_end_to_end_reproducible(workspace):
    outs = []
    for tag in ("a", "b"):
        assert _run(workspace, "train-coarse", "--config", "@c.json", "--out", f"@{tag}/coarse.ckpt") == 0
        assert _run(workspace, "train-fine", "--config", "@c.json", "--out", f"@{tag}/fine.ckpt",
                    "--log", f"@{tag}/fine.log") == 0
        assert _run(workspace, "eval", "--config", "@c.json", "--fine", f"@{tag}/fine.ckpt",
                    "--coarse", f"@{tag}/coarse.ckpt", "--out", f"@{tag}/m.json",
                    "--variants", "full,fine_only") == 0
        outs.append({n: (workspace / tag / n).read_bytes()
                     for n in ("coarse.ckpt", "fine.ckpt", "m.json", "m.json.manifest.json")})
    assert outs[0] == outs[1]
    metrics = json.loads(outs[0]["m.json"])
    assert set(metrics) == {"full", "fine_only"} and metrics["full"]["n_queries"] == 6
    side = json.loads(outs[0]["m.json.manifest.json"])
    assert side["command"] == "eval" and side["seed"] == 42 and "fine" in side["inputs"]
    assert len(side["output"]["sha256"]) == 64


def test_predict_diagnose_gap_hist(workspace):
    ws = workspace
    assert _run(ws, "train-coarse", "--config", "@c.json", "--out", "@p/coarse.ckpt") == 0
    assert _run(ws, "train-fine", "--config", "@c.json", "--out", "@p/fine.ckpt") == 0
    models = ["--fine", "@p/fine.ckpt", "--coarse", "@p/coarse.ckpt"]
    assert _run(ws, "predict", "--config", "@c.json", *models, "--out", "@p/pred.jsonl") == 0
    rows = [json.loads(x) for x in (ws / "p" / "pred.jsonl").read_text().splitlines()]
    assert len(rows) == 6 and all(r["top10"][0] == r["chosen"] for r in rows)
    assert _run(ws, "diagnose", "--config", "@c.json", "--fine", "@p/fine.ckpt", "--out", "@p/diag.json",
                "--curves", "@p/curves.csv", "--queries", "2", "--pairs", "20") == 0
    diag = json.loads((ws / "p" / "diag.json").read_text())
    assert diag["passed"] and len(diag["instances"]) == 2
    assert (ws / "p" / "curves.csv").read_text().startswith("ell,single_bound,dual_bound\n")
    assert _run(ws, "gap-hist", "--config", "@c.json", *models, "--out", "@p/h.csv", "--which", "coarse") == 0
    assert (ws / "p" / "h.csv").read_text().startswith("bin_lo,bin_hi,count\n")
    assert (ws / "p" / "h.csv.manifest.json").exists()


def test_bad_variant_is_usage_error(workspace):
    ws = workspace
    assert _run(ws, "train-coarse", "--config", "@c.json", "--out", "@v/coarse.ckpt") == 0
    assert _run(ws, "train-fine", "--config", "@c.json", "--out", "@v/fine.ckpt") == 0
    assert _run(ws, "eval", "--config", "@c.json", "--fine", "@v/fine.ckpt", "--coarse", "@v/coarse.ckpt",
                "--out", "@v/m.json", "--variants", "full,bogus") == 2

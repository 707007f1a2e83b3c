import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from risklab import evaluation as ev
from risklab.cli import main
from risklab.config import RunConfig, apply_preset, load_config, parse_config
from risklab.dataset import BagRecord, write_dataset
from risklab.errors import ConfigError
from risklab.learner import initial_params, read_loss_trace
from risklab.riskmodel import PackedBags, load_params, save_params, RiskParams

SMALL = {"bags": {"n_users": 300}, "train": {"iterations": 50}}


def write_config(path, data):
    path.write_text(json.dumps(data))
    return str(path)


@pytest.fixture
def cfg(tmp_path):
    return write_config(tmp_path / "cfg.json", SMALL)


@pytest.fixture
def simulated(tmp_path, cfg):
    out = tmp_path / "sim"
    assert main(["simulate", "--config", cfg, "--seed", "4", "--out", str(out)]) == 0
    return out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_simulate_outputs(simulated):
    manifest = json.loads((simulated / "manifest.json").read_text())
    assert manifest["seed"] == 4 and len(manifest["config_hash"]) == 64
    assert manifest["n_pool_events"] == 4200
    assert len(manifest["train_user_ids"]) == 240 and len(manifest["test_user_ids"]) == 60
    assert len((simulated / "dataset.jsonl").read_text().splitlines()) == 300
    assert len(read_csv(simulated / "oracle.csv")) == 300


def test_simulate_byte_identical(tmp_path, cfg, simulated):
    other = tmp_path / "again"
    assert main(["simulate", "--config", cfg, "--seed", "4", "--out", str(other)]) == 0
    for name in ("dataset.jsonl", "manifest.json", "oracle.csv"):
        assert (other / name).read_bytes() == (simulated / name).read_bytes()


def test_full_grid_manifest_reports_33600(tmp_path):
    grid = {"n_dist": 80, "n_dur": 20, "n_onset": 21}
    path = write_config(tmp_path / "full.json", {"grid": grid, "bags": {"n_users": 50}})
    assert main(["simulate", "--config", path, "--out", str(tmp_path / "p")]) == 0
    assert json.loads((tmp_path / "p" / "manifest.json").read_text())["n_pool_events"] == 33600


def test_reference_lambda_preset(tmp_path, capsys):
    cfg = apply_preset(RunConfig(), "paper-lambda")
    assert cfg.experiment.resolved_sim().lam == 3.1e-6
    # on the full grid the reference lambda yields almost no positive events
    path = write_config(tmp_path / "c.json", {"grid": {"n_dist": 80, "n_dur": 20}, "bags": {"n_users": 20}})
    assert main(["simulate", "--config", path, "--preset", "paper-lambda", "--out", str(tmp_path / "x")]) == 2
    assert "positive events" in capsys.readouterr().err


def test_invalid_range_names_field(tmp_path, capsys):
    path = write_config(tmp_path / "bad.json", {"sim": {"d_min_sq": 0}})
    assert main(["simulate", "--config", path, "--out", str(tmp_path)]) == 2
    assert "d_min_sq" in capsys.readouterr().err


def test_unknown_key_is_config_error(tmp_path, capsys):
    path = write_config(tmp_path / "bad.json", {"bags": {"bag_size": 4}})
    assert main(["simulate", "--config", path, "--out", str(tmp_path)]) == 2
    assert "bag_size" in capsys.readouterr().err


def test_unwritable_output_is_io_error(tmp_path, cfg, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["simulate", "--config", cfg, "--out", str(blocker / "sub")]) == 3
    assert str(blocker / "sub") in capsys.readouterr().err


def test_train_outputs(tmp_path, cfg, simulated):
    out = tmp_path / "fit"
    assert main(["train", "--data", str(simulated / "dataset.jsonl"), "--config", cfg, "--seed", "4",
                 "--out", str(out)]) == 0
    params = load_params(out / "params.json")
    save_params(params, tmp_path / "copy.json")
    assert load_params(tmp_path / "copy.json") == params
    it, _, _ = read_loss_trace(out / "loss_trace.csv")
    assert len(it) == 50


def test_zero_iterations_gives_initialization(tmp_path, simulated):
    cfg0 = write_config(tmp_path / "c0.json", {**SMALL, "train": {"iterations": 0}})
    out = tmp_path / "fit0"
    assert main(["train", "--data", str(simulated / "dataset.jsonl"), "--config", cfg0, "--out", str(out)]) == 0
    from risklab.dataset import read_dataset
    manifest = json.loads((simulated / "manifest.json").read_text())
    recs = {r.user_id: r for r in read_dataset(simulated / "dataset.jsonl")}
    packed = PackedBags.from_records([recs[i] for i in manifest["train_user_ids"]])
    assert load_params(out / "params.json") == initial_params(packed).to_risk_params()
    assert len(read_loss_trace(out / "loss_trace.csv")[0]) == 0


def test_train_reports_bad_line(tmp_path, capsys):
    bad = tmp_path / "dataset.jsonl"
    bad.write_text('{"user_id":0,"label":1,"events":[]}\n{"user_id":1,"label":1,"events":[[1,2]]}\n')
    assert main(["train", "--data", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_evaluate_swiss_without_params(tmp_path, simulated):
    out = tmp_path / "ev"
    assert main(["evaluate", "--data", str(simulated / "dataset.jsonl"), "--preset", "swiss", "--out", str(out)]) == 0
    rows = read_csv(out / "evaluation.csv")
    assert [(r["method"], r["split"]) for r in rows] == [
        ("swiss", "train"), ("oracle", "train"), ("swiss", "test"), ("oracle", "test")]
    assert [r["n_bags"] for r in rows] == ["240", "240", "60", "60"]


def test_cli_pipeline_matches_run_trial(tmp_path, cfg, simulated):
    fit, out = tmp_path / "fit", tmp_path / "ev"
    data = str(simulated / "dataset.jsonl")
    assert main(["train", "--data", data, "--config", cfg, "--seed", "4", "--out", str(fit)]) == 0
    assert main(["evaluate", "--data", data, "--params", str(fit / "params.json"), "--preset", "swiss",
                 "--out", str(out)]) == 0
    got = {(r["method"], r["split"]): float(r["auc"]) for r in read_csv(out / "evaluation.csv")}
    expected = {(r.method, r.split): r.auc for r in ev.run_trial(load_config(cfg).experiment, 4)}
    assert got == expected


def test_evaluate_missing_dataset(tmp_path):
    assert main(["evaluate", "--data", str(tmp_path / "nope.jsonl"), "--preset", "swiss",
                 "--out", str(tmp_path)]) == 3


def test_evaluate_rejects_invalid_params(tmp_path, simulated, capsys):
    bad = tmp_path / "bad.json"
    save_params(RiskParams((50, 60, 70), (1, 2, 0, 0), (1, 1), 1.0), bad)
    assert main(["evaluate", "--data", str(simulated / "dataset.jsonl"), "--params", str(bad),
                 "--out", str(tmp_path)]) == 2
    assert "non-increasing" in capsys.readouterr().err


def test_single_class_split_exit_code(tmp_path, capsys):
    d = tmp_path / "d"
    d.mkdir()
    recs = [BagRecord(i, int(i < 3), [(10.0, 50.0, 3, 1)]) for i in range(6)]
    write_dataset(recs, d / "dataset.jsonl")
    (d / "manifest.json").write_text(json.dumps({"train_user_ids": [0, 3, 4], "test_user_ids": [1, 2]}))
    assert main(["evaluate", "--data", str(d / "dataset.jsonl"), "--preset", "swiss", "--out", str(d)]) == 4
    assert "test split" in capsys.readouterr().err


def test_sweep_outputs_and_determinism(tmp_path):
    path = write_config(tmp_path / "s.json", {**SMALL, "sweep": {"axis": "bag_size", "values": [4, 8], "n_trials": 2}})
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["sweep", "--config", path, "--out", str(a)]) == 0
    assert main(["sweep", "--config", path, "--out", str(b)]) == 0
    assert len(read_csv(a / "results.csv")) == 2 * 2 * 6
    assert len(read_csv(a / "summary.csv")) == 2 * 6
    for name in ("results.csv", "summary.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert ev.read_results(a / "results.csv")[0].axis_value == 4


def test_sweep_axis_defaults():
    assert list(parse_config({"sweep": {"axis": "censor_prob"}}).sweep.values) == ev.DEFAULT_AXIS_VALUES["censor_prob"]
    assert list(parse_config({"sweep": {"axis": "taylor_terms"}}).sweep.values) == [2, 4, 6, 8]
    assert list(parse_config({"sweep": {"values": [4, 8, 16, 32]}}).sweep.values) == [4, 8, 16, 32]


def test_config_strictness_and_hash():
    base = parse_config({})
    assert base.config_hash() == RunConfig().config_hash()
    assert parse_config({"seed": 1}).config_hash() != base.config_hash()
    assert parse_config({"output_dir": "x"}).config_hash() == base.config_hash()
    for bad in ({"colour": 1}, {"sim": {"lam": 1}}, {"sweep": {"axis": "speed"}}, {"seed": -1},
                {"train": {"iterations": "many"}}, {"sim": {"target_positive_rate": 2}}, {"lut": {"low": []}}):
        with pytest.raises(ConfigError):
            parse_config(bad)


def test_config_to_dict_round_trip():
    cfg = parse_config({"sim": {"lambda": 0.01, "taylor_terms": 4}, "bags": {"positive_scenario": "ExactlyOne"},
                        "grid": {"n_dist": 5}, "seed": 3})
    again = parse_config(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg and again.config_hash() == cfg.config_hash()


def test_console_script_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "risklab.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "simulate" in out.stdout

import csv
import json
from importlib import resources

import jsonschema
import numpy as np
import pytest

from cpsfalsify import nn
from cpsfalsify.cli import main
from cpsfalsify.config import shipped_config
from cpsfalsify.data import load_dataset_csv, load_model


def schema(name):
    return json.loads((resources.files("cpsfalsify") / "schemas" / name).read_text())


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def write(path, text):
    path.write_text(text)
    return path


@pytest.fixture
def trace012(tmp_path):
    return write(tmp_path / "t.csv", "time,x\n0,0\n1,1\n2,2\n")


# monitor

def test_monitor_prints_six_decimals(capsys, trace012):
    code, out, _ = run(capsys, "monitor", trace012, "G[0,2](x >= 0)")
    assert code == 0 and out == "sat=true rob=0.000000\n"
    code, out, _ = run(capsys, "monitor", trace012, "F[0,1](x > 1.5)")
    assert code == 0 and out == "sat=false rob=-0.500000\n"


def test_monitor_formula_file(capsys, tmp_path, trace012):
    f = write(tmp_path / "phi.stl", "(x >= 0) U[0,2] (x >= 2)\n")
    assert run(capsys, "monitor", trace012, "--formula-file", f)[1] == "sat=true rob=0.000000\n"


def test_monitor_syntax_error_shows_caret(capsys, trace012):
    code, out, err = run(capsys, "monitor", trace012, "G[0,2](x >= )")
    assert code == 2 and out == ""
    lines = err.splitlines()
    assert lines[1] == "G[0,2](x >= )"
    assert lines[2].index("^") == 12


def test_monitor_domain_errors(capsys, trace012):
    assert run(capsys, "monitor", trace012, "G[0,9](x >= 0)")[0] == 2
    assert run(capsys, "monitor", trace012, "speed >= 0")[0] == 2


def test_bad_usage_exit_code(capsys):
    assert run(capsys, "bogus")[0] == 2
    assert run(capsys, "falsify")[0] == 2


# falsify

def test_falsify_perfect_and_weak(capsys, tmp_path):
    code, out, _ = run(capsys, "falsify", "--config", shipped_config("perfect_demo.yaml"),
                       "--out", tmp_path / "p")
    assert code == 0 and "status=proved_on_grid" in out
    code, out, _ = run(capsys, "falsify", "--config", shipped_config("weak_demo.yaml"),
                       "--out", tmp_path / "w")
    assert code == 0 and "status=violation_found" in out
    for d in ("p", "w"):
        doc = json.loads((tmp_path / d / "report.json").read_text())
        jsonschema.validate(doc, schema("falsify_report.schema.json"))
        assert doc["stats"]["simulations"] <= 2000
        with open(tmp_path / d / "cells.csv") as fh:
            assert len(list(csv.reader(fh))) == 97


def test_falsify_small_budget_fails_before_simulating(capsys, tmp_path, monkeypatch):
    import cpsfalsify.cli as cli
    text = shipped_config("perfect_demo.yaml").read_text().replace("budget: 2000", "budget: 100")
    cfg = write(tmp_path / "c.yaml", text)

    def boom(*a, **k):
        raise RuntimeError("simulated")

    monkeypatch.setattr(cli, "falsification_loop", boom)
    code, _, err = run(capsys, "falsify", "--config", cfg, "--out", tmp_path / "o")
    assert code == 2 and "budget" in err
    assert not (tmp_path / "o").exists()


def test_falsify_requires_seed(capsys, tmp_path):
    text = shipped_config("perfect_demo.yaml").read_text().replace("seed: 3\n", "")
    cfg = write(tmp_path / "c.yaml", text)
    code, _, err = run(capsys, "falsify", "--config", cfg, "--out", tmp_path / "o")
    assert code == 2 and "seed" in err
    assert run(capsys, "falsify", "--config", cfg, "--seed", 1, "--out", tmp_path / "o")[0] == 0


def test_outputs_never_overwritten_without_force(capsys, tmp_path):
    args = ["falsify", "--config", shipped_config("perfect_demo.yaml"), "--out", tmp_path / "o"]
    assert run(capsys, *args)[0] == 0
    before = (tmp_path / "o" / "report.json").read_bytes()
    code, _, err = run(capsys, *args)
    assert code == 2 and "--force" in err
    assert run(capsys, *args, "--force")[0] == 0
    assert (tmp_path / "o" / "report.json").read_bytes() == before


# train

TRAIN_CFG = "seed: 4\ndataset: {n: 120, seed: 4}\nepochs: 3\neta: 0.05\n"


def test_train_writes_model_and_metrics(capsys, tmp_path):
    cfg = write(tmp_path / "t.yaml", TRAIN_CFG)
    assert run(capsys, "train", "--config", cfg, "--out", tmp_path / "a")[0] == 0
    m = load_model(tmp_path / "a" / "model.npz")
    assert m.sizes == [256, 32, 2]
    with open(tmp_path / "a" / "metrics.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epoch", "train_accuracy", "train_logloss", "val_accuracy", "val_logloss"]
    assert len(rows) == 4


def test_train_is_byte_reproducible(capsys, tmp_path):
    cfg = write(tmp_path / "t.yaml", TRAIN_CFG)
    run(capsys, "train", "--config", cfg, "--out", tmp_path / "a")
    run(capsys, "train", "--config", cfg, "--out", tmp_path / "b")
    for name in ("model.npz", "metrics.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_train_missing_dataset(capsys, tmp_path):
    cfg = write(tmp_path / "t.yaml", "seed: 1\ndataset: missing.csv\n")
    code, _, err = run(capsys, "train", "--config", cfg, "--out", tmp_path / "o")
    assert code == 2 and "missing.csv" in err
    assert not (tmp_path / "o").exists()


def test_train_bad_config(capsys, tmp_path):
    cfg = write(tmp_path / "t.yaml", "seed: 1\ndataset: {n: 20, seed: 1}\nbatch_mode: odd\n")
    assert run(capsys, "train", "--config", cfg, "--out", tmp_path / "o")[0] == 2
    cfg = write(tmp_path / "u.yaml", "- not a mapping\n")
    assert run(capsys, "train", "--config", cfg, "--out", tmp_path / "o")[0] == 2


def test_train_k_sweep_csv(capsys, tmp_path):
    cfg = write(tmp_path / "s.yaml", "seed: 2\ndataset: {n: 100, seed: 2}\nepochs: 2\n"
                                     "eta: 0.02\nks: [0.0, -0.1]\n")
    assert run(capsys, "train", "--config", cfg, "--out", tmp_path / "o")[0] == 0
    with open(tmp_path / "o" / "hinge_sweep.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["k", "acc_original", "logloss_original", "acc_countex", "logloss_countex"]
    assert [float(r[0]) for r in rows[1:]] == [0.0, -0.1]


# attack

@pytest.fixture
def attack_setup(capsys, tmp_path):
    cfg = write(tmp_path / "t.yaml", TRAIN_CFG)
    run(capsys, "train", "--config", cfg, "--out", tmp_path / "m")
    return tmp_path


def attack_cfg(tmp_path, block, extra=""):
    return write(tmp_path / "a.yaml", f"seed: 1\nmodel: m/model.npz\n"
                                      f"dataset: {{n: 12, seed: 9}}\nattack: {block}\n{extra}")


def test_fgsm_zero_epsilon_success_is_base_error(capsys, attack_setup):
    tmp = attack_setup
    cfg = attack_cfg(tmp, "{kind: fgsm, epsilon: 0.0}")
    assert run(capsys, "attack", "--config", cfg, "--out", tmp / "o")[0] == 0
    doc = json.loads((tmp / "o" / "results.json").read_text())
    jsonschema.validate(doc, schema("attack_results.schema.json"))
    model = load_model(tmp / "m" / "model.npz")
    adv = load_dataset_csv(tmp / "o" / "adversarial.csv")
    assert doc["success_rate"] == pytest.approx(1 - nn.accuracy(model, adv))
    assert doc["success_rate"] == pytest.approx(np.mean([r["success"] for r in doc["results"]]))


@pytest.mark.parametrize("block", ["{kind: jsma, theta: 0.1, budget: 20}",
                                   "{kind: cw, c_schedule: [1.0], steps: 20}",
                                   "{kind: blackbox, epsilon: 0.2, max_rounds: 2}"])
def test_other_attacks_emit_valid_json(capsys, attack_setup, block):
    tmp = attack_setup
    cfg = attack_cfg(tmp, block, "seed_set: {n: 10, seed: 3}\nlimit: 4\n")
    assert run(capsys, "attack", "--config", cfg, "--out", tmp / "o")[0] == 0
    doc = json.loads((tmp / "o" / "results.json").read_text())
    jsonschema.validate(doc, schema("attack_results.schema.json"))
    assert doc["n"] == 4
    if "blackbox" in block:
        assert all(r["oracle_queries"] <= 10 + 2 for r in doc["results"])


def test_unknown_attack(capsys, attack_setup):
    cfg = attack_cfg(attack_setup, "{kind: deepfool}")
    code, _, err = run(capsys, "attack", "--config", cfg, "--out", attack_setup / "o")
    assert code == 2 and "deepfool" in err


def test_attack_mask(capsys, attack_setup):
    tmp = attack_setup
    write(tmp / "mask.csv", ",".join(["1"] * 128 + ["0"] * 128) + "\n")
    cfg = attack_cfg(tmp, "{kind: fgsm, epsilon: 0.1, mask: mask.csv}")
    assert run(capsys, "attack", "--config", cfg, "--out", tmp / "o")[0] == 0
    from cpsfalsify import aebs
    clean = aebs.make_training_set(12, 9)
    adv = load_dataset_csv(tmp / "o" / "adversarial.csv")
    assert np.array_equal(adv.X[:, :128], clean.X[:, :128])


# advtrain, simulate

def test_advtrain(capsys, attack_setup):
    tmp = attack_setup
    cfg = write(tmp / "r.yaml", "seed: 1\nmodel: m/model.npz\ndataset: {n: 20, seed: 2}\n"
                                "retrain: {method: fgsm, lam: 1.0, epsilon: 0.1, epochs: 2}\n")
    assert run(capsys, "advtrain", "--config", cfg, "--out", tmp / "o")[0] == 0
    assert load_model(tmp / "o" / "model.npz").sizes == [256, 32, 2]
    cfg = write(tmp / "r.yaml", "seed: 1\nmodel: m/model.npz\ndataset: {n: 20, seed: 2}\n"
                                "retrain: {method: pgd}\n")
    assert run(capsys, "advtrain", "--config", cfg, "--out", tmp / "p")[0] == 2


def test_simulate_then_monitor(capsys, tmp_path):
    cfg = write(tmp_path / "s.yaml", "seed: 0\nenv: {z_dist: 20.0, brightness: 0.5}\n"
                                     "model: completely_wrong\n")
    code, out, _ = run(capsys, "simulate", "--config", cfg, "--out", tmp_path / "o", "--images")
    assert code == 0 and "impact_speed=" in out
    frames = sorted((tmp_path / "o" / "images").iterdir())
    assert frames and len(frames) < 51
    code, out, _ = run(capsys, "monitor", tmp_path / "o" / "trace.csv", "G[0,5](dist >= 2)")
    assert code == 0 and out.startswith("sat=false rob=-2.000000")


def test_report_single_experiment(capsys, tmp_path):
    code, out, _ = run(capsys, "report", "--out", tmp_path / "r", "--only", "falsification_demo")
    assert code == 0 and "falsification_demo" in out
    assert (tmp_path / "r" / "falsify_weak.json").exists()
    assert run(capsys, "report", "--out", tmp_path / "r", "--only", "falsification_demo")[0] == 2
    assert run(capsys, "report", "--out", tmp_path / "x", "--only", "nope")[0] == 2

"""Desk-scale experiment sweeps.

Every function here is deterministic given its config: it trains what it
needs from seeds, writes its results (JSON, CSV) into ``out_dir`` and returns
a JSON-serialisable summary. The CLI ``report`` command and the acceptance
tests both drive these functions.
"""
from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from . import aebs, nn
from .advtrain import SYSTEM_LEVEL, AugmentConfig, CounterexampleSet, augment_retrain, hinge_train
from .aebs import COW, VehicleState, impact_speed, render_scene, simulate
from .attacks import Misclassify, black_box_attack, cw_attack, fgsm, jsma
from .config import (dataset_from, load_yaml, model_from, shipped_config, sim_from,
                     space_from)
from .data import Dataset
from .falsify import VIOLATION_FOUND, CellSet, FalsifyReport, compute_rou, falsification_loop
from .stl import eval_robustness, parse_stl

log = logging.getLogger(__name__)

FGSM_EPSILONS = (0.0, 0.05, 0.1, 0.2)


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cfg(cfg, name: str) -> dict:
    return load_yaml(shipped_config(name)) if cfg is None else dict(cfg)


def _out(out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def train_classifier(cfg: dict, loss: nn.LossKind = nn.CrossEntropy(),
                     epochs: Optional[int] = None, eta: Optional[float] = None) -> tuple:
    """Build the dataset, split it and train an MLP: ``(model, train, test)``."""
    seed = int(cfg["seed"])
    data = dataset_from(cfg["dataset"])
    train, test = data.split(float(cfg.get("train_fraction", 0.8)), seed)
    sizes = [data.width] + [int(h) for h in cfg.get("hidden", [32])] + [2]
    tc = nn.TrainConfig(loss=loss, epochs=int(epochs or cfg.get("epochs", 40)),
                        eta=float(eta or cfg.get("eta", 0.05)), seed=seed)
    return nn.train(nn.init_model(sizes, seed), train, tc), train, test


# --- attacks -----------------------------------------------------------------

def attack_efficacy(out_dir, cfg: Optional[dict] = None, n_points: int = 50,
                    cw_steps: int = 500) -> dict:
    """FGSM over an epsilon ladder plus targeted JSMA and CW on held-out points."""
    cfg = _cfg(cfg, "classifier.yaml")
    model, train, test = train_classifier(cfg)
    pts = test.subset(np.arange(min(n_points, len(test))))
    fg = {}
    for eps in FGSM_EPSILONS:
        res = [fgsm(model, x, y, eps) for x, y in pts]
        fg[repr(eps)] = {
            "success_rate": float(np.mean([r.success for r in res])),
            "mean_l2": float(np.mean([np.linalg.norm(r.delta) for r in res])),
        }
    # targeted attacks aim at the other class from correctly classified points
    correct = [(x, y) for x, y in pts if int(nn.predict(model, x)) == y]
    js = [jsma(model, x, 1 - y, theta=0.05, budget=200) for x, y in correct]
    cw = [cw_attack(model, x, 1 - y, c_schedule=(0.1, 1.0, 10.0), steps=cw_steps)
          for x, y in correct]
    cw_ok = [np.linalg.norm(r.delta) for r in cw if r.success]
    full = [e for e in FGSM_EPSILONS if fg[repr(e)]["success_rate"] == 1.0]
    summary = {
        "train_accuracy": nn.accuracy(model, train),
        "test_accuracy": nn.accuracy(model, test),
        "n_train": len(train),
        "n_points": len(pts),
        "n_targeted": len(correct),
        "fgsm": fg,
        "fgsm_full_success_epsilon": full[0] if full else None,
        "jsma_success_rate": float(np.mean([r.success for r in js])),
        "jsma_mean_l0": float(np.mean([r.metric_value for r in js])),
        "cw_success_rate": float(np.mean([r.success for r in cw])),
        "cw_mean_l2": float(np.mean(cw_ok)) if cw_ok else None,
    }
    write_json(summary, _out(out_dir) / "attack_efficacy.json")
    return summary


# --- hinge sweep ---------------------------------------------------------------

SWEEP_COLUMNS = ("k", "acc_original", "logloss_original", "acc_countex", "logloss_countex")


def fgsm_countex(model: nn.ModelParams, data: Dataset, epsilon: float) -> Dataset:
    """Successful FGSM examples against ``model``, labelled with the true class."""
    xs, ys = [], []
    for x, y in data:
        r = fgsm(model, x, y, epsilon)
        if r.success:
            xs.append(r.adversarial_x)
            ys.append(y)
    if not xs:
        raise RuntimeError("the attack produced no counterexamples")
    return Dataset(np.array(xs), np.array(ys))


def hinge_sweep(out_dir, cfg: Optional[dict] = None) -> dict:
    """Train one model per tolerance ``k`` from a shared initialisation and
    score it on the held-out set and on counterexamples to the ``k = 0`` model."""
    cfg = _cfg(cfg, "hinge_sweep.yaml")
    seed = int(cfg["seed"])
    data = dataset_from(cfg["dataset"])
    train, test = data.split(float(cfg.get("train_fraction", 0.8)), seed)
    sizes = [data.width] + [int(h) for h in cfg.get("hidden", [32])] + [2]
    init = nn.init_model(sizes, seed)
    ks = [float(k) for k in cfg["ks"]]
    if 0.0 not in ks:
        raise ValueError("the sweep needs k = 0 to build the counterexample set")
    epochs, eta = int(cfg.get("epochs", 40)), float(cfg.get("eta", 0.02))
    models = {k: hinge_train(init, train, k, epochs, eta, seed) for k in ks}
    attack = cfg.get("countex_attack", {"kind": "fgsm", "epsilon": 0.1})
    if attack.get("kind", "fgsm") != "fgsm":
        raise ValueError("only FGSM counterexample sets are supported")
    countex = fgsm_countex(models[0.0], test, float(attack.get("epsilon", 0.1)))
    rows = []
    for k in ks:
        m = models[k]
        rows.append({"k": k, "acc_original": nn.accuracy(m, test),
                     "logloss_original": nn.log_loss(m, test),
                     "acc_countex": nn.accuracy(m, countex),
                     "logloss_countex": nn.log_loss(m, countex)})
    write_sweep_csv(rows, _out(out_dir) / "hinge_sweep.csv")
    summary = {"rows": rows, "n_countex": len(countex), "n_test": len(test)}
    write_json(summary, _out(out_dir) / "hinge_sweep.json")
    return summary


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([repr(float(r[c])) for c in SWEEP_COLUMNS])


# --- falsification ---------------------------------------------------------------

def run_falsify_config(cfg: dict, base_dir: Path = Path(".")) -> FalsifyReport:
    model = model_from(cfg["model"], base_dir)
    space = space_from(cfg["space"])
    spec = parse_stl(str(cfg["spec"]))
    report = falsification_loop(model, space, spec, int(cfg["budget"]), sim_from(cfg.get("sim")),
                                int(cfg.get("samples_per_cell", 4)))
    report.metadata.update(spec=str(cfg["spec"]), seed=cfg.get("seed"))
    return report


def replay_robustness(cfg: dict, report: FalsifyReport, model) -> list:
    """Re-simulate every counterexample and return its robustness."""
    spec = parse_stl(str(cfg["spec"]))
    sim = sim_from(cfg.get("sim"))
    return [eval_robustness(spec, simulate(c.env, aebs.as_sensor(model), sim))
            for c in report.counterexamples]


def falsification_demo(out_dir, weak_cfg: Optional[dict] = None,
                       perfect_cfg: Optional[dict] = None) -> dict:
    weak_cfg = _cfg(weak_cfg, "weak_demo.yaml")
    perfect_cfg = _cfg(perfect_cfg, "perfect_demo.yaml")
    out = _out(out_dir)
    summary = {}
    for tag, cfg in (("weak", weak_cfg), ("perfect", perfect_cfg)):
        model = model_from(cfg["model"])
        space = space_from(cfg["space"])
        report = falsification_loop(model, space, parse_stl(str(cfg["spec"])),
                                    int(cfg["budget"]), sim_from(cfg.get("sim")),
                                    int(cfg.get("samples_per_cell", 4)))
        report.write_json(out / f"falsify_{tag}.json")
        report.write_cells_csv(out / f"falsify_{tag}_cells.csv")
        replay = replay_robustness(cfg, report, model)
        summary[tag] = {"status": report.status, "simulations": report.simulations,
                        "rounds": report.rounds, "counterexamples": len(report.counterexamples),
                        "replay_negative": int(sum(r < 0 for r in replay)),
                        "rou_size": len(report.rou)}
    write_json(summary, out / "falsification_demo.json")
    return summary


# --- ROU algebra -------------------------------------------------------------------

def rou_algebra(out_dir, shape=(3, 3)) -> dict:
    """Exhaustive check of ``compute_rou`` over every pair of cell subsets."""
    grid = sorted(CellSet.full(shape))
    full = frozenset(grid)
    subsets = [frozenset(c for i, c in enumerate(grid) if mask >> i & 1)
               for mask in range(1 << len(grid))]
    sets = [CellSet(shape, s) for s in subsets]
    pairs = literal = contained = partition = 0
    for up, up_set in zip(subsets, sets):
        for um, um_set in zip(subsets, sets):
            pairs += 1
            rou = compute_rou(up_set, um_set).cells
            literal += rou == up - um
            if um <= up:
                contained += 1
                outside = full - up
                partition += (not (rou & um) and not (rou & outside) and not (um & outside)
                              and (rou | um | outside) == full)
    summary = {"shape": list(shape), "pairs": pairs, "literal_difference": literal,
               "contained_pairs": contained, "partition_holds": partition}
    write_json(summary, _out(out_dir) / "rou_algebra.json")
    return summary


# --- black-box transfer ------------------------------------------------------------

def black_box_transfer(out_dir, cfg: Optional[dict] = None, trials: int = 20,
                       n_seed: int = 100, epsilon: float = 0.1, max_rounds: int = 5) -> dict:
    """Substitute-model attacks against a label-only oracle, each paired with a
    random perturbation of the same L2 norm applied to the same input."""
    cfg = _cfg(cfg, "classifier.yaml")
    seed = int(cfg["seed"])
    target, _, test = train_classifier(cfg)

    def oracle(v):
        return int(nn.predict(target, v))

    seed_set = aebs.make_training_set(n_seed, seed + 1000)
    rng = np.random.default_rng(seed + 2000)
    records = []
    for x, y in test:
        if len(records) == trials:
            break
        if oracle(x) != y:
            continue
        i = len(records)
        sub0 = nn.init_model([x.size, 16, 2], seed + 3000 + i)
        bb = black_box_attack(oracle, sub0, seed_set, x, Misclassify(y), inner="fgsm",
                              max_rounds=max_rounds, epsilon=epsilon, seed=seed + i)
        norm = float(np.linalg.norm(bb.attack.delta))
        d = rng.normal(size=x.size)
        rand_x = np.clip(x + norm * d / np.linalg.norm(d), 0.0, 1.0)
        records.append({"trial": i, "attack_success": bool(bb.attack.success),
                        "random_success": oracle(rand_x) != y, "l2": norm,
                        "oracle_queries": bb.oracle_queries, "rounds": bb.rounds})
    wins = sum(r["attack_success"] for r in records)
    rand_wins = sum(r["random_success"] for r in records)
    summary = {"trials": len(records), "attack_successes": wins,
               "random_successes": rand_wins, "records": records}
    write_json(summary, _out(out_dir) / "black_box_transfer.json")
    return summary


# --- counterexample retraining -----------------------------------------------------

def misdetected_frames(report: FalsifyReport, stride: int = 5) -> Dataset:
    """Camera frames from violating runs where the obstacle went undetected.

    Frames are re-rendered from the recorded gap, taking every ``stride``-th
    missed frame of each trace, and labelled with the ground truth.
    """
    xs = []
    for c in report.counterexamples:
        gaps, det = c.trace["dist"], c.trace["detection"]
        missed = [k for k in range(c.trace.n) if det[k] < 0.5 and gaps[k] > 0]
        for k in missed[::stride]:
            img = render_scene(c.env, VehicleState(0.0, 0.0, float(gaps[k])))
            xs.append(img.ravel())
    if not xs:
        raise RuntimeError("no missed detections in the counterexample traces")
    return Dataset(np.array(xs), np.full(len(xs), COW))


def countex_retrain(out_dir, cfg: Optional[dict] = None, epochs: int = 5,
                    countex_weight: int = 1) -> dict:
    """Falsify the weakened model, retrain it on its system-level
    counterexamples and re-simulate the violating environments."""
    cfg = _cfg(cfg, "weak_demo.yaml")
    train_cfg = cfg["model"]["train"]
    seed = int(train_cfg["seed"])
    weak = model_from(cfg["model"])
    base = dataset_from(train_cfg["dataset"])
    spec = parse_stl(str(cfg["spec"]))
    sim = sim_from(cfg.get("sim"))
    report = falsification_loop(weak, space_from(cfg["space"]), spec, int(cfg["budget"]), sim,
                                int(cfg.get("samples_per_cell", 4)))
    if report.status != VIOLATION_FOUND:
        raise RuntimeError(f"expected a violation, got {report.status}")
    frames = misdetected_frames(report)
    countex = CounterexampleSet(frames, [SYSTEM_LEVEL] * len(frames))
    tc = nn.TrainConfig(epochs=epochs, eta=float(train_cfg.get("eta", 0.05)), seed=seed + 1)
    fixed = augment_retrain(weak, base, countex, AugmentConfig(train=tc,
                                                               countex_weight=countex_weight))

    def speeds(model):
        return [impact_speed(simulate(c.env, aebs.as_sensor(model), sim))
                for c in report.counterexamples]

    def robs(model):
        return [eval_robustness(spec, simulate(c.env, aebs.as_sensor(model), sim))
                for c in report.counterexamples]

    before, after = speeds(weak), speeds(fixed)
    summary = {
        "violating_envs": len(report.counterexamples),
        "countex_inputs": len(frames),
        "acc_countex_before": nn.accuracy(weak, frames),
        "acc_countex_after": nn.accuracy(fixed, frames),
        "acc_base_before": nn.accuracy(weak, base),
        "acc_base_after": nn.accuracy(fixed, base),
        "mean_impact_speed_before": float(np.mean(before)),
        "mean_impact_speed_after": float(np.mean(after)),
        "still_violating_after": int(sum(r < 0 for r in robs(fixed))),
    }
    write_json(summary, _out(out_dir) / "countex_retrain.json")
    return summary


EXPERIMENTS = {
    "attack_efficacy": attack_efficacy,
    "hinge_sweep": hinge_sweep,
    "falsification_demo": falsification_demo,
    "rou_algebra": rou_algebra,
    "black_box_transfer": black_box_transfer,
    "countex_retrain": countex_retrain,
}


def run_all(out_dir, only=None) -> dict:
    names = list(EXPERIMENTS) if only is None else list(only)
    unknown = set(names) - set(EXPERIMENTS)
    if unknown:
        raise KeyError(f"unknown experiments: {sorted(unknown)}")
    return {name: EXPERIMENTS[name](out_dir) for name in names}

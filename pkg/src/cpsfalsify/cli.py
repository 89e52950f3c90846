"""Command-line entry point.

Exit codes: 0 on a completed run (whatever its findings), 2 for usage,
configuration or input errors, 3 when an internal invariant breaks.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import tempfile
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from . import aebs, experiments, nn
from .advtrain import RetrainConfig, adversarial_retrain
from .attacks import Misclassify, Targeted, black_box_attack, cw_attack, fgsm, jsma
from .config import (ConfigError, dataset_from, env_from, load_yaml, model_from, require,
                     sim_from, space_from, train_config_from)
from .data import Dataset, save_dataset_csv, save_model
from .falsify import falsification_loop
from .stl import (STLDomainError, STLSyntaxError, eval_qualitative, eval_robustness,
                  load_trace_csv, parse_stl, save_trace_csv)

log = logging.getLogger("cpsfalsify")

EXIT_OK, EXIT_USAGE, EXIT_INVARIANT = 0, 2, 3
RESULTS_SCHEMA_VERSION = 1


class UsageError(Exception):
    pass


class Outputs:
    """Output files of one run, all inside one directory.

    Contents are staged in memory and written only once the run has
    succeeded, so a failed run leaves nothing behind.
    """

    def __init__(self, out_dir: Path, force: bool):
        self.dir = Path(out_dir)
        self.force = force
        self.pending: Dict[str, Callable[[Path], None]] = {}

    def add(self, name: str, writer: Callable[[Path], None]) -> None:
        path = (self.dir / name).resolve()
        if self.dir.resolve() not in path.parents:
            raise UsageError(f"refusing to write outside {self.dir}: {name}")
        self.pending[name] = writer

    def commit(self) -> List[Path]:
        clashes = [n for n in self.pending if (self.dir / n).exists()]
        if clashes and not self.force:
            raise UsageError(f"output exists (use --force to overwrite): "
                             f"{self.dir / clashes[0]}")
        written = []
        for name, writer in self.pending.items():
            path = self.dir / name
            path.parent.mkdir(parents=True, exist_ok=True)
            writer(path)
            written.append(path)
        return written


def _write_rows(header, rows) -> Callable[[Path], None]:
    def w(path: Path) -> None:
        with open(path, "w", newline="") as fh:
            cw = csv.writer(fh)
            cw.writerow(header)
            cw.writerows(rows)
    return w


def _write_json(obj) -> Callable[[Path], None]:
    return lambda path: experiments.write_json(obj, path)


def _fmt(v: float) -> str:
    return repr(float(v))


def _config(args) -> dict:
    cfg = load_yaml(args.config)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    return cfg


def _seed(cfg: dict) -> int:
    if cfg.get("seed") is None:
        raise ConfigError("a seed is required (config key 'seed' or --seed)")
    return int(cfg["seed"])


def _base_dir(args) -> Path:
    return Path(args.config).resolve().parent


# --- train -----------------------------------------------------------------------

def _metrics_recorder(train: Dataset, val: Optional[Dataset]):
    rows = []

    def on_epoch(epoch: int, model: nn.ModelParams) -> None:
        row = [epoch + 1, _fmt(nn.accuracy(model, train)), _fmt(nn.log_loss(model, train))]
        if val is not None:
            row += [_fmt(nn.accuracy(model, val)), _fmt(nn.log_loss(model, val))]
        rows.append(row)

    header = ["epoch", "train_accuracy", "train_logloss"]
    if val is not None:
        header += ["val_accuracy", "val_logloss"]
    return header, rows, on_epoch


def cmd_train(args) -> int:
    cfg = _config(args)
    seed = _seed(cfg)
    out = Outputs(args.out, args.force)
    if "ks" in cfg:
        if isinstance(require(cfg, "dataset"), str):
            cfg["dataset"] = str(_base_dir(args) / cfg["dataset"])
        dataset_from(cfg["dataset"])  # fail early on a missing file
        with tempfile.TemporaryDirectory() as tmp:
            summary = experiments.hinge_sweep(tmp, cfg)
        rows = [[_fmt(r[c]) for c in experiments.SWEEP_COLUMNS] for r in summary["rows"]]
        out.add("hinge_sweep.csv", _write_rows(experiments.SWEEP_COLUMNS, rows))
        out.add("hinge_sweep.json", _write_json(summary))
        out.commit()
        for r in summary["rows"]:
            print(f"k={r['k']:g} acc_original={r['acc_original']:.4f} "
                  f"acc_countex={r['acc_countex']:.4f}")
        return EXIT_OK
    data = dataset_from(require(cfg, "dataset"), _base_dir(args))
    frac = float(cfg.get("train_fraction", 0.8))
    train, val = data.split(frac, seed) if frac < 1.0 else (data, None)
    sizes = [data.width] + [int(h) for h in cfg.get("hidden", [32])] + [int(data.y.max()) + 1]
    header, rows, on_epoch = _metrics_recorder(train, val)
    model = nn.train(nn.init_model(sizes, seed), train, train_config_from(cfg, seed), on_epoch)
    out.add("model.npz", lambda p: save_model(model, p))
    out.add("metrics.csv", _write_rows(header, rows))
    out.commit()
    last = rows[-1] if rows else None
    if last:
        print(f"epochs={last[0]} train_accuracy={float(last[1]):.4f}"
              + (f" val_accuracy={float(last[3]):.4f}" if val is not None else ""))
    return EXIT_OK


# --- attack ----------------------------------------------------------------------

ATTACKS = ("fgsm", "jsma", "cw", "blackbox")


def _load_mask(spec, base: Path, width: int) -> Optional[np.ndarray]:
    if spec is None:
        return None
    path = base / spec
    if not path.exists():
        raise FileNotFoundError(f"mask file not found: {path}")
    with open(path, newline="") as fh:
        row = next(csv.reader(fh))
    mask = np.array([int(v) for v in row], dtype=bool)
    if mask.size != width:
        raise ConfigError(f"mask has {mask.size} entries, inputs have {width}")
    return mask


def cmd_attack(args) -> int:
    cfg = _config(args)
    seed = _seed(cfg)
    base = _base_dir(args)
    acfg = dict(require(cfg, "attack"))
    kind = acfg.pop("kind", None)
    if kind not in ATTACKS:
        raise UsageError(f"unknown attack {kind!r}; choose from {', '.join(ATTACKS)}")
    data = dataset_from(require(cfg, "dataset"), base)
    model = model_from(require(cfg, "model"), base)
    if not isinstance(model, nn.ModelParams):
        raise ConfigError("attacks need a neural network model")
    mask = _load_mask(acfg.pop("mask", None), base, data.width)
    limit = cfg.get("limit")
    if limit is not None:
        data = data.subset(np.arange(min(int(limit), len(data))))
    target = acfg.pop("target", None)
    records, adv_rows = [], []
    seed_set = None
    if kind == "blackbox":
        seed_set = dataset_from(require(cfg, "seed_set"), base)
    for i, (x, y) in enumerate(data):
        queries = None
        if kind == "fgsm":
            eps = float(acfg.get("epsilon", 0.1))
            if target is None:
                r = fgsm(model, x, y, eps, mask=mask)
            else:
                r = fgsm(model, x, int(target), eps, mask=mask, targeted=True)
        elif kind == "jsma":
            t = int(target) if target is not None else 1 - int(nn.predict(model, x))
            r = jsma(model, x, t, float(acfg.get("theta", 0.05)), int(acfg.get("budget", 200)),
                     mask=mask)
        elif kind == "cw":
            sched = tuple(float(c) for c in acfg.get("c_schedule", (0.1, 1.0, 10.0, 100.0)))
            r = cw_attack(model, x, None if target is None else int(target),
                          float(acfg.get("kappa", 0.0)), sched,
                          nn.AdamHyper(alpha=float(acfg.get("alpha", 0.01))),
                          int(acfg.get("steps", 500)), mask=mask)
        else:
            sub = nn.init_model([data.width] + [int(h) for h in acfg.get("hidden", [16])]
                                + [model.n_classes], seed + i)
            goal = Misclassify(y) if target is None else Targeted(int(target))
            bb = black_box_attack(lambda v: int(nn.predict(model, v)), sub, seed_set, x, goal,
                                  inner=acfg.get("inner", "fgsm"),
                                  max_rounds=int(acfg.get("max_rounds", 10)),
                                  epsilon=float(acfg.get("epsilon", 0.1)), seed=seed + i)
            r, queries = bb.attack, bb.oracle_queries
        rec = {"input_id": i, "attack": kind, "success": bool(r.success),
               "metric_value": float(r.metric_value), "iterations": int(r.iterations)}
        if queries is not None:
            rec["oracle_queries"] = int(queries)
        records.append(rec)
        adv_rows.append(Dataset(r.adversarial_x[None, :], [y]))
    rate = float(np.mean([r["success"] for r in records]))
    result = {"schema_version": RESULTS_SCHEMA_VERSION, "attack": kind,
              "n": len(records), "success_rate": rate, "results": records}
    adv = adv_rows[0]
    for d in adv_rows[1:]:
        adv = adv.concat(d)
    out = Outputs(args.out, args.force)
    out.add("results.json", _write_json(result))
    out.add("adversarial.csv", lambda p: save_dataset_csv(adv, p))
    out.commit()
    print(f"attack={kind} n={len(records)} success_rate={rate:.4f}")
    return EXIT_OK


# --- advtrain --------------------------------------------------------------------

def cmd_advtrain(args) -> int:
    cfg = _config(args)
    seed = _seed(cfg)
    base = _base_dir(args)
    data = dataset_from(require(cfg, "dataset"), base)
    model = model_from(require(cfg, "model"), base)
    if not isinstance(model, nn.ModelParams):
        raise ConfigError("adversarial retraining needs a neural network model")
    r = dict(require(cfg, "retrain"))
    try:
        rc = RetrainConfig(seed=seed, **r)
    except TypeError as exc:
        raise ConfigError(f"bad retrain block: {exc}") from None
    header = ["epoch", "accuracy", "logloss", "fgsm_success"]
    rows = []
    current = model
    for epoch in range(rc.epochs):
        step_cfg = RetrainConfig(**{**rc.__dict__, "epochs": 1, "seed": seed + epoch})
        current = adversarial_retrain(current, data, step_cfg)
        fooled = np.mean([fgsm(current, x, y, rc.epsilon).success for x, y in data])
        rows.append([epoch + 1, _fmt(nn.accuracy(current, data)),
                     _fmt(nn.log_loss(current, data)), _fmt(fooled)])
    out = Outputs(args.out, args.force)
    out.add("model.npz", lambda p: save_model(current, p))
    out.add("metrics.csv", _write_rows(header, rows))
    out.commit()
    print(f"method={rc.method} epochs={rc.epochs} accuracy={nn.accuracy(current, data):.4f}")
    return EXIT_OK


# --- simulate --------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _config(args)
    base = _base_dir(args)
    env = env_from(cfg.get("env"))
    model = model_from(cfg.get("model", "perfect"), base)
    sim = sim_from(cfg.get("sim"))
    trace = aebs.simulate(env, model, sim)
    out = Outputs(args.out, args.force)
    out.add("trace.csv", lambda p: save_trace_csv(trace, p))
    if args.images:
        for k in range(trace.n):
            gap = float(trace["dist"][k])
            if env.obstacle_present and gap <= 0:
                break
            state = aebs.VehicleState(0.0, 0.0, gap if env.obstacle_present else 1.0)
            img = aebs.render_scene(env, state)
            out.add(f"images/frame_{k:04d}.csv",
                    _write_rows([f"c{j}" for j in range(img.shape[1])],
                                [[_fmt(v) for v in row] for row in img]))
    out.commit()
    print(f"steps={trace.n} min_dist={float(np.min(trace['dist'])):.6f} "
          f"impact_speed={aebs.impact_speed(trace):.6f}")
    return EXIT_OK


# --- monitor ---------------------------------------------------------------------

def cmd_monitor(args) -> int:
    text = args.formula
    if args.formula_file:
        text = Path(args.formula_file).read_text().strip()
    if text is None:
        raise UsageError("give a formula or --formula-file")
    phi = parse_stl(text)
    trace = load_trace_csv(args.trace)
    sat = eval_qualitative(phi, trace)
    rob = eval_robustness(phi, trace)
    if sat != (rob > 0) and abs(rob) > 1e-9:
        raise AssertionError(f"truth value {sat} disagrees with robustness {rob}")
    print(f"sat={'true' if sat else 'false'} rob={rob:.6f}")
    return EXIT_OK


# --- falsify ---------------------------------------------------------------------

def cmd_falsify(args) -> int:
    cfg = _config(args)
    _seed(cfg)
    base = _base_dir(args)
    space = space_from(require(cfg, "space"))
    budget = int(require(cfg, "budget"))
    if budget < 2 * space.n_cells:
        raise ConfigError(f"budget {budget} is below the {2 * space.n_cells} simulations the "
                          f"two abstract analyses of a {space.n_cells}-cell grid need")
    spec = parse_stl(str(require(cfg, "spec")))
    model = model_from(require(cfg, "model"), base)
    report = falsification_loop(model, space, spec, budget, sim_from(cfg.get("sim")),
                                int(cfg.get("samples_per_cell", 4)))
    report.metadata.update(spec=str(cfg["spec"]), seed=cfg["seed"])
    out = Outputs(args.out, args.force)
    out.add("report.json", report.write_json)
    out.add("cells.csv", report.write_cells_csv)
    out.commit()
    print(f"status={report.status} simulations={report.simulations} "
          f"counterexamples={len(report.counterexamples)}")
    return EXIT_OK


# --- report ----------------------------------------------------------------------

def cmd_report(args) -> int:
    names = args.only or list(experiments.EXPERIMENTS)
    unknown = [n for n in names if n not in experiments.EXPERIMENTS]
    if unknown:
        raise UsageError(f"unknown experiment {unknown[0]!r}; choose from "
                         f"{', '.join(experiments.EXPERIMENTS)}")
    out_dir = Path(args.out)
    if out_dir.exists() and any(out_dir.iterdir()) and not args.force:
        raise UsageError(f"output directory {out_dir} is not empty (use --force)")
    for name in names:
        summary = experiments.EXPERIMENTS[name](out_dir)
        summary.pop("records", None)
        summary.pop("rows", None)
        print(f"{name}: {summary}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cpsfalsify",
                                description="Adversarial analysis of learned perception in "
                                            "closed-loop systems.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_out(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="YAML run configuration")
            sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")
        return sp

    with_out(sub.add_parser("train", help="train a classifier or run a hinge k-sweep")) \
        .set_defaults(func=cmd_train)
    with_out(sub.add_parser("attack", help="attack every input of a dataset")) \
        .set_defaults(func=cmd_attack)
    with_out(sub.add_parser("advtrain", help="FGSM or VAT retraining")) \
        .set_defaults(func=cmd_advtrain)
    sp = with_out(sub.add_parser("simulate", help="run the braking loop once"))
    sp.add_argument("--images", action="store_true", help="also write each camera frame")
    sp.set_defaults(func=cmd_simulate)
    sp = sub.add_parser("monitor", help="evaluate an STL formula on a trace CSV")
    sp.add_argument("trace")
    sp.add_argument("formula", nargs="?")
    sp.add_argument("--formula-file")
    sp.set_defaults(func=cmd_monitor)
    with_out(sub.add_parser("falsify", help="compositional falsification")) \
        .set_defaults(func=cmd_falsify)
    sp = with_out(sub.add_parser("report", help="run the experiment sweeps"), config=False)
    sp.add_argument("--only", nargs="+", metavar="NAME")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except STLSyntaxError as exc:
        print(f"error: {exc}\n{exc.caret()}", file=sys.stderr)
        return EXIT_USAGE
    except AssertionError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (UsageError, ConfigError, STLDomainError, FileNotFoundError, KeyError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""YAML run configurations and their translation into library objects."""
from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

from . import aebs, nn
from .aebs import ControllerConfig, EnvConfig, SimConfig
from .data import Dataset, load_dataset_csv, load_model
from .falsify import Dim, ModSpace


class ConfigError(ValueError):
    pass


def load_yaml(path) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def shipped_config(name: str) -> Path:
    """Path of a config bundled with the package (e.g. ``weak_demo.yaml``)."""
    return Path(str(resources.files("cpsfalsify") / "configs" / name))


def require(cfg: Mapping, key: str, where: str = "config") -> Any:
    if key not in cfg:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return cfg[key]


def loss_from(cfg: Any) -> nn.LossKind:
    if cfg in (None, "cross_entropy", "ce"):
        return nn.CrossEntropy()
    if isinstance(cfg, Mapping) and "hinge" in cfg:
        return nn.Hinge(float(cfg["hinge"]))
    raise ConfigError(f"unknown loss {cfg!r}; use 'cross_entropy' or {{hinge: k}}")


def train_config_from(cfg: Mapping, seed: int) -> nn.TrainConfig:
    try:
        return nn.TrainConfig(loss=loss_from(cfg.get("loss")), epochs=int(cfg.get("epochs", 40)),
                              eta=float(cfg.get("eta", 0.05)),
                              batch_mode=cfg.get("batch_mode", "perm"),
                              batch_size=int(cfg.get("batch_size", 1)), seed=int(seed))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad training block: {exc}") from None


def dataset_from(cfg: Any, base_dir: Path = Path(".")) -> Dataset:
    """A dataset block is either a CSV path or synthetic-scene parameters."""
    if isinstance(cfg, str):
        path = (base_dir / cfg) if not Path(cfg).is_absolute() else Path(cfg)
        if not path.exists():
            raise FileNotFoundError(f"dataset file not found: {path}")
        return load_dataset_csv(path)
    if isinstance(cfg, Mapping):
        kw = {}
        for key in ("cow_brightness", "empty_brightness", "distance_range"):
            if key in cfg:
                kw[key] = tuple(float(v) for v in cfg[key])
        if "noise" in cfg:
            kw["noise"] = float(cfg["noise"])
        return aebs.make_training_set(int(require(cfg, "n", "dataset")),
                                      int(require(cfg, "seed", "dataset")), **kw)
    raise ConfigError(f"dataset must be a CSV path or a mapping, got {cfg!r}")


def model_from(cfg: Any, base_dir: Path = Path(".")):
    """A model block is a file path, 'perfect' / 'completely_wrong', or a
    ``train`` mapping that is trained on the spot (deterministically)."""
    if cfg == "perfect":
        return aebs.Perfect()
    if cfg == "completely_wrong":
        return aebs.CompletelyWrong()
    if isinstance(cfg, str):
        path = (base_dir / cfg) if not Path(cfg).is_absolute() else Path(cfg)
        if not path.exists():
            raise FileNotFoundError(f"model file not found: {path}")
        return load_model(path)
    if isinstance(cfg, Mapping) and "train" in cfg:
        t = cfg["train"]
        seed = int(require(t, "seed", "model.train"))
        data = dataset_from(require(t, "dataset", "model.train"), base_dir)
        sizes = [data.width] + [int(h) for h in t.get("hidden", [32])] + [2]
        return nn.train(nn.init_model(sizes, seed), data, train_config_from(t, seed))
    raise ConfigError(f"cannot build a model from {cfg!r}")


def sim_from(cfg: Mapping | None) -> SimConfig:
    cfg = dict(cfg or {})
    ctrl = ControllerConfig(**cfg.pop("controller", {}))
    try:
        return SimConfig(controller=ctrl, **cfg)
    except TypeError as exc:
        raise ConfigError(f"bad sim block: {exc}") from None


def env_from(cfg: Mapping | None) -> EnvConfig:
    try:
        return EnvConfig(**dict(cfg or {}))
    except TypeError as exc:
        raise ConfigError(f"bad env block: {exc}") from None


def space_from(cfg: Mapping) -> ModSpace:
    dims = []
    for d in require(cfg, "dims", "space"):
        dims.append(Dim(str(require(d, "name", "space.dims")), float(d["lo"]), float(d["hi"]),
                        int(d.get("resolution", 4))))
    return ModSpace(tuple(dims), env_from(cfg.get("base")))

"""Defensive retraining: FGSM-regularised steps, virtual adversarial training,
hinge-loss training and counterexample augmentation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional

import numpy as np

from . import nn
from .attacks import fgsm
from .data import Dataset
from .nn import CrossEntropy, Gradients, Hinge, LossKind, ModelParams, TrainConfig

log = logging.getLogger(__name__)

COMPONENT_LEVEL = "component-level"
SYSTEM_LEVEL = "system-level"


def _combine(a: Gradients, b: Gradients, scale: float = 1.0) -> Gradients:
    return Gradients([x + scale * y for x, y in zip(a.weights, b.weights)],
                     [x + scale * y for x, y in zip(a.biases, b.biases)])


def fgsm_retrain_loss_and_grad(model: ModelParams, x, y: int, lam: float, epsilon: float,
                               delta: Optional[np.ndarray] = None,
                               loss: LossKind = CrossEntropy()) -> tuple:
    """Loss ``l(w,x,y) + lam * l(w, x + delta, y)`` and its gradient with ``delta`` held fixed.

    ``delta`` defaults to the FGSM perturbation at the current parameters.
    """
    x = np.asarray(x, dtype=np.float64)
    if delta is None:
        delta = fgsm(model, x, y, epsilon, loss=loss).delta
    clean_loss, clean_grad = nn.backprop(model, x, y, loss)
    if lam == 0:
        return clean_loss, clean_grad
    adv_loss, adv_grad = nn.backprop(model, x + delta, y, loss)
    return clean_loss + lam * adv_loss, _combine(clean_grad, adv_grad, lam)


def fgsm_retrain_step(model: ModelParams, x, y: int, lam: float, epsilon: float,
                      eta: float, loss: LossKind = CrossEntropy()) -> ModelParams:
    _, grad = fgsm_retrain_loss_and_grad(model, x, y, lam, epsilon, loss=loss)
    return nn.sgd_step(model, grad, eta)


class VATDirection(NamedTuple):
    r: np.ndarray
    degenerate: bool


def power_iteration(hvp: Callable[[np.ndarray], np.ndarray], v0: np.ndarray,
                    iters: int, tol: float = 1e-12) -> tuple:
    """Dominant eigenvector by repeated normalised products.

    Returns ``(v, ok)``; ``ok`` is False if a product collapsed to zero.
    """
    v = np.asarray(v0, dtype=np.float64)
    v = v / np.linalg.norm(v)
    for _ in range(iters):
        hv = hvp(v)
        norm = np.linalg.norm(hv)
        if not norm > tol:
            return v, False
        v = hv / norm
    return v, True


def kl_input_grad(model: ModelParams, target: np.ndarray, x) -> np.ndarray:
    """Gradient w.r.t. ``x`` of KL(target || softmax(model(x)))."""
    q = nn.predict_proba(model, x)
    return nn.logits_input_vjp(model, x, q - target)


def vat_perturbation(model: ModelParams, x, delta_norm: float, power_iters: int = 5,
                     fd_step: float = 1e-3, seed: int = 0) -> VATDirection:
    """``delta_norm`` times the dominant eigenvector of the Hessian of
    ``r -> KL(p(x), p(x + r))`` at ``r = 0``.

    The gradient of that map vanishes at 0, so ``H v ~ grad(h v) / h``.
    """
    if power_iters < 1:
        raise ValueError("power_iters must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    p = nn.predict_proba(model, x)
    rng = np.random.default_rng(seed)
    v0 = rng.normal(size=x.shape)

    def hvp(v):
        return kl_input_grad(model, p, x + fd_step * v) / fd_step

    v, ok = power_iteration(hvp, v0, power_iters)
    if not ok:
        log.debug("degenerate Hessian-vector product; falling back to a random direction")
        v = v0 / np.linalg.norm(v0)
    return VATDirection(delta_norm * v, not ok)


def vat_loss_and_grad(model: ModelParams, x, y: int, lam: float, r: np.ndarray,
                      target: Optional[np.ndarray] = None,
                      loss: LossKind = CrossEntropy()) -> tuple:
    """``l(w,x,y) + lam * KL(target, p_w(x + r))`` with ``r`` and ``target`` frozen.

    ``target`` defaults to the model's current output at ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    if target is None:
        target = nn.predict_proba(model, x)
    clean_loss, grad = nn.backprop(model, x, y, loss)
    if lam == 0:
        return clean_loss, grad
    q = nn.predict_proba(model, x + r)
    kl = nn.kl_divergence(target, q)
    kl_grad = nn.backprop_dlogits(model, x + r, q - target)
    return clean_loss + lam * kl, _combine(grad, kl_grad, lam)


def vat_step(model: ModelParams, x, y: int, lam: float, delta_norm: float, eta: float,
             power_iters: int = 5, fd_step: float = 1e-3, seed: int = 0,
             loss: LossKind = CrossEntropy()) -> ModelParams:
    r = vat_perturbation(model, x, delta_norm, power_iters, fd_step, seed).r
    _, grad = vat_loss_and_grad(model, x, y, lam, r, loss=loss)
    return nn.sgd_step(model, grad, eta)


@dataclass
class RetrainConfig:
    method: str = "fgsm"  # "fgsm" | "vat"
    lam: float = 1.0
    epsilon: float = 0.1  # FGSM step, or VAT perturbation norm
    epochs: int = 5
    eta: float = 0.05
    seed: int = 0
    power_iters: int = 5
    fd_step: float = 1e-3

    def __post_init__(self):
        if self.method not in ("fgsm", "vat"):
            raise ValueError(f"unknown retraining method {self.method!r}")
        if self.lam < 0 or self.epsilon <= 0 or self.eta <= 0 or self.epochs < 0:
            raise ValueError("lam >= 0, epsilon > 0, eta > 0, epochs >= 0 required")
        if self.power_iters < 1 or self.fd_step <= 0:
            raise ValueError("power_iters >= 1 and fd_step > 0 required")


def adversarial_retrain(model: ModelParams, dataset: Dataset, cfg: RetrainConfig) -> ModelParams:
    """Per-example FGSM or VAT steps over shuffled epochs."""
    rng = np.random.default_rng(cfg.seed)
    model = model.copy()
    step = 0
    for _ in range(cfg.epochs):
        for i in rng.permutation(len(dataset)):
            x, y = dataset.X[i], int(dataset.y[i])
            if cfg.method == "fgsm":
                model = fgsm_retrain_step(model, x, y, cfg.lam, cfg.epsilon, cfg.eta)
            else:
                model = vat_step(model, x, y, cfg.lam, cfg.epsilon, cfg.eta,
                                 cfg.power_iters, cfg.fd_step, seed=cfg.seed + step)
            step += 1
    return model


def hinge_train(model: ModelParams, dataset: Dataset, k: float, epochs: int, eta: float,
                seed: int, batch_size: int = 1) -> ModelParams:
    return nn.train(model, dataset, TrainConfig(loss=Hinge(k), epochs=epochs, eta=eta,
                                                batch_size=batch_size, seed=seed))


def mean_hinge_loss(model: ModelParams, dataset: Dataset, k: float) -> float:
    p = nn.predict_proba(model, dataset.X)
    return float(np.mean([nn.hinge_loss(pi, int(yi), k) for pi, yi in zip(p, dataset.y)]))


@dataclass
class CounterexampleSet:
    examples: Dataset
    provenance: List[str]

    def __post_init__(self):
        if len(self.provenance) != len(self.examples):
            raise ValueError("one provenance tag per counterexample")
        bad = set(self.provenance) - {COMPONENT_LEVEL, SYSTEM_LEVEL}
        if bad:
            raise ValueError(f"unknown provenance tags {sorted(bad)}")

    def __len__(self) -> int:
        return len(self.provenance)


@dataclass
class AugmentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    warm_start: bool = True
    countex_weight: int = 1  # copies of each counterexample
    init_sizes: Optional[list] = None  # architecture for a fresh start


def augment_retrain(model: ModelParams, base: Dataset, countex: Optional[CounterexampleSet],
                    cfg: AugmentConfig = AugmentConfig()) -> ModelParams:
    """Retrain on ``base`` plus (possibly duplicated) counterexamples."""
    if cfg.countex_weight < 1:
        raise ValueError("countex_weight must be >= 1")
    data = augmented_dataset(base, countex, cfg.countex_weight)
    start = model if cfg.warm_start else nn.init_model(cfg.init_sizes or model.sizes,
                                                       cfg.train.seed)
    return nn.train(start, data, cfg.train)


def augmented_dataset(base: Dataset, countex: Optional[CounterexampleSet],
                      weight: int = 1) -> Dataset:
    if countex is None or len(countex) == 0:
        log.info("no counterexamples supplied; retraining on the base set only")
        return base
    extra = countex.examples
    for _ in range(weight - 1):
        extra = extra.concat(countex.examples)
    return base.concat(extra)

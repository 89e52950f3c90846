"""Test-time adversarial examples: FGSM, JSMA, Carlini-Wagner and a black-box
substitute attack.

All attacks work on a single input vector with components in [0, 1] and
return an :class:`AttackResult`. ``delta`` in a result is always the
effective perturbation ``adversarial_x - x``, so it already accounts for
clipping and masking.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import nn
from .data import Dataset
from .nn import AdamHyper, AdamState, CrossEntropy, LossKind, ModelParams

CW_SHRINK = 1e-6
L0_TOL = 1e-12
DEFAULT_C_SCHEDULE = (0.1, 1.0, 10.0, 100.0)


@dataclass(frozen=True)
class Misclassify:
    """Any label other than ``source``."""

    source: int

    def __contains__(self, label) -> bool:
        return int(label) != self.source


@dataclass(frozen=True)
class Targeted:
    label: int

    def __contains__(self, label) -> bool:
        return int(label) == self.label


TargetSet = Union[Misclassify, Targeted]


@dataclass
class AttackResult:
    delta: np.ndarray
    adversarial_x: np.ndarray
    achieved_label: int
    success: bool
    metric_value: float
    iterations: int
    info: dict = field(default_factory=dict)


def _check_mask(mask, x: np.ndarray) -> Optional[np.ndarray]:
    if mask is None:
        return None
    mask = np.asarray(mask)
    if mask.shape != x.shape:
        raise nn.DimensionError(f"mask shape {mask.shape} does not match input {x.shape}")
    if not np.all((mask == 0) | (mask == 1)):
        raise ValueError("mask entries must be 0 or 1")
    return mask.astype(bool)


def evaluate_metric(kind: str, delta) -> float:
    d = np.asarray(delta, dtype=np.float64).ravel()
    if kind == "L2":
        return float(np.sqrt(d @ d))
    if kind == "L2sq":
        return float(d @ d)
    if kind == "Linf":
        return float(np.max(np.abs(d))) if d.size else 0.0
    if kind == "L0":
        return float(np.count_nonzero(np.abs(d) > L0_TOL))
    raise ValueError(f"unknown metric {kind!r}")


def _result(model: ModelParams, x, adv, targets, metric: str, iterations: int,
            mask=None, **info) -> AttackResult:
    adv = np.clip(adv, 0.0, 1.0)
    if mask is not None:
        adv[mask] = x[mask]
    delta = adv - x
    label = int(nn.predict(model, adv))
    return AttackResult(delta, adv, label, label in targets,
                        evaluate_metric(metric, delta), iterations, info)


def fgsm(model: ModelParams, x, y: int, epsilon: float, mask=None,
         loss: LossKind = CrossEntropy(), targeted: bool = False) -> AttackResult:
    """One signed-gradient step of size ``epsilon``.

    Untargeted: ascend the loss of the true label ``y``. With ``targeted``
    the step descends the loss of target ``y`` instead.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    mask = _check_mask(mask, x)
    g = nn.input_gradient(model, x, y, loss)
    step = epsilon * np.sign(g)  # np.sign(0) == 0
    if targeted:
        step = -step
    targets = Targeted(y) if targeted else Misclassify(y)
    return _result(model, x, x + step, targets, "Linf", 1, mask)


def saliency_from_jacobian(jac: np.ndarray, t: int) -> np.ndarray:
    """Adversarial saliency for increasing features, from d softmax / d x."""
    toward = jac[t]
    away = jac.sum(axis=0) - toward
    return np.where((toward < 0) | (away > 0), 0.0, toward * np.abs(away))


def saliency_map(model: ModelParams, x, t: int) -> np.ndarray:
    if not 0 <= t < model.n_classes:
        raise nn.LabelError(f"target {t} out of range")
    return saliency_from_jacobian(nn.softmax_jacobian(model, x), t)


def jsma(model: ModelParams, x, t: int, theta: float = 0.05, budget: int = 200,
         mask=None) -> AttackResult:
    """Greedy saliency attack: raise the most salient free component by ``theta``
    per iteration until the model outputs ``t`` or the budget runs out."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    if budget < 1:
        raise ValueError("budget must be at least 1")
    x = np.asarray(x, dtype=np.float64)
    mask = _check_mask(mask, x)
    adv = x.copy()
    frozen = np.zeros(x.shape, bool) if mask is None else mask.copy()
    it = 0
    while int(nn.predict(model, adv)) != t and it < budget:
        s = saliency_map(model, adv, t)
        s[frozen | (adv >= 1.0)] = -np.inf
        i = int(np.argmax(s))
        if not s[i] > 0.0:
            break
        adv[i] = min(1.0, adv[i] + theta)
        it += 1
    return _result(model, x, adv, Targeted(t), "L0", it, mask)


def cw_objective_g(logits: np.ndarray, t: int, kappa: float) -> float:
    rival = np.max(np.delete(logits, t))
    return max(float(rival - logits[t]), -kappa)


def _cw_single(model, x, x0, t, kappa, c, hyper, steps, mask):
    w = np.arctanh(2.0 * x0 - 1.0)
    state = AdamState(w)
    best = None  # (mu, adv)
    best_g = np.inf
    for _ in range(steps):
        th = np.tanh(state.params)
        adv = 0.5 * (th + 1.0)
        if mask is not None:
            adv[mask] = x[mask]
        z = nn.forward(model, adv)
        g = cw_objective_g(z, t, kappa)
        diff = adv - x
        mu = float(diff @ diff)
        best_g = min(best_g, g)
        if int(np.argmax(z)) == t and g <= 0.0 and (best is None or mu < best[0]):
            best = (mu, adv.copy())
        grad_adv = 2.0 * diff
        if g > -kappa:
            dz = np.zeros_like(z)
            masked = z.copy()
            masked[t] = -np.inf
            dz[int(np.argmax(masked))] = 1.0
            dz[t] = -1.0
            grad_adv = grad_adv + c * nn.logits_input_vjp(model, adv, dz)
        grad_w = grad_adv * 0.5 * (1.0 - th * th)
        if mask is not None:
            grad_w[mask] = 0.0
        state, _ = nn.adam_step(state, grad_w, hyper)
    return best, best_g


def cw_attack(model: ModelParams, x, t: Optional[int] = None, kappa: float = 0.0,
              c_schedule: Sequence[float] = DEFAULT_C_SCHEDULE,
              adam_hyper: AdamHyper = AdamHyper(alpha=0.01), steps: int = 500,
              mask=None) -> AttackResult:
    """Carlini-Wagner attack with squared-L2 distance and tanh box reparameterisation.

    With ``t=None`` every label other than the current prediction is tried as a
    target and the smallest successful perturbation is kept.
    """
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    mask = _check_mask(mask, x)
    x0 = 0.5 + (x - 0.5) * (1.0 - 2.0 * CW_SHRINK)
    if t is None:
        source = int(nn.predict(model, x))
        targets_to_try = [k for k in range(model.n_classes) if k != source]
        target_set: TargetSet = Misclassify(source)
    else:
        targets_to_try = [t]
        target_set = Targeted(t)
    best, best_g, tried = None, np.inf, 0
    for target in targets_to_try:
        for c in c_schedule:
            found, g = _cw_single(model, x, x0, target, kappa, c, adam_hyper, steps, mask)
            tried += steps
            best_g = min(best_g, g)
            if found is not None and (best is None or found[0] < best[0]):
                best = found
    adv = x0.copy() if best is None else best[1]
    if best is None and mask is not None:
        adv[mask] = x[mask]
    res = _result(model, x, adv, target_set, "L2sq", tried, mask, best_g=float(best_g))
    if best is None:
        res.success = False
    return res


@dataclass
class BlackBoxResult:
    attack: AttackResult
    substitute: ModelParams
    oracle_queries: int
    rounds: int


def black_box_attack(target_oracle: Callable[[np.ndarray], int], substitute: ModelParams,
                     seed_set: Dataset, x, target: Union[int, TargetSet], inner: str = "fgsm",
                     max_rounds: int = 10, epsilon: float = 0.1, eta: float = 0.05,
                     substitute_epochs: int = 20, seed: int = 0,
                     inner_kwargs: Optional[dict] = None) -> BlackBoxResult:
    """Attack an opaque label oracle through a locally trained substitute.

    The oracle labels the seed inputs once and the substitute is trained on
    those labels. Each round crafts a perturbation on the substitute and
    queries the oracle once; on failure the queried point joins the
    substitute's data and the substitute takes one SGD pass over it.
    ``target`` is a label (targeted) or a :class:`Misclassify` set.
    """
    x = np.asarray(x, dtype=np.float64)
    targets: TargetSet = Targeted(int(target)) if isinstance(target, (int, np.integer)) else target
    inner_kwargs = dict(inner_kwargs or {})
    queries = 0

    def ask(v) -> int:
        nonlocal queries
        queries += 1
        return int(target_oracle(np.array(v, copy=True)))

    labels = np.array([ask(v) for v in seed_set.X])
    cfg = nn.TrainConfig(epochs=substitute_epochs, eta=eta, seed=seed)
    sub = nn.train(substitute, Dataset(seed_set.X.copy(), labels), cfg)

    result = None
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        if isinstance(targets, Targeted):
            goal = targets.label
        else:
            p = nn.predict_proba(sub, x)
            p[targets.source] = -np.inf
            goal = int(np.argmax(p))
        if inner == "fgsm":
            if isinstance(targets, Targeted):
                crafted = fgsm(sub, x, goal, epsilon, targeted=True, **inner_kwargs)
            else:
                crafted = fgsm(sub, x, targets.source, epsilon, **inner_kwargs)
        elif inner == "jsma":
            crafted = jsma(sub, x, goal, **inner_kwargs)
        elif inner == "cw":
            crafted = cw_attack(sub, x, goal, **inner_kwargs)
        else:
            raise ValueError(f"unknown inner attack {inner!r}")
        label = ask(crafted.adversarial_x)
        result = AttackResult(crafted.delta, crafted.adversarial_x, label, label in targets,
                              evaluate_metric("L2", crafted.delta), rounds)
        if result.success:
            break
        new = Dataset(crafted.adversarial_x[None, :], [label])
        sub = nn.train(sub, new, nn.TrainConfig(epochs=1, eta=eta, seed=seed + rounds))
    return BlackBoxResult(result, sub, queries, rounds)

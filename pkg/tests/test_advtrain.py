import numpy as np
import pytest

from cpsfalsify import aebs, nn
from cpsfalsify.advtrain import (COMPONENT_LEVEL, SYSTEM_LEVEL, AugmentConfig,
                                 CounterexampleSet, RetrainConfig, adversarial_retrain,
                                 augment_retrain, augmented_dataset, fgsm_retrain_loss_and_grad,
                                 fgsm_retrain_step, hinge_train, mean_hinge_loss,
                                 power_iteration, vat_loss_and_grad, vat_perturbation, vat_step)
from cpsfalsify.attacks import fgsm
from cpsfalsify.data import Dataset


def small_model(seed=0):
    m = nn.init_model([5, 6, 2], seed)
    rng = np.random.default_rng(seed)
    return m.from_vector(m.to_vector() + 0.3 * rng.normal(size=m.to_vector().size))


def fd_grad(f, model, h=1e-5):
    vec = model.to_vector()
    g = np.zeros_like(vec)
    for i in range(vec.size):
        e = np.zeros_like(vec)
        e[i] = h
        g[i] = (f(model.from_vector(vec + e)) - f(model.from_vector(vec - e))) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


X = np.random.default_rng(7).random(5)


# FGSM regulariser

def test_fgsm_retrain_lambda_zero_is_plain_sgd():
    m = small_model()
    _, g = nn.backprop(m, X, 1)
    assert fgsm_retrain_step(m, X, 1, 0.0, 0.1, 0.05).equals(nn.sgd_step(m, g, 0.05))


def test_fgsm_retrain_epsilon_zero_scales_gradient():
    m = small_model()
    loss, g = nn.backprop(m, X, 1)
    l2, g2 = fgsm_retrain_loss_and_grad(m, X, 1, 0.5, 0.0)
    assert l2 == pytest.approx(1.5 * loss)
    assert np.allclose(g2.to_vector(), 1.5 * g.to_vector())


@pytest.mark.parametrize("seed", range(3))
def test_fgsm_retrain_gradient_finite_differences(seed):
    m = small_model(seed)
    delta = fgsm(m, X, 0, 0.1).delta

    def f(mm):
        return fgsm_retrain_loss_and_grad(mm, X, 0, 0.7, 0.1, delta=delta)[0]

    _, g = fgsm_retrain_loss_and_grad(m, X, 0, 0.7, 0.1, delta=delta)
    assert rel_err(g.to_vector(), fd_grad(f, m)) < 1e-4


# VAT

def test_power_iteration_on_known_hessian():
    H = np.diag([4.0, 1.0])
    v, ok = power_iteration(lambda v: H @ v, np.array([0.3, 0.9]), 10)
    assert ok and abs(v[0]) >= 0.99


def test_power_iteration_reports_collapse():
    v, ok = power_iteration(lambda v: np.zeros_like(v), np.array([1.0, 0.0]), 3)
    assert not ok


def test_vat_perturbation_norm():
    for norm in (0.01, 0.5, 2.0):
        r = vat_perturbation(small_model(), X, norm)
        assert abs(np.linalg.norm(r.r) - norm) <= 1e-9


@pytest.mark.parametrize("seed", range(6))
def test_vat_direction_beats_random_directions(seed):
    # a second-order property, so the radius stays inside the quadratic regime
    m = small_model(seed)
    x = np.random.default_rng(seed).random(5)
    p = nn.predict_proba(m, x)
    norm = 0.01
    r = vat_perturbation(m, x, norm, power_iters=10).r
    kl_star = nn.kl_divergence(p, nn.predict_proba(m, x + r))
    rng = np.random.default_rng(0)
    wins = 0
    for _ in range(100):
        d = rng.normal(size=5)
        d = norm * d / np.linalg.norm(d)
        wins += kl_star >= nn.kl_divergence(p, nn.predict_proba(m, x + d))
    assert wins >= 90


def test_vat_degenerate_model_falls_back():
    m = nn.ModelParams([np.zeros((2, 5))], [np.zeros(2)])
    r = vat_perturbation(m, X, 0.2)
    assert r.degenerate and abs(np.linalg.norm(r.r) - 0.2) <= 1e-9


def test_vat_lambda_zero_and_constant_model():
    m = small_model()
    _, g = nn.backprop(m, X, 1)
    assert vat_step(m, X, 1, 0.0, 0.2, 0.05).equals(nn.sgd_step(m, g, 0.05))
    const = nn.ModelParams([np.zeros((2, 5))], [np.array([0.3, -0.1])])
    loss, gc = vat_loss_and_grad(const, X, 1, 2.0, np.full(5, 0.1))
    loss0, g0 = nn.backprop(const, X, 1)
    assert loss == pytest.approx(loss0) and np.allclose(gc.to_vector(), g0.to_vector())


@pytest.mark.parametrize("seed", range(3))
def test_vat_gradient_finite_differences(seed):
    m = small_model(seed)
    r = vat_perturbation(m, X, 0.3, seed=seed).r
    target = nn.predict_proba(m, X)

    def f(mm):
        return vat_loss_and_grad(mm, X, 1, 0.8, r, target=target)[0]

    _, g = vat_loss_and_grad(m, X, 1, 0.8, r, target=target)
    assert rel_err(g.to_vector(), fd_grad(f, m)) < 1e-4


def test_retrain_config_validation():
    with pytest.raises(ValueError):
        RetrainConfig(method="pgd")
    with pytest.raises(ValueError):
        RetrainConfig(epsilon=0.0)


def test_adversarial_retrain_is_deterministic():
    data = aebs.make_training_set(30, 2)
    m = nn.init_model([256, 8, 2], 2)
    for method in ("fgsm", "vat"):
        cfg = RetrainConfig(method=method, epochs=1, seed=4)
        assert adversarial_retrain(m, data, cfg).equals(adversarial_retrain(m, data, cfg))


# hinge training

def test_very_negative_k_never_moves_parameters():
    data = aebs.make_training_set(40, 1)
    m = nn.init_model([256, 8, 2], 1)
    assert hinge_train(m, data, -10.0, 2, 0.5, 0).equals(m)
    assert mean_hinge_loss(m, data, -10.0) == 0.0


def test_hinge_loss_monotone_in_k_at_fixed_parameters():
    data = aebs.make_training_set(40, 1)
    m = nn.init_model([256, 8, 2], 1)
    losses = [mean_hinge_loss(m, data, k) for k in (0.0, -0.01, -0.05, -0.1, -0.25)]
    assert all(a >= b for a, b in zip(losses, losses[1:]))


def test_hinge_k0_trains_on_separable_data():
    rng = np.random.default_rng(0)
    Xs = rng.random((200, 2))
    keep = np.abs(Xs.sum(axis=1) - 1.0) > 0.1
    data = Dataset(Xs[keep], (Xs[keep].sum(axis=1) > 1.0).astype(int))
    m = hinge_train(nn.init_model([2, 8, 2], 0), data, 0.0, 60, 0.5, 0)
    assert nn.accuracy(m, data) >= 0.9


# counterexample augmentation

def test_empty_countex_equals_plain_training():
    data = aebs.make_training_set(30, 5)
    m = nn.init_model([256, 8, 2], 5)
    cfg = AugmentConfig(train=nn.TrainConfig(epochs=2, eta=0.05, seed=1))
    empty = CounterexampleSet(data.subset([0]), [COMPONENT_LEVEL]).examples
    assert augment_retrain(m, data, None, cfg).equals(nn.train(m, data, cfg.train))
    assert augmented_dataset(data, None) is data
    assert len(empty) == 1


def test_augmented_size_has_no_dedup():
    data = aebs.make_training_set(30, 5)
    cx = CounterexampleSet(data.subset([0, 0, 1]), [SYSTEM_LEVEL] * 3)
    assert len(augmented_dataset(data, cx)) == 33
    assert len(augmented_dataset(data, cx, weight=2)) == 36


def test_provenance_validation():
    data = aebs.make_training_set(4, 5)
    with pytest.raises(ValueError):
        CounterexampleSet(data, [SYSTEM_LEVEL])
    with pytest.raises(ValueError):
        CounterexampleSet(data.subset([0]), ["made-up"])


def test_augmentation_fixes_misclassified_points(toy):
    model, train, test = toy
    wrong = [fgsm(model, x, y, 0.1) for x, y in test]
    cx_x = np.array([r.adversarial_x for r in wrong if r.success][:20])
    cx_y = np.array([y for r, (_, y) in zip(wrong, test) if r.success][:20])
    cx = CounterexampleSet(Dataset(cx_x, cx_y), [COMPONENT_LEVEL] * 20)
    before = nn.accuracy(model, cx.examples)
    cfg = AugmentConfig(train=nn.TrainConfig(epochs=3, eta=0.05, seed=0), countex_weight=5)
    after = nn.accuracy(augment_retrain(model, train, cx, cfg), cx.examples)
    assert after > before

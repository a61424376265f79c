import numpy as np
import pytest

from afsl.attacks import (
    AttackConfig,
    AttackError,
    cw_margin,
    fgsm,
    loss_and_grad,
    pgd,
    predict_labels,
    run_attack,
    transfer_attack,
)
from afsl.models import LinearModel, get_architecture, init_params

EPS = 8 / 255


def linear(d=12, seed=0):
    w = np.random.default_rng(seed).normal(size=d)
    return LinearModel.antisymmetric(w), w


def interior(n, d, seed=0):
    return np.random.default_rng(seed).uniform(0.1, 0.9, size=(n, d))


def cnn(seed=0):
    return init_params(get_architecture("tiny-cnn", (2, 8, 8)), seed)


def clips(n, seed=0):
    return np.random.default_rng(seed).uniform(size=(n, 2, 8, 8, 1))


def test_config_validation_and_defaults():
    cfg = AttackConfig.pgd()
    assert cfg.epsilon == pytest.approx(8 / 255) and cfg.steps == 10
    assert cfg.alpha == pytest.approx(2.5 * cfg.epsilon / 10)
    for bad in ({"epsilon": -1}, {"steps": 0}, {"step_size": 0}, {"norm": "L1"}, {"loss_target": "x"}):
        with pytest.raises(AttackError):
            AttackConfig(**bad)
    cw = AttackConfig.cw2()
    assert (cw.kappa, cw.c, cw.steps, cw.norm) == (0.0, 1.0, 50, "L2")


def test_fgsm_zero_epsilon_is_identity():
    m, _ = linear()
    x = interior(3, 12)
    np.testing.assert_array_equal(fgsm(m, x, np.ones(3, int), 0.0), x)


def test_fgsm_linear_direction():
    m, w = linear()
    x = interior(4, 12)
    adv = fgsm(m, x, np.ones(4, int), EPS)
    np.testing.assert_allclose(adv - x, np.broadcast_to(-EPS * np.sign(w), x.shape), atol=1e-15)
    adv0 = fgsm(m, x, np.zeros(4, int), EPS)
    np.testing.assert_allclose(adv0 - x, np.broadcast_to(EPS * np.sign(w), x.shape), atol=1e-15)


def test_fgsm_rejects_out_of_range_input():
    m, _ = linear()
    with pytest.raises(AttackError, match=r"\[0, 1\]"):
        fgsm(m, np.full((1, 12), 1.5), np.ones(1, int), EPS)


def test_pgd_single_step_equals_fgsm_with_step_size():
    m, _ = linear()
    x = interior(5, 12)
    y = np.array([0, 1, 1, 0, 1])
    cfg = AttackConfig.pgd(steps=1, epsilon=EPS, step_size=EPS / 2, random_start=False)
    _, g = loss_and_grad(m, x, y)
    expected = np.clip(np.clip(x + EPS / 2 * np.sign(g), x - EPS, x + EPS), 0, 1)
    np.testing.assert_array_equal(pgd(m, x, y, cfg), expected)


def test_pgd_linear_reaches_vertex():
    m, w = linear()
    x = interior(6, 12, seed=1)
    y = np.ones(6, int)
    adv = pgd(m, x, y, AttackConfig.pgd(steps=10, epsilon=EPS, random_start=False))
    np.testing.assert_allclose(adv, x - EPS * np.sign(w), atol=1e-12)


def test_pgd_best_so_far_non_decreasing_and_above_clean():
    p = cnn()
    x = clips(6)
    y = np.array([0, 1, 0, 1, 0, 1])
    hist = []
    adv = pgd(p, x, y, AttackConfig.pgd(steps=8, random_start=False), history=hist)
    h = np.array(hist)
    assert np.all(np.diff(h, axis=0) >= 0)
    clean_loss, _ = loss_and_grad(p, x, y)
    adv_loss, _ = loss_and_grad(p, adv, y)
    assert np.all(adv_loss >= clean_loss - 1e-15)


def test_pgd_random_start_deterministic_per_seed():
    p = cnn()
    x, y = clips(3), np.array([0, 1, 1])
    a = pgd(p, x, y, AttackConfig.pgd(steps=3, seed=4))
    b = pgd(p, x, y, AttackConfig.pgd(steps=3, seed=4))
    c = pgd(p, x, y, AttackConfig.pgd(steps=3, seed=5))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


@pytest.mark.parametrize("target", ["classification", "feature_dissimilarity", "kl"])
def test_pgd_targets_stay_in_budget(target):
    p = cnn()
    x, y = clips(4), np.array([0, 1, 0, 1])
    adv = pgd(p, x, y, AttackConfig.pgd(steps=3, loss_target=target, random_start=False))
    assert np.max(np.abs(adv - x)) <= EPS + 1e-12
    assert adv.min() >= 0 and adv.max() <= 1


def test_pgd_rejects_l2():
    with pytest.raises(AttackError, match="Linf"):
        pgd(cnn(), clips(1), np.ones(1, int), AttackConfig.cw2())


def test_pgd_does_not_touch_model_gradients():
    p = cnn()
    pgd(p, clips(2), np.array([0, 1]), AttackConfig.pgd(steps=2))
    assert all(t.grad is None for t in p.parameters())


def test_cw_against_grid_oracle():
    w = np.array([1.0, -0.5])
    m = LinearModel.antisymmetric(w)
    x = np.array([[0.7, 0.4]])
    y = np.array([1])
    eps = 0.1
    adv = cw_margin(m, x, y, AttackConfig.cw2(epsilon=eps))
    z = m.logits(adv).data[0]
    attained = max(z[1] - z[0], 0.0)
    angles = np.linspace(0, 2 * np.pi, 1000, endpoint=False)
    pts = np.clip(x + eps * np.stack([np.cos(angles), np.sin(angles)], axis=1), 0, 1)
    grid_best = np.min(np.maximum(2 * pts @ w, 0.0))
    assert attained <= grid_best + 1e-3
    assert np.linalg.norm(adv - x) <= eps + 1e-9


def test_cw_trivial_cases():
    m, w = linear(4)
    x = interior(2, 4)
    y = (x @ w < 0).astype(int)  # label opposite to the model's prediction
    np.testing.assert_array_equal(cw_margin(m, x, y, AttackConfig.cw2()), x)
    np.testing.assert_array_equal(cw_margin(m, x, 1 - y, AttackConfig.cw2(epsilon=0.0)), x)


def test_transfer_degenerates_to_white_box():
    p = cnn()
    x, y = clips(4), np.array([0, 1, 0, 1])
    cfg = AttackConfig.pgd(steps=3, seed=2)
    adv, success = transfer_attack(p, p, x, y, cfg)
    np.testing.assert_array_equal(adv, pgd(p, x, y, cfg))
    np.testing.assert_array_equal(success, predict_labels(p, adv) != y)


def test_transfer_zero_budget_keeps_predictions():
    s, t = cnn(0), cnn(1)
    x, y = clips(4), np.array([0, 1, 0, 1])
    adv, success = transfer_attack(s, t, x, y, AttackConfig.pgd(epsilon=0.0))
    np.testing.assert_array_equal(adv, x)
    np.testing.assert_array_equal(success, predict_labels(t, x) != y)


def test_transfer_shape_mismatch():
    other = init_params(get_architecture("tiny-cnn-wide", (4, 8, 8)), 0)
    with pytest.raises(AttackError, match="input shape"):
        transfer_attack(other, cnn(), clips(1), np.ones(1, int), AttackConfig.pgd())


def test_run_attack_dispatch():
    p = cnn()
    x, y = clips(2), np.array([0, 1])
    assert run_attack("fgsm", p, x, y, AttackConfig.pgd()).shape == x.shape
    with pytest.raises(AttackError, match="surrogate"):
        run_attack("transfer", p, x, y, AttackConfig.pgd())
    with pytest.raises(AttackError, match="unknown"):
        run_attack("deepfool", p, x, y, AttackConfig.pgd())

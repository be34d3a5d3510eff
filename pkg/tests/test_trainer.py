"""Losses, the Adam update, early stopping, and the freezing contract."""

import numpy as np
import pytest

import epicast.trainer as trainer_mod
from epicast.backbone import BackboneConfig
from epicast.data import SplitSpec, SirParams, split_dataset, synth_sir
from epicast.model import ModelConfig, backbone_hash, build_model
from epicast.tensor import Parameter, Tensor, constant, mul, tsum
from epicast.trainer import (
    Adam,
    TrainConfig,
    TrainingDivergedError,
    compute_loss,
    train,
    training_loss,
    validation_loss,
)


def _tiny_ds(n=4, days=24, w=3, seed=3):
    return synth_sir(n, days, SirParams(beta=0.5, gamma_rec=0.2, population=2000), rng_seed=seed, w=w, scale=True)


def _tiny_model(ds, width=8, mode="frozen-transformer", seed=0):
    mc = ModelConfig(n_regions=ds.N, w=ds.w, width=width, seed=seed)
    bc = BackboneConfig(mode=mode, depth=2, width=width, heads=2, seed=seed + 1)
    return build_model(mc, bc)


# -- loss ---------------------------------------------------------------------------


def test_loss_zero_when_predictions_match():
    x = np.random.default_rng(0).normal(size=(2, 3, 4))
    m = np.random.default_rng(1).uniform(0, 1, size=(2, 3, 3))
    loss = compute_loss(Tensor(x), x, Tensor(m), m, mob_weight=1.0)
    assert float(loss.data) == 0.0


def test_loss_lambda_zero_drops_mobility_term():
    rng = np.random.default_rng(2)
    x_pred, x_true = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 3, 4))
    m_pred, m_true = rng.normal(size=(2, 3, 3)), rng.normal(size=(2, 3, 3))
    with_mob = compute_loss(Tensor(x_pred), x_true, Tensor(m_pred), m_true, mob_weight=0.0)
    without = compute_loss(Tensor(x_pred), x_true, None, None)
    assert float(with_mob.data) == pytest.approx(float(without.data))


def test_loss_l2_norm_hand_oracle():
    # single patch, single region, componentwise error (3, 4): mean L2 norm = 5
    pred = Tensor(np.array([[[3.0, 4.0]]]))
    true = np.zeros((1, 1, 2))
    loss = compute_loss(pred, true, None, None, loss_form="mean-l2-norm")
    assert float(loss.data) == pytest.approx(5.0, abs=1e-12)
    squared = compute_loss(pred, true, None, None, loss_form="mean-squared")
    assert float(squared.data) == pytest.approx(25.0, abs=1e-12)


def test_loss_rejects_bad_inputs():
    pred = Tensor(np.zeros((1, 1, 2)))
    with pytest.raises(ValueError):
        compute_loss(pred, np.zeros((1, 2, 2)), None, None)
    with pytest.raises(ValueError):
        compute_loss(pred, np.zeros((1, 1, 2)), None, None, mob_weight=-1.0)
    with pytest.raises(ValueError):
        compute_loss(pred, np.zeros((1, 1, 2)), None, None, loss_form="harmonic")


# -- Adam ----------------------------------------------------------------------------


def test_adam_single_step_matches_closed_form():
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    p = Parameter(2.0, name="p")
    opt = Adam([p], lr=lr, beta1=b1, beta2=b2, eps=eps)
    loss = mul(p, 3.0)  # gradient is exactly 3
    loss.backward()
    opt.step()
    g = 3.0
    m_hat = ((1 - b1) * g) / (1 - b1)
    v_hat = ((1 - b2) * g * g) / (1 - b2)
    expected = 2.0 - lr * m_hat / (np.sqrt(v_hat) + eps)
    assert float(p.data) == pytest.approx(expected, abs=1e-12)


def test_adam_two_steps_match_manual_recurrence():
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    p = Parameter(1.0, name="p")
    opt = Adam([p], lr=lr, beta1=b1, beta2=b2, eps=eps)
    m = v = 0.0
    theta = 1.0
    for t in range(1, 3):
        loss = mul(tsum(mul(p, p)), 0.5)  # grad = p
        p.zero_grad()
        loss.backward()
        g = theta
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        opt.step()
        assert float(p.data) == pytest.approx(theta, abs=1e-12)


def test_adam_never_touches_frozen_params():
    frozen = Parameter(np.ones(3), name="w", frozen=True)
    live = Parameter(np.ones(3), name="v")
    opt = Adam([frozen, live], lr=0.1)
    assert opt.params == [live]


# -- training loop -------------------------------------------------------------------


def test_training_reduces_loss():
    ds = _tiny_ds()
    model = _tiny_model(ds)
    splits = split_dataset(ds, SplitSpec(test_len=3, val_len=3))
    model, report = train(model, ds, splits.train, splits.val, TrainConfig(max_epochs=40, patience=100, lr=1e-2))
    assert report.train_losses[-1] < report.train_losses[0]
    assert report.stopped_epoch == 40
    assert report.best_val == min(report.val_losses)


def test_first_epoch_does_not_increase_loss():
    ds = _tiny_ds(seed=11)
    model = _tiny_model(ds, seed=4)
    splits = split_dataset(ds, SplitSpec(test_len=3, val_len=3))
    _, report = train(model, ds, splits.train, splits.val, TrainConfig(max_epochs=2, patience=100, lr=1e-3))
    assert report.train_losses[1] <= report.train_losses[0]


def test_frozen_backbone_bytes_unchanged_by_training():
    ds = _tiny_ds()
    model = _tiny_model(ds)
    before = backbone_hash(model)
    splits = split_dataset(ds, SplitSpec(test_len=3, val_len=3))
    model, _ = train(model, ds, splits.train, splits.val, TrainConfig(max_epochs=25, patience=100, lr=1e-2))
    assert backbone_hash(model) == before


def test_early_stopping_rule(monkeypatch):
    ds = _tiny_ds()
    model = _tiny_model(ds)
    splits = split_dataset(ds, SplitSpec(test_len=3, val_len=3))
    fake_vals = iter([1.0, 2.0, 3.0, 4.0])
    monkeypatch.setattr(trainer_mod, "validation_loss", lambda *a, **k: next(fake_vals))
    _, report = train(model, ds, splits.train, splits.val, TrainConfig(max_epochs=50, patience=1))
    assert report.stopped_epoch == 2
    assert report.best_epoch == 1
    assert report.best_val == 1.0


def test_early_stopping_restores_best_epoch_params(monkeypatch):
    ds = _tiny_ds()
    model = _tiny_model(ds)
    splits = split_dataset(ds, SplitSpec(test_len=3, val_len=3))
    seen: list[list[np.ndarray]] = []
    vals = iter([3.0, 1.0, 2.0, 2.5, 2.6])

    def spy(model_arg, *a, **k):
        seen.append([p.data.copy() for p in model.trainable_parameters()])
        return next(vals)

    monkeypatch.setattr(trainer_mod, "validation_loss", spy)
    model, report = train(model, ds, splits.train, splits.val, TrainConfig(max_epochs=50, patience=3))
    assert report.best_epoch == 2
    assert report.stopped_epoch == 5
    for p, best in zip(model.trainable_parameters(), seen[1]):
        np.testing.assert_array_equal(p.data, best)


def test_divergence_reported_with_epoch(monkeypatch):
    ds = _tiny_ds()
    model = _tiny_model(ds)
    splits = split_dataset(ds, SplitSpec(test_len=3, val_len=3))
    bad = constant(np.array(np.nan))
    monkeypatch.setattr(trainer_mod, "training_loss", lambda *a, **k: bad)
    with pytest.raises(TrainingDivergedError) as exc:
        train(model, ds, splits.train, splits.val, TrainConfig(max_epochs=5))
    assert exc.value.epoch == 1


def test_too_short_training_range_rejected():
    ds = _tiny_ds()
    model = _tiny_model(ds)
    with pytest.raises(ValueError):
        train(model, ds, range(0, 4), range(4, 8), TrainConfig())


def test_training_deterministic():
    ds = _tiny_ds()
    splits = split_dataset(ds, SplitSpec(test_len=3, val_len=3))
    outs = []
    for _ in range(2):
        model = _tiny_model(ds)
        model, report = train(model, ds, splits.train, splits.val, TrainConfig(max_epochs=10, patience=100))
        outs.append((report.train_losses, [p.data.tobytes() for p in model.parameters()]))
    assert outs[0] == outs[1]


def test_validation_loss_uses_history_context():
    ds = _tiny_ds(days=30)
    model = _tiny_model(ds)
    splits = split_dataset(ds, SplitSpec(test_len=3, val_len=3))
    v = validation_loss(model, ds, splits.val, TrainConfig())
    assert np.isfinite(v) and v >= 0
    t = float(training_loss(model, ds, splits.train, TrainConfig()).data)
    assert np.isfinite(t)


def test_loss_decrease_over_500_epochs_tiny_dataset():
    ds = _tiny_ds(n=3, days=18, seed=9)
    model = _tiny_model(ds, width=8, seed=2)
    splits = split_dataset(ds, SplitSpec(test_len=3, val_len=3))
    model, report = train(
        model, ds, splits.train, splits.val, TrainConfig(max_epochs=500, patience=500, lr=1e-2)
    )
    assert report.train_losses[-1] < report.train_losses[0]
    assert min(report.train_losses) < 0.5 * report.train_losses[0]

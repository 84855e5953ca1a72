import math
from dataclasses import replace

import numpy as np
import pytest

from conftest import small_model

from tcinn.autodiff import Parameter, Tensor
from tcinn.data.manifest import load_manifest
from tcinn.errors import ConfigMismatchError, NumericalError, ShapeError, ValidationError
from tcinn.model.layers import Inv1x1Params
from tcinn.model.network import ModelConfig, augment_channels, init_model
from tcinn.train import (
    AdamState,
    BatchPrefetcher,
    LossCurve,
    LossRecord,
    TrainConfig,
    adam_step,
    clip_grad_norm,
    load_dataset,
    loss_hold,
    lr_at_epoch,
    read_loss_curve,
    train,
    write_loss_curve,
)

TINY_MODEL = ModelConfig(channels=3, blocks=2, depth=2, growth=4)


def _tiny_config(**overrides):
    settings = dict(epochs=2, initial_lr=1e-3, batch_size=2, seed=1, model=TINY_MODEL)
    settings.update(overrides)
    return TrainConfig(**settings)


def test_loss_of_identical_pair_on_identity_model_is_zero(float64, rng):
    model = init_model(0, ModelConfig(channels=3, blocks=2, depth=2, growth=4))
    x = Tensor(rng.uniform(size=(2, 3, 4, 4)))
    total, parts = loss_hold(x, x, model, 1.0)
    assert total.item() == pytest.approx(0.0, abs=1e-20)
    assert parts.forward.item() == pytest.approx(0.0, abs=1e-20)


@pytest.mark.parametrize("lam", [0.0, 1.0, 2.5])
def test_loss_on_identity_model_is_weighted_mse(float64, rng, lam):
    model = init_model(0, ModelConfig(channels=3, blocks=3, depth=2, growth=4))
    x = rng.uniform(size=(2, 3, 4, 4))
    y = rng.uniform(size=(2, 3, 4, 4))
    mse = float(np.mean((x - y) ** 2))
    total, parts = loss_hold(Tensor(x), Tensor(y), model, lam)
    assert parts.forward.item() == pytest.approx(mse, rel=1e-9)
    assert parts.inverse.item() == pytest.approx(mse, rel=1e-9)
    assert total.item() == pytest.approx((lam + 1.0) * mse, rel=1e-9)


def test_loss_rejects_shape_mismatch(float64):
    model = small_model()
    with pytest.raises(ShapeError):
        loss_hold(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((1, 3, 4, 5))), model, 1.0)


def test_learning_rate_schedule():
    cfg = TrainConfig(epochs=300, initial_lr=1e-4, halving_period=50)
    assert lr_at_epoch(0, cfg) == 1e-4
    assert lr_at_epoch(49, cfg) == 1e-4
    assert lr_at_epoch(50, cfg) == 5e-5
    assert lr_at_epoch(149, cfg) == 2.5e-5
    with pytest.raises(ValidationError):
        lr_at_epoch(300, cfg)
    with pytest.raises(ValidationError):
        lr_at_epoch(-1, cfg)


def test_train_config_validation():
    assert TrainConfig(model=ModelConfig(channels=9)).channels == 9
    for bad in (dict(epochs=0), dict(initial_lr=0.0), dict(lam=-1.0), dict(batch_size=0), dict(clip_grad_norm=0.0)):
        with pytest.raises(ValidationError):
            TrainConfig(**bad)


def test_adam_first_step_moves_by_learning_rate(float64):
    theta = Parameter("theta", [0.0, 0.0])
    params = {"theta": theta}
    state = AdamState.zeros(params)
    adam_step(params, {"theta": Tensor([1.0, -3.0])}, state, lr=0.1)
    np.testing.assert_allclose(theta.value, [-0.1, 0.1], rtol=1e-6)
    assert state.step == 1


def test_adam_zero_gradient_leaves_parameters(float64):
    theta = Parameter("theta", [0.5, -2.0])
    params = {"theta": theta}
    state = AdamState.zeros(params)
    for _ in range(3):
        adam_step(params, {"theta": Tensor([0.0, 0.0])}, state, lr=0.1)
    np.testing.assert_array_equal(theta.value, [0.5, -2.0])


def test_adam_rejects_non_finite_gradients(float64):
    params = {"a": Parameter("a", [1.0]), "b": Parameter("b", [1.0])}
    state = AdamState.zeros(params)
    with pytest.raises(NumericalError) as info:
        adam_step(params, {"a": Tensor([0.1]), "b": Tensor([np.nan])}, state, lr=0.1)
    assert info.value.parameter == "b"
    assert params["a"].value[0] == 1.0
    assert state.step == 0


def test_clip_grad_norm(float64):
    grads = {"a": Tensor([3.0]), "b": Tensor([4.0])}
    clipped, norm = clip_grad_norm(grads, 1.0)
    assert norm == pytest.approx(5.0)
    assert clipped["a"].item() == pytest.approx(0.6)
    assert clipped["b"].item() == pytest.approx(0.8)
    unchanged, _ = clip_grad_norm(grads, 10.0)
    assert unchanged is grads
    with pytest.raises(ValidationError):
        clip_grad_norm(grads, 0.0)


def test_loss_curve_round_trip(tmp_path):
    curve = LossCurve()
    curve.append(LossRecord(0, 0.25, 0.125, 0.125, 1e-4))
    curve.append(LossRecord(1, 1 / 3, 0.1, 0.2, 5e-5))
    with pytest.raises(ValidationError):
        curve.append(LossRecord(1, 0.1, 0.05, 0.05, 5e-5))
    path = write_loss_curve(curve, tmp_path / "loss.csv")
    assert path.read_text().splitlines()[0] == "epoch,loss_total,loss_forward,loss_inverse,lr"
    restored = read_loss_curve(path)
    assert restored.totals() == curve.totals()
    assert [r.lr for r in restored.records] == [1e-4, 5e-5]


def test_loss_curve_is_written_in_positional_notation(tmp_path):
    curve = LossCurve()
    curve.append(LossRecord(50, 3.2e-05, 1.6e-05, 1.6e-05, 5e-05))
    curve.append(LossRecord(51, 1234.5, 0.5, 1234.0, 5e-05))
    body = write_loss_curve(curve, tmp_path / "loss.csv").read_text().splitlines()[1:]
    assert all("e" not in line.lower() for line in body)
    assert body[0].split(",")[4] == "0.000050000000000000002"
    for cell in body[0].split(",")[1:]:
        assert len(cell.lstrip("0.")) >= 9
    restored = read_loss_curve(tmp_path / "loss.csv")
    assert [r.loss_total for r in restored.records] == [3.2e-05, 1234.5]
    assert restored.records[0].lr == 5e-05


def test_batch_prefetcher_follows_order(float64):
    sources = np.arange(4.0).reshape(4, 1, 1, 1)
    targets = -sources
    batches = list(BatchPrefetcher(sources, targets, [3, 1, 0, 2], batch_size=3, channels=3))
    assert [x.shape for x, _ in batches] == [(3, 3, 1, 1), (1, 3, 1, 1)]
    assert batches[0][0].numpy()[:, 0, 0, 0].tolist() == [3.0, 1.0, 0.0]
    assert batches[1][1].numpy()[:, 2, 0, 0].tolist() == [-2.0]


def test_batch_prefetcher_forwards_worker_errors(float64):
    sources = np.zeros((4, 2, 2, 2))
    with pytest.raises(ShapeError):
        list(BatchPrefetcher(sources, sources, range(4), batch_size=2, channels=3))


def test_batch_prefetcher_can_be_abandoned(float64):
    sources = np.zeros((20, 1, 2, 2))
    prefetcher = BatchPrefetcher(sources, sources, range(20), batch_size=1, channels=3, depth=1)
    for _ in zip(range(2), prefetcher):
        pass


def test_validate_only_returns_initial_checkpoint(phantom_dir):
    manifest = load_manifest(phantom_dir / "manifest.csv")
    ckpt, curve = train(manifest, _tiny_config(), validate_only=True)
    assert len(curve) == 0
    assert ckpt.epoch == 0
    assert ckpt.model_config == TINY_MODEL


def test_first_epoch_loss_is_twice_the_data_mse(phantom_dir):
    manifest = load_manifest(phantom_dir / "manifest.csv")
    sources, targets = load_dataset(manifest)
    mse = float(np.mean((sources.astype(np.float64) - targets.astype(np.float64)) ** 2))
    _, curve = train(manifest, _tiny_config(epochs=1, batch_size=len(manifest)))
    record = curve.records[0]
    assert record.epoch == 0
    assert record.loss_total == pytest.approx(2.0 * mse, rel=1e-4)
    assert record.loss_forward == pytest.approx(mse, rel=1e-4)
    assert record.lr == 1e-3
    assert record.roundtrip_error < 1e-4


def test_training_writes_outputs_and_is_deterministic(phantom_dir, tmp_path):
    manifest = load_manifest(phantom_dir / "manifest.csv")
    cfg = _tiny_config(epochs=3)
    first, curve = train(manifest, cfg, out_dir=tmp_path / "run")
    second, _ = train(manifest, cfg)
    assert (tmp_path / "run" / "model.ckpt").exists()
    assert len(read_loss_curve(tmp_path / "run" / "loss.csv")) == 3
    assert [r.epoch for r in curve.records] == [0, 1, 2]
    assert first.epoch == 3
    for name, value in first.parameters.items():
        assert value.tobytes() == second.parameters[name].tobytes(), name
    assert all(math.isfinite(total) for total in curve.totals())


def test_resume_continues_the_same_trajectory(phantom_dir):
    manifest = load_manifest(phantom_dir / "manifest.csv")
    straight, _ = train(manifest, _tiny_config(epochs=2))
    halfway, _ = train(manifest, _tiny_config(epochs=1))
    resumed, curve = train(manifest, _tiny_config(epochs=2), resume=halfway)
    assert [r.epoch for r in curve.records] == [1]
    assert resumed.optimizer.step == straight.optimizer.step
    for name, value in straight.parameters.items():
        np.testing.assert_array_equal(resumed.parameters[name], value, err_msg=name)


def test_resume_keeps_the_earlier_loss_history(phantom_dir):
    manifest = load_manifest(phantom_dir / "manifest.csv")
    _, straight = train(manifest, _tiny_config(epochs=2))
    halfway, history = train(manifest, _tiny_config(epochs=1))
    _, curve = train(manifest, _tiny_config(epochs=2), resume=halfway, history=history)
    assert [r.epoch for r in curve.records] == [0, 1]
    assert curve.totals() == straight.totals()


def test_training_lowers_the_loss(phantom_dir):
    manifest = load_manifest(phantom_dir / "manifest.csv")
    _, curve = train(manifest, _tiny_config(epochs=6))
    assert curve.records[-1].loss_total < curve.records[0].loss_total
    assert all(r.roundtrip_error < 1e-4 for r in curve.records)


def test_stale_inverse_aborts_training(phantom_dir, monkeypatch):
    fresh = Inv1x1Params.factorization

    def first_factorization(self):
        # keep serving the factorization of the initial weights
        if not hasattr(self, "_frozen_factor"):
            self._frozen_factor = fresh(self)
        return self._frozen_factor

    monkeypatch.setattr(Inv1x1Params, "factorization", first_factorization)
    manifest = load_manifest(phantom_dir / "manifest.csv")
    with pytest.raises(NumericalError) as info:
        train(manifest, _tiny_config(epochs=2, initial_lr=1e-2))
    assert info.value.epoch == 0
    assert "round trip" in str(info.value)


def test_resume_rejects_other_model_config(phantom_dir):
    manifest = load_manifest(phantom_dir / "manifest.csv")
    ckpt, _ = train(manifest, _tiny_config(), validate_only=True)
    with pytest.raises(ConfigMismatchError):
        train(manifest, _tiny_config(model=replace(TINY_MODEL, channels=6)), resume=ckpt)


def test_non_finite_loss_stops_training(phantom_dir):
    manifest = load_manifest(phantom_dir / "manifest.csv")
    cfg = _tiny_config(model=ModelConfig(channels=3, blocks=1, depth=2, growth=4))
    ckpt, _ = train(manifest, cfg, validate_only=True)
    name = "block0.coupling.t.conv1.bias"
    ckpt.parameters[name] = np.full_like(ckpt.parameters[name], 1e38)
    with pytest.raises(NumericalError) as info:
        train(manifest, cfg, resume=ckpt)
    assert info.value.epoch == 0
    assert info.value.batch == 0


def test_augmented_batches_repeat_the_image(float64, rng):
    img = rng.uniform(size=(2, 1, 3, 3))
    x = augment_channels(Tensor(img), 6).numpy()
    assert np.all(x == img)

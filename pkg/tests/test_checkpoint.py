import numpy as np
import pytest

from conftest import small_model

from tcinn.autodiff import Tensor
from tcinn.data.tensor_file import encode_bundle, write_tensor_file
from tcinn.errors import ChecksumError, CheckpointError, ConfigMismatchError, PayloadMismatchError
from tcinn.model.network import ModelConfig, model_forward, model_parameters
from tcinn.train import (
    AdamState,
    Checkpoint,
    checkpoint_from_model,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
)


def _checkpoint(actnorm=False):
    model = small_model(seed=3, actnorm=actnorm)
    params = model_parameters(model)
    state = AdamState.zeros(params)
    state.step = 7
    for name in state.first_moment:
        state.first_moment[name] = np.full(params[name].shape, 0.25, dtype=params[name].value.dtype)
        state.second_moment[name] = np.full(params[name].shape, 0.5, dtype=params[name].value.dtype)
    rng_state = np.random.default_rng([9, 1]).bit_generator.state
    return model, checkpoint_from_model(model, state, epoch=12, rng_state=rng_state)


def test_round_trip_is_bit_exact(tmp_path):
    _, ckpt = _checkpoint()
    path = save_checkpoint(ckpt, tmp_path / "nested" / "model.ckpt")
    loaded = load_checkpoint(path)
    assert loaded.model_config == ckpt.model_config
    assert loaded.epoch == 12
    assert loaded.optimizer.step == 7
    assert loaded.rng_state == ckpt.rng_state
    assert loaded.precision == "float32"
    assert set(loaded.parameters) == set(ckpt.parameters)
    for name, value in ckpt.parameters.items():
        assert loaded.parameters[name].dtype == value.dtype
        assert loaded.parameters[name].tobytes() == value.tobytes()
        assert loaded.optimizer.first_moment[name].tobytes() == ckpt.optimizer.first_moment[name].tobytes()


def test_restored_rng_state_reproduces_the_stream(tmp_path):
    _, ckpt = _checkpoint()
    loaded = load_checkpoint(save_checkpoint(ckpt, tmp_path / "model.ckpt"))
    expected = np.random.default_rng([9, 1]).permutation(10)
    rng = np.random.default_rng()
    rng.bit_generator.state = loaded.rng_state
    assert rng.permutation(10).tolist() == expected.tolist()


def test_restored_model_computes_the_same_map(tmp_path, rng):
    model, ckpt = _checkpoint(actnorm=True)
    restored = model_from_checkpoint(load_checkpoint(save_checkpoint(ckpt, tmp_path / "model.ckpt")))
    x = Tensor(rng.uniform(size=(1, 3, 6, 6)))
    np.testing.assert_array_equal(model_forward(x, restored).numpy(), model_forward(x, model).numpy())


def test_truncated_checkpoint_is_rejected(tmp_path):
    _, ckpt = _checkpoint()
    path = save_checkpoint(ckpt, tmp_path / "model.ckpt")
    data = path.read_bytes()
    path.write_bytes(data[: len(data) - 20])
    with pytest.raises(ChecksumError):
        load_checkpoint(path)


def test_config_mismatch_is_reported(tmp_path):
    _, ckpt = _checkpoint()
    path = save_checkpoint(ckpt, tmp_path / "model.ckpt")
    load_checkpoint(path, expected_config=ckpt.model_config)
    with pytest.raises(ConfigMismatchError):
        load_checkpoint(path, expected_config=ModelConfig(channels=6, blocks=2, depth=2, growth=4))


@pytest.mark.parametrize(
    "meta",
    [
        {"kind": "NOPE", "format_version": 1, "model_config": {}},
        {"kind": "CKPT", "format_version": 2, "model_config": {}},
        {"kind": "CKPT", "format_version": 1, "model_config": {"channels": 3, "colour": "red"}},
    ],
    ids=["kind", "version", "config"],
)
def test_foreign_bundles_are_rejected(tmp_path, meta):
    path = tmp_path / "other.ckpt"
    path.write_bytes(encode_bundle(meta, {}))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_plain_tensor_file_is_not_a_checkpoint(tmp_path):
    path = write_tensor_file(np.zeros((2, 2), dtype=np.float32), tmp_path / "x.tcit")
    with pytest.raises(PayloadMismatchError):
        load_checkpoint(path)


def test_parameter_set_must_match_the_config():
    _, ckpt = _checkpoint()
    partial = dict(ckpt.parameters)
    partial.pop("block0.inv1x1.weight")
    with pytest.raises(CheckpointError):
        model_from_checkpoint(Checkpoint(model_config=ckpt.model_config, parameters=partial))

from typing import Callable, Dict, Iterable, Optional

import numpy as np
import pytest

from tcinn.autodiff import Parameter, Tape, Tensor, backward, precision, set_precision
from tcinn.data.phantom import PhantomConfig, generate_phantom_dataset
from tcinn.model.network import ModelConfig, TCINNModel, init_model, model_parameters


@pytest.fixture(autouse=True)
def default_precision():
    set_precision("float32")
    yield
    set_precision("float32")


@pytest.fixture
def float64():
    with precision("float64"):
        yield


@pytest.fixture
def float32():
    with precision("float32"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def randomize_model(model: TCINNModel, rng: np.random.Generator, scale: float = 0.05) -> TCINNModel:
    """Perturb the sub-network weights so that couplings stop being the identity."""
    for name, param in model_parameters(model).items():
        if ".coupling." in name:
            param.assign(param.value + rng.normal(0.0, scale, param.shape))
        elif name.endswith("actnorm.scale"):
            param.assign(param.value * rng.uniform(0.8, 1.25, param.shape))
        elif name.endswith("actnorm.shift"):
            param.assign(param.value + rng.normal(0.0, scale, param.shape))
    return model


def small_model(seed: int = 0, randomize: bool = True, **overrides) -> TCINNModel:
    settings = dict(channels=3, blocks=2, depth=2, growth=4)
    settings.update(overrides)
    model = init_model(seed, ModelConfig(**settings))
    if randomize:
        randomize_model(model, np.random.default_rng(seed + 100))
    return model


def analytic_gradients(loss_fn: Callable[[], Tensor], params: Iterable[Parameter]) -> Dict[str, np.ndarray]:
    params = list(params)
    with Tape() as tape:
        loss = loss_fn()
    grads = backward(tape, loss, params)
    return {p.name: grads[p.name].numpy() for p in params}


def numeric_gradient(
    loss_fn: Callable[[], Tensor], param: Parameter, index: tuple, h: float = 1e-6
) -> float:
    """Central difference of ``loss_fn`` in one entry of ``param``; restores the value afterwards."""
    original = param.value.copy()
    try:
        bumped = original.copy()
        bumped[index] += h
        param.assign(bumped)
        upper = loss_fn().item()
        bumped[index] -= 2 * h
        param.assign(bumped)
        lower = loss_fn().item()
    finally:
        param.assign(original)
    return (upper - lower) / (2 * h)


def assert_gradients_match(
    loss_fn: Callable[[], Tensor],
    params: Iterable[Parameter],
    rtol: float = 1e-6,
    atol: float = 1e-9,
    samples: int = 4,
    rng: Optional[np.random.Generator] = None,
) -> None:
    params = list(params)
    rng = rng or np.random.default_rng(0)
    analytic = analytic_gradients(loss_fn, params)
    for param in params:
        flat_count = int(np.prod(param.shape)) if param.shape else 1
        picks = rng.choice(flat_count, size=min(samples, flat_count), replace=False)
        for flat in picks:
            index = np.unravel_index(int(flat), param.shape) if param.shape else ()
            expected = numeric_gradient(loss_fn, param, index)
            got = float(analytic[param.name][index])
            assert abs(got - expected) <= atol + rtol * max(abs(got), abs(expected)), (
                f"{param.name}{tuple(int(i) for i in index)}: analytic {got!r} vs numeric {expected!r}"
            )


@pytest.fixture
def phantom_dir(tmp_path):
    cfg = PhantomConfig(seed=3, size=16, pairs=4)
    generate_phantom_dataset(cfg, tmp_path / "phantom")
    return tmp_path / "phantom"

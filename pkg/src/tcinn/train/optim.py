"""Adam with bias correction, the halving learning-rate schedule and gradient clipping."""

import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np

from tcinn.autodiff.tape import GradientMap
from tcinn.autodiff.tensor import Parameter, Tensor
from tcinn.errors import NumericalError, ShapeError, ValidationError


@dataclass
class AdamState:
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros(cls, params: Mapping[str, Parameter]) -> "AdamState":
        return cls(
            step=0,
            first_moment={name: np.zeros(p.shape, dtype=p.value.dtype) for name, p in params.items()},
            second_moment={name: np.zeros(p.shape, dtype=p.value.dtype) for name, p in params.items()},
        )


def lr_at_epoch(epoch: int, cfg) -> float:
    """initial_lr · 0.5^floor(epoch / halving_period) for a 0-based epoch."""
    if not 0 <= epoch < cfg.epochs:
        raise ValidationError(f"epoch {epoch} outside [0, {cfg.epochs})")
    return cfg.initial_lr * 0.5 ** (epoch // cfg.halving_period)


def clip_grad_norm(grads: GradientMap, max_norm: float) -> Tuple[GradientMap, float]:
    """Rescale all gradients together so their global L2 norm is at most ``max_norm``."""
    if max_norm <= 0:
        raise ValidationError(f"max_norm must be positive, got {max_norm}")
    total = math.sqrt(sum(float(np.sum(np.square(g.data, dtype=np.float64))) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads, total
    factor = max_norm / total
    return {name: Tensor.wrap(g.data * g.dtype.type(factor)) for name, g in grads.items()}, total


def adam_step(
    params: Mapping[str, Parameter],
    grads: GradientMap,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One Adam update of every parameter in ``params``; updates ``state`` in place."""
    if lr <= 0:
        raise ValidationError(f"learning rate must be positive, got {lr}")
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            raise ValidationError(f"no gradient supplied for parameter {name!r}")
        if grad.shape != param.shape:
            raise ShapeError(f"gradient for {name!r} has shape {grad.shape}, parameter has {param.shape}")
        if not grad.is_finite():
            raise NumericalError(f"non-finite gradient for parameter {name!r}", parameter=name)

    state.step += 1
    t = state.step
    correction1 = 1.0 - beta1**t
    correction2 = 1.0 - beta2**t
    for name, param in params.items():
        g = grads[name].data
        dtype = param.value.dtype.type
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros(param.shape, dtype=param.value.dtype)
            v = np.zeros(param.shape, dtype=param.value.dtype)
        m = dtype(beta1) * m + dtype(1.0 - beta1) * g
        v = dtype(beta2) * v + dtype(1.0 - beta2) * g * g
        m_hat = m / dtype(correction1)
        v_hat = v / dtype(correction2)
        param.assign(param.value - dtype(lr) * m_hat / (np.sqrt(v_hat) + dtype(eps)))
        state.first_moment[name] = m
        state.second_moment[name] = v
    return state

"""Operation recording and reverse-mode differentiation."""

import threading
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np

from tcinn.autodiff.tensor import Parameter, Tensor, get_dtype
from tcinn.errors import ShapeError, ValidationError

GradientMap = Dict[str, Tensor]

_local = threading.local()


def active_tape() -> Optional["Tape"]:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Function:
    """Base class for differentiable operations.

    ``forward`` receives the input arrays and may keep whatever intermediates
    ``backward`` needs on ``self``. ``backward`` receives dL/d(output) and
    returns one gradient array per input, or ``None`` for inputs that are not
    differentiated.
    """

    name = "function"

    def __init__(self, **attrs: Any):
        for key, value in attrs.items():
            setattr(self, key, value)

    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no forward pass")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{type(self).__name__} has no adjoint rule")

    @classmethod
    def apply(cls, *tensors: Tensor, **attrs: Any) -> Tensor:
        fn = cls(**attrs)
        out = Tensor.wrap(fn.forward(*(t.data for t in tensors)))
        tape = active_tape()
        if tape is not None:
            tape.record(fn, tensors, out)
        return out


@dataclass(frozen=True)
class TapeEntry:
    function: Function
    inputs: Tuple[Tensor, ...]
    output: Tensor


class Tape:
    """Ordered record of the operations executed while the tape is active.

    A tape belongs to the thread that entered it; operations run on other
    threads are not recorded.
    """

    def __init__(self):
        self.entries: List[TapeEntry] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def record(self, function: Function, inputs: Tuple[Tensor, ...], output: Tensor) -> None:
        self.entries.append(TapeEntry(function, tuple(inputs), output))

    def __len__(self) -> int:
        return len(self.entries)


def backward(
    tape: Tape, loss: Tensor, parameters: Optional[Iterable[Parameter]] = None
) -> GradientMap:
    """Gradients of the scalar ``loss`` with respect to every parameter read on ``tape``.

    Parameters listed in ``parameters`` that the loss does not reach get a zero
    gradient of matching shape.
    """
    if loss.shape != ():
        raise ValidationError(f"backward needs a scalar loss, got shape {loss.shape}")

    dtype = get_dtype()
    grads: Dict[int, np.ndarray] = {id(loss): np.ones((), dtype=dtype)}
    leaves: Dict[int, Tensor] = {}

    for entry in reversed(tape.entries):
        grad_out = grads.pop(id(entry.output), None)
        if grad_out is None:
            continue
        input_grads = entry.function.backward(grad_out)
        for tensor, grad in zip(entry.inputs, input_grads):
            if grad is None:
                continue
            key = id(tensor)
            if tensor.param_name is not None:
                leaves[key] = tensor
            if key in grads:
                grads[key] = grads[key] + grad
            else:
                grads[key] = grad

    result: Dict[str, np.ndarray] = {}
    for key, tensor in leaves.items():
        grad = grads.get(key)
        if grad is None:
            continue
        name = tensor.param_name
        result[name] = result[name] + grad if name in result else grad

    if loss.param_name is not None:
        result.setdefault(loss.param_name, np.ones((), dtype=dtype))

    gradient_map: GradientMap = {name: Tensor.wrap(np.asarray(g)) for name, g in result.items()}
    for param in parameters or ():
        if param.name not in gradient_map:
            gradient_map[param.name] = Tensor.wrap(np.zeros(param.shape, dtype=dtype))
        elif gradient_map[param.name].shape != param.shape:
            raise ShapeError(
                f"Gradient for {param.name!r} has shape {gradient_map[param.name].shape}, "
                f"parameter has {param.shape}"
            )
    return gradient_map

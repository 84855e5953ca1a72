"""Dense tensors and trainable parameters backed by numpy arrays.

A ``Tensor`` is an immutable value: its array is flagged read-only and every
operation produces a new tensor. A ``Parameter`` is the mutable, named slot an
optimizer writes to; reading it yields a leaf tensor that carries the
parameter's name so that ``backward`` can report gradients by name.
"""

import contextlib
import threading
from typing import Iterator, Optional, Sequence, Tuple, Union

import numpy as np

from tcinn.errors import ValidationError

PRECISIONS = {"float32": np.float32, "float64": np.float64}

_precision_lock = threading.Lock()
_dtype = np.float32

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]


def get_dtype():
    return _dtype


def set_precision(name: str) -> None:
    """Switch the engine-wide floating point precision ("float32" or "float64")."""
    global _dtype
    if name not in PRECISIONS:
        raise ValidationError(f"Unknown precision {name!r}; expected one of {sorted(PRECISIONS)}")
    with _precision_lock:
        _dtype = PRECISIONS[name]


def get_precision() -> str:
    return "float64" if _dtype is np.float64 else "float32"


@contextlib.contextmanager
def precision(name: str) -> Iterator[None]:
    previous = get_precision()
    set_precision(name)
    try:
        yield
    finally:
        set_precision(previous)


def _frozen(array: np.ndarray) -> np.ndarray:
    if array.flags.writeable:
        array.setflags(write=False)
    return array


class Tensor:
    """Immutable N-dimensional array in the engine precision."""

    __slots__ = ("_data", "param_name")

    def __init__(self, data: ArrayLike, param_name: Optional[str] = None):
        self._data = _frozen(np.array(data, dtype=_dtype))
        self.param_name = param_name

    @classmethod
    def wrap(cls, array: np.ndarray, param_name: Optional[str] = None) -> "Tensor":
        """Adopt ``array`` without copying when it already has the engine dtype."""
        tensor = cls.__new__(cls)
        array = np.asarray(array)
        if array.dtype != _dtype:
            array = array.astype(_dtype)
        tensor._data = _frozen(array)
        tensor.param_name = param_name
        return tensor

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    @property
    def dtype(self):
        return self._data.dtype

    def numpy(self) -> np.ndarray:
        return np.array(self._data)

    def item(self) -> float:
        return float(self._data.item())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self._data)))

    def __add__(self, other: "Tensor") -> "Tensor":
        from tcinn.autodiff import ops

        return ops.add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        from tcinn.autodiff import ops

        return ops.sub(self, other)

    def __mul__(self, other: Union["Tensor", float, int]) -> "Tensor":
        from tcinn.autodiff import ops

        if isinstance(other, Tensor):
            return ops.hadamard(self, other)
        return ops.scale(self, float(other))

    def __rmul__(self, other: Union[float, int]) -> "Tensor":
        from tcinn.autodiff import ops

        return ops.scale(self, float(other))

    def __neg__(self) -> "Tensor":
        from tcinn.autodiff import ops

        return ops.scale(self, -1.0)

    def __repr__(self) -> str:
        label = f", param={self.param_name!r}" if self.param_name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"


class Parameter:
    """Named, optimizer-owned value.

    ``assign`` swaps in a new array and bumps ``version`` under a lock, so any
    cache keyed on the version is invalidated together with the value.
    """

    def __init__(self, name: str, value: ArrayLike):
        self.name = name
        self._lock = threading.Lock()
        self._value = _frozen(np.array(value, dtype=_dtype))
        self.version = 0

    @property
    def value(self) -> np.ndarray:
        return self._value

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._value.shape

    def snapshot(self) -> Tuple[np.ndarray, int]:
        with self._lock:
            return self._value, self.version

    def assign(self, value: ArrayLike) -> None:
        array = np.array(value, dtype=_dtype)
        if array.shape != self._value.shape:
            raise ValidationError(
                f"Parameter {self.name!r} has shape {self._value.shape}, cannot assign {array.shape}"
            )
        with self._lock:
            self._value = _frozen(array)
            self.version += 1

    def tensor(self) -> Tensor:
        """Leaf tensor holding the current value, tagged with this parameter's name."""
        value, _ = self.snapshot()
        return Tensor.wrap(value, param_name=self.name)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"

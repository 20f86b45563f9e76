"""Dense real-valued tensors and the operations the model layers consume.

Tensors are immutable once built (the backing array is marked read-only).
There is no broadcasting: binary operations demand equal shapes and any
alignment (repeating a vector over rows, reshaping) is an explicit op.
Reductions run in a fixed ascending-index order so that two schedules that
perform the same per-cell operations produce bit-identical values.
"""

from typing import Iterable, Sequence

import numpy as np

from core.errors import (
    NumericOverflowError,
    PrecisionMismatchError,
    ShapeMismatchError,
)

DEFAULT_DTYPE = np.dtype(np.float64)
# Only gradient checking evaluates at REFERENCE_DTYPE; it equals float64 on
# platforms without an extended long double.
REFERENCE_DTYPE = np.dtype(np.longdouble)
SUPPORTED_DTYPES = (np.dtype(np.float64), np.dtype(np.float32), REFERENCE_DTYPE)


def resolve_dtype(dtype) -> np.dtype:
    resolved = np.dtype(dtype) if dtype is not None else DEFAULT_DTYPE
    if resolved not in SUPPORTED_DTYPES:
        raise PrecisionMismatchError(f"Unsupported dtype: {resolved}")
    return resolved


class Tensor:
    __slots__ = ("_data",)

    def __init__(self, data, dtype=None):
        if dtype is None and isinstance(data, np.ndarray) and data.dtype in SUPPORTED_DTYPES:
            dtype = data.dtype
        arr = np.array(data, dtype=resolve_dtype(dtype), copy=True)
        self._data = _seal(arr)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Takes ownership of a freshly computed array without copying it.
        tensor = cls.__new__(cls)
        tensor._data = _seal(arr)
        return tensor

    @classmethod
    def zeros(cls, shape, dtype=None) -> "Tensor":
        return cls._wrap(np.zeros(shape, dtype=resolve_dtype(dtype)))

    @classmethod
    def ones(cls, shape, dtype=None) -> "Tensor":
        return cls._wrap(np.ones(shape, dtype=resolve_dtype(dtype)))

    @classmethod
    def full(cls, shape, value: float, dtype=None) -> "Tensor":
        return cls._wrap(np.full(shape, value, dtype=resolve_dtype(dtype)))

    @property
    def data(self) -> np.ndarray:
        """Read-only view of the backing array."""
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def size(self) -> int:
        return int(self._data.size)

    @property
    def dtype(self) -> np.dtype:
        return self._data.dtype

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def item(self) -> float:
        if self._data.size != 1:
            raise ShapeMismatchError(f"item() needs a single element, got shape {self.shape}")
        return float(self._data.reshape(-1)[0])

    def tolist(self):
        return self._data.tolist()

    def identical(self, other: "Tensor") -> bool:
        """Bit-exact equality of shape, dtype and values."""
        return (
            self.dtype == other.dtype
            and self.shape == other.shape
            and self._data.tobytes() == other._data.tobytes()
        )

    def astype(self, dtype) -> "Tensor":
        return Tensor._wrap(self._data.astype(resolve_dtype(dtype)))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, data={self._data.tolist()})"


def _seal(arr: np.ndarray) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NumericOverflowError(f"Non-finite value in tensor of shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _same_dtype(op: str, *tensors: Tensor) -> None:
    first = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != first:
            raise PrecisionMismatchError(f"{op}: mixed precision {first} vs {t.dtype}")


def _same_shape(op: str, *tensors: Tensor) -> None:
    _same_dtype(op, *tensors)
    first = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != first:
            raise ShapeMismatchError(f"{op}: shape {first} vs {t.shape}")


# ---------------------------------------------------------------------------
# Array kernels (also used by the gradient rules in core.autodiff)
# ---------------------------------------------------------------------------


def fixed_order_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product summed over k in ascending order.

    Each output element is a[i,0]*b[0,j] + a[i,1]*b[1,j] + ... accumulated
    left to right, the same sequence of roundings a triple loop performs.
    A 1-D ``b`` is treated as a column and a 1-D result is returned.
    """
    if b.ndim == 1:
        products = a * b[np.newaxis, :]
        return np.add.accumulate(products, axis=1)[:, -1]
    products = a[:, :, np.newaxis] * b[np.newaxis, :, :]
    return np.add.accumulate(products, axis=1)[:, -1, :]


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    exp_x = np.exp(x[~positive])
    out[~positive] = exp_x / (1.0 + exp_x)
    return out


def softmax_array(x: np.ndarray) -> np.ndarray:
    shifted = x - np.max(x)
    exp = np.exp(shifted)
    return exp / np.sum(exp)


def log_softmax_array(x: np.ndarray) -> np.ndarray:
    shifted = x - np.max(x)
    return shifted - np.log(np.sum(np.exp(shifted)))


# ---------------------------------------------------------------------------
# Tensor operations
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype("matmul", a, b)
    if a.data.ndim != 2 or b.data.ndim not in (1, 2):
        raise ShapeMismatchError(f"matmul: unsupported ranks {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul: inner extents differ {a.shape} x {b.shape}")
    return Tensor._wrap(fixed_order_matmul(a.data, b.data))


_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
}
_UNARY = {
    "tanh": np.tanh,
    "sigmoid": stable_sigmoid,
    "exp": np.exp,
    "log": np.log,
    "neg": np.negative,
}


def ewise(op: str, *args: Tensor) -> Tensor:
    """Element-wise ``op`` over equally shaped operands."""
    if op in _BINARY:
        if len(args) != 2:
            raise ShapeMismatchError(f"{op} takes two operands, got {len(args)}")
        _same_shape(op, *args)
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            try:
                result = _BINARY[op](args[0].data, args[1].data)
            except FloatingPointError as exc:
                raise NumericOverflowError(f"{op}: {exc}") from exc
        return Tensor._wrap(result)
    if op in _UNARY:
        if len(args) != 1:
            raise ShapeMismatchError(f"{op} takes one operand, got {len(args)}")
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            try:
                result = _UNARY[op](args[0].data)
            except FloatingPointError as exc:
                raise NumericOverflowError(f"{op}: {exc}") from exc
        return Tensor._wrap(result)
    raise ValueError(f"Unknown element-wise op: {op}")


def add(a: Tensor, b: Tensor) -> Tensor:
    return ewise("add", a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return ewise("sub", a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return ewise("mul", a, b)


def div(a: Tensor, b: Tensor) -> Tensor:
    return ewise("div", a, b)


def tanh(x: Tensor) -> Tensor:
    return ewise("tanh", x)


def sigmoid(x: Tensor) -> Tensor:
    return ewise("sigmoid", x)


def exp(x: Tensor) -> Tensor:
    return ewise("exp", x)


def log(x: Tensor) -> Tensor:
    return ewise("log", x)


def scale(x: Tensor, factor: float) -> Tensor:
    return Tensor._wrap(x.data * x.dtype.type(factor))


def softmax(x: Tensor) -> Tensor:
    if x.data.ndim != 1 or x.size < 1:
        raise ShapeMismatchError(f"softmax expects a non-empty vector, got {x.shape}")
    return Tensor._wrap(softmax_array(x.data))


def log_softmax(x: Tensor) -> Tensor:
    if x.data.ndim != 1 or x.size < 1:
        raise ShapeMismatchError(f"log_softmax expects a non-empty vector, got {x.shape}")
    return Tensor._wrap(log_softmax_array(x.data))


def clip(x: Tensor, low: float, high: float) -> Tensor:
    return Tensor._wrap(np.clip(x.data, low, high))


def concat(tensors: Sequence[Tensor]) -> Tensor:
    _same_dtype("concat", *tensors)
    if any(t.data.ndim != 1 for t in tensors):
        raise ShapeMismatchError("concat joins vectors only")
    return Tensor._wrap(np.concatenate([t.data for t in tensors]))


def stack(rows: Sequence[Tensor]) -> Tensor:
    """Stack equally shaped vectors into a (len(rows) x n) matrix."""
    _same_shape("stack", *rows)
    return Tensor._wrap(np.stack([r.data for r in rows]))


def slice_vector(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 1 or not 0 <= start < stop <= x.shape[0]:
        raise ShapeMismatchError(f"slice [{start}:{stop}] out of range for {x.shape}")
    return Tensor._wrap(x.data[start:stop].copy())


def take(x: Tensor, index: int) -> Tensor:
    if x.data.ndim != 1 or not 0 <= index < x.shape[0]:
        raise ShapeMismatchError(f"take index {index} out of range for {x.shape}")
    return Tensor._wrap(np.array(x.data[index]))


def row(matrix: Tensor, index: int) -> Tensor:
    if matrix.data.ndim != 2 or not 0 <= index < matrix.shape[0]:
        raise ShapeMismatchError(f"row {index} out of range for {matrix.shape}")
    return Tensor._wrap(matrix.data[index].copy())


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeMismatchError(f"transpose expects a matrix, got {x.shape}")
    return Tensor._wrap(np.ascontiguousarray(x.data.T))


def reshape(x: Tensor, shape: Iterable[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeMismatchError(f"cannot reshape {x.shape} to {shape}")
    return Tensor._wrap(x.data.reshape(shape).copy())


def repeat_rows(x: Tensor, count: int) -> Tensor:
    """Explicitly tile a vector into a (count x n) matrix."""
    if x.data.ndim != 1 or count < 1:
        raise ShapeMismatchError(f"repeat_rows needs a vector and count >= 1, got {x.shape}")
    return Tensor._wrap(np.tile(x.data, (count, 1)))


def sum_all(x: Tensor) -> Tensor:
    return Tensor._wrap(np.array(np.add.accumulate(x.data.reshape(-1))[-1]))

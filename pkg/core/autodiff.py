"""Reverse-mode differentiation over a recorded tape.

A ``Tape`` appends one node per primitive call; node inputs always precede
the node, so ``backward`` just walks the node list from the end. A tape is
consumed by ``backward``: forward values are released and a second call
raises ``TapeConsumedError``.

Trainable leaves live in a ``ParamStore``. ``Tape.param(name)`` binds a
stored tensor as a leaf; ``backward`` returns a gradient for every stored
parameter (zeros when the seed does not depend on it).
"""

import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from core import tensor as T
from core.errors import (
    NonDeterministicClosureError,
    NotScalarError,
    PrecisionMismatchError,
    ShapeMismatchError,
    TapeConsumedError,
)
from core.tensor import Tensor, fixed_order_matmul

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Parameter store
# ---------------------------------------------------------------------------


class ParamStore:
    """Named trainable tensors plus matching gradient accumulators."""

    def __init__(self, dtype=None):
        self.dtype = T.resolve_dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self._grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value: Tensor) -> Tensor:
        if name in self._params:
            raise ValueError(f"Parameter already registered: {name}")
        value = value.astype(self.dtype) if value.dtype != self.dtype else value
        self._params[name] = value
        self._grads[name] = np.zeros(value.shape, dtype=self.dtype)
        return value

    def set(self, name: str, value: Tensor) -> None:
        current = self._params[name]
        if value.shape != current.shape:
            raise ShapeMismatchError(f"{name}: shape {current.shape} vs {value.shape}")
        self._params[name] = value.astype(self.dtype) if value.dtype != self.dtype else value

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def grads(self) -> dict[str, np.ndarray]:
        return self._grads

    def accumulate(self, grads: Mapping[str, np.ndarray]) -> None:
        # Store order, never the mapping's order.
        for name in self._params:
            if name in grads:
                self._grads[name] += grads[name]

    def set_grads(self, grads: Mapping[str, np.ndarray]) -> None:
        for name in self._params:
            self._grads[name] = np.array(grads[name], dtype=self.dtype)

    def zero_grads(self) -> None:
        for name in self._grads:
            self._grads[name] = np.zeros(self._params[name].shape, dtype=self.dtype)

    def num_scalars(self) -> int:
        return sum(p.size for p in self._params.values())

    def snapshot(self) -> dict[str, Tensor]:
        return dict(self._params)

    def load(self, params: Mapping[str, Tensor]) -> None:
        for name, value in params.items():
            self.set(name, value)


# ---------------------------------------------------------------------------
# Primitive registry
# ---------------------------------------------------------------------------

GradRule = Callable[..., tuple]


@dataclass(frozen=True)
class Primitive:
    name: str
    forward: Callable[..., Tensor]
    backward: GradRule


PRIMITIVES: dict[str, Primitive] = {}


def primitive(name: str, forward: Callable[..., Tensor]):
    """Register ``forward`` under ``name`` with the decorated gradient rule.

    A gradient rule receives (grad, out, *input arrays, **attrs) and returns
    one gradient array (or None) per input.
    """

    def decorator(rule: GradRule) -> GradRule:
        PRIMITIVES[name] = Primitive(name, forward, rule)
        return rule

    return decorator


@primitive("add", T.add)
def _add_grad(g, out, a, b):
    return g, g


@primitive("sub", T.sub)
def _sub_grad(g, out, a, b):
    return g, -g


@primitive("mul", T.mul)
def _mul_grad(g, out, a, b):
    return g * b, g * a


@primitive("div", T.div)
def _div_grad(g, out, a, b):
    return g / b, -g * a / (b * b)


@primitive("tanh", T.tanh)
def _tanh_grad(g, out, x):
    return (g * (1.0 - out * out),)


@primitive("sigmoid", T.sigmoid)
def _sigmoid_grad(g, out, x):
    return (g * out * (1.0 - out),)


@primitive("exp", T.exp)
def _exp_grad(g, out, x):
    return (g * out,)


@primitive("log", T.log)
def _log_grad(g, out, x):
    return (g / x,)


@primitive("scale", T.scale)
def _scale_grad(g, out, x, factor):
    return (g * x.dtype.type(factor),)


@primitive("clip", T.clip)
def _clip_grad(g, out, x, low, high):
    return (np.where((x >= low) & (x <= high), g, 0.0).astype(x.dtype),)


@primitive("matmul", T.matmul)
def _matmul_grad(g, out, a, b):
    if b.ndim == 1:
        return np.multiply.outer(g, b), fixed_order_matmul(np.ascontiguousarray(a.T), g)
    return (
        fixed_order_matmul(g, np.ascontiguousarray(b.T)),
        fixed_order_matmul(np.ascontiguousarray(a.T), g),
    )


@primitive("softmax", T.softmax)
def _softmax_grad(g, out, x):
    return (out * (g - np.dot(g, out)),)


@primitive("log_softmax", T.log_softmax)
def _log_softmax_grad(g, out, x):
    return (g - np.exp(out) * np.sum(g),)


@primitive("concat", lambda *xs: T.concat(xs))
def _concat_grad(g, out, *xs):
    bounds = np.cumsum([x.shape[0] for x in xs])[:-1]
    return tuple(np.split(g, bounds))


@primitive("stack", lambda *rows: T.stack(rows))
def _stack_grad(g, out, *rows):
    return tuple(g[k] for k in range(len(rows)))


@primitive("slice", T.slice_vector)
def _slice_grad(g, out, x, start, stop):
    full = np.zeros_like(x)
    full[start:stop] = g
    return (full,)


@primitive("take", T.take)
def _take_grad(g, out, x, index):
    full = np.zeros_like(x)
    full[index] = g
    return (full,)


@primitive("row", T.row)
def _row_grad(g, out, matrix, index):
    full = np.zeros_like(matrix)
    full[index] = g
    return (full,)


@primitive("transpose", T.transpose)
def _transpose_grad(g, out, x):
    return (np.ascontiguousarray(g.T),)


@primitive("reshape", T.reshape)
def _reshape_grad(g, out, x, shape):
    return (g.reshape(x.shape),)


@primitive("repeat_rows", T.repeat_rows)
def _repeat_rows_grad(g, out, x, count):
    return (np.add.accumulate(g, axis=0)[-1],)


@primitive("sum", T.sum_all)
def _sum_grad(g, out, x):
    return (np.full(x.shape, g, dtype=x.dtype),)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    shape: tuple[int, ...]
    value: Optional[Tensor]
    attrs: dict = field(default_factory=dict)
    param: Optional[str] = None
    requires_grad: bool = False


class Var:
    """Handle to a value recorded on a tape."""

    __slots__ = ("tape", "node_id", "value")

    def __init__(self, tape: "Tape", node_id: int, value: Tensor):
        self.tape = tape
        self.node_id = node_id
        self.value = value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def numpy(self) -> np.ndarray:
        return self.value.numpy()

    def __repr__(self) -> str:
        return f"Var(node={self.node_id}, shape={self.shape})"


class Tape:
    """Append-only record of primitive applications.

    With ``grad_enabled=False`` nothing is stored: values are computed and
    wrapped, which is what inference paths use.
    """

    def __init__(self, params: Optional[ParamStore] = None, *, grad_enabled: bool = True):
        self.params = params
        self.grad_enabled = grad_enabled
        self.dtype = params.dtype if params is not None else T.DEFAULT_DTYPE
        self.nodes: list[Node] = []
        self.consumed = False
        self._param_vars: dict[str, Var] = {}
        self._constants: dict[tuple, Var] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, node: Node) -> int:
        if self.consumed:
            raise TapeConsumedError("Tape already consumed by backward()")
        with self._lock:
            self.nodes.append(node)
            return len(self.nodes) - 1

    def constant(self, value) -> Var:
        if not isinstance(value, Tensor):
            value = Tensor(value, dtype=self.dtype)
        if not self.grad_enabled:
            return Var(self, -1, value)
        node_id = self._append(Node("constant", (), value.shape, value))
        return Var(self, node_id, value)

    def zeros(self, shape) -> Var:
        return self._cached_constant(("zeros", tuple(shape)), lambda: Tensor.zeros(shape, self.dtype))

    def ones(self, shape) -> Var:
        return self._cached_constant(("ones", tuple(shape)), lambda: Tensor.ones(shape, self.dtype))

    def _cached_constant(self, key, build) -> Var:
        with self._lock:
            cached = self._constants.get(key)
        if cached is not None:
            return cached
        var = self.constant(build())
        with self._lock:
            return self._constants.setdefault(key, var)

    def param(self, name: str) -> Var:
        if self.params is None:
            raise KeyError(f"Tape has no parameter store; cannot bind {name}")
        with self._lock:
            cached = self._param_vars.get(name)
        if cached is not None:
            return cached
        value = self.params[name]
        if self.grad_enabled:
            node_id = self._append(
                Node("param", (), value.shape, value, param=name, requires_grad=True)
            )
        else:
            node_id = -1
        var = Var(self, node_id, value)
        with self._lock:
            return self._param_vars.setdefault(name, var)

    def record(self, op: str, inputs: Sequence[Var], **attrs) -> Var:
        """Apply primitive ``op`` to ``inputs`` and append the node."""
        prim = PRIMITIVES[op]
        for var in inputs:
            if var.tape is not self:
                raise ValueError(f"{op}: input recorded on a different tape")
        value = prim.forward(*(var.value for var in inputs), **attrs)
        if not self.grad_enabled:
            return Var(self, -1, value)
        requires_grad = any(self.nodes[var.node_id].requires_grad for var in inputs)
        node = Node(
            op,
            tuple(var.node_id for var in inputs),
            value.shape,
            value,
            attrs=attrs,
            requires_grad=requires_grad,
        )
        return Var(self, self._append(node), value)

    def backward(self, seed: Var) -> dict[str, np.ndarray]:
        """Gradients of the scalar ``seed`` w.r.t. every stored parameter."""
        if self.consumed:
            raise TapeConsumedError("backward() already ran on this tape")
        if not self.grad_enabled:
            raise TapeConsumedError("Tape was recorded with grad_enabled=False")
        if seed.tape is not self:
            raise ValueError("Seed was recorded on a different tape")
        if seed.value.size != 1:
            raise NotScalarError(f"Seed must be scalar, got shape {seed.shape}")

        grads: list[Optional[np.ndarray]] = [None] * len(self.nodes)
        grads[seed.node_id] = np.ones(seed.shape, dtype=self.dtype)

        for node_id in range(seed.node_id, -1, -1):
            node = self.nodes[node_id]
            g = grads[node_id]
            if g is None or not node.requires_grad or not node.inputs:
                continue
            prim = PRIMITIVES[node.op]
            input_values = [self.nodes[i].value.data for i in node.inputs]
            input_grads = prim.backward(g, node.value.data, *input_values, **node.attrs)
            for input_id, input_grad in zip(node.inputs, input_grads):
                if input_grad is None or not self.nodes[input_id].requires_grad:
                    continue
                if grads[input_id] is None:
                    grads[input_id] = np.array(input_grad, dtype=self.dtype)
                else:
                    grads[input_id] += input_grad

        result: dict[str, np.ndarray] = {}
        if self.params is not None:
            for name in self.params.names():
                var = self._param_vars.get(name)
                grad = grads[var.node_id] if var is not None else None
                if grad is None:
                    grad = np.zeros(self.params[name].shape, dtype=self.dtype)
                result[name] = grad

        for node in self.nodes:
            node.value = None
        self.consumed = True
        return result


def backward(tape: Tape, seed: Var, store: Optional[ParamStore] = None) -> dict[str, np.ndarray]:
    """Run ``tape.backward`` and add the result to ``store``'s accumulators."""
    grads = tape.backward(seed)
    target = store if store is not None else tape.params
    if target is not None:
        target.accumulate(grads)
    return grads


# ---------------------------------------------------------------------------
# Functional helpers over Vars
# ---------------------------------------------------------------------------


def add(a: Var, b: Var) -> Var:
    return a.tape.record("add", [a, b])


def sub(a: Var, b: Var) -> Var:
    return a.tape.record("sub", [a, b])


def mul(a: Var, b: Var) -> Var:
    return a.tape.record("mul", [a, b])


def div(a: Var, b: Var) -> Var:
    return a.tape.record("div", [a, b])


def matmul(a: Var, b: Var) -> Var:
    return a.tape.record("matmul", [a, b])


def tanh(x: Var) -> Var:
    return x.tape.record("tanh", [x])


def sigmoid(x: Var) -> Var:
    return x.tape.record("sigmoid", [x])


def exp(x: Var) -> Var:
    return x.tape.record("exp", [x])


def log(x: Var) -> Var:
    return x.tape.record("log", [x])


def scale(x: Var, factor: float) -> Var:
    return x.tape.record("scale", [x], factor=factor)


def clip(x: Var, low: float, high: float) -> Var:
    return x.tape.record("clip", [x], low=low, high=high)


def softmax(x: Var) -> Var:
    return x.tape.record("softmax", [x])


def log_softmax(x: Var) -> Var:
    return x.tape.record("log_softmax", [x])


def concat(xs: Sequence[Var]) -> Var:
    return xs[0].tape.record("concat", list(xs))


def stack(rows: Sequence[Var]) -> Var:
    return rows[0].tape.record("stack", list(rows))


def slice_vector(x: Var, start: int, stop: int) -> Var:
    return x.tape.record("slice", [x], start=start, stop=stop)


def take(x: Var, index: int) -> Var:
    return x.tape.record("take", [x], index=int(index))


def row(matrix: Var, index: int) -> Var:
    return matrix.tape.record("row", [matrix], index=int(index))


def transpose(x: Var) -> Var:
    return x.tape.record("transpose", [x])


def reshape(x: Var, shape: Sequence[int]) -> Var:
    return x.tape.record("reshape", [x], shape=tuple(shape))


def repeat_rows(x: Var, count: int) -> Var:
    return x.tape.record("repeat_rows", [x], count=int(count))


def sum_all(x: Var) -> Var:
    return x.tape.record("sum", [x])


def one_minus(x: Var) -> Var:
    return sub(x.tape.ones(x.shape), x)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


class ParamCheck(BaseModel):
    name: str
    size: int
    max_rel_error: float
    passed: bool
    refined: int = 0


class GradCheckReport(BaseModel):
    epsilon: float
    tolerance: float
    loss: float
    entries: list[ParamCheck]
    passed: bool

    @property
    def worst(self) -> Optional[ParamCheck]:
        return max(self.entries, key=lambda e: e.max_rel_error, default=None)


RELATIVE_ERROR_FLOOR = 1e-8

# Entries whose double-precision central difference misses the tolerance are
# re-measured with a six-point stencil evaluated in extended precision.
REFERENCE_STEP = 2e-3
_STENCIL = ((1, 45.0), (2, -9.0), (3, 1.0))
_STENCIL_DENOMINATOR = 60.0


def relative_error(ad: float, fd: float) -> float:
    return abs(ad - fd) / max(abs(ad), abs(fd), RELATIVE_ERROR_FLOOR)


def reference_derivative(
    model_closure: Callable[[Tape], Var],
    params: ParamStore,
    name: str,
    index: tuple,
    step: float = REFERENCE_STEP,
) -> Optional[float]:
    """d loss / d params[name][index] from a sixth-order stencil in extended precision.

    Returns None when the closure cannot run at ``T.REFERENCE_DTYPE`` (it pins
    constants of its own precision).
    """
    reference = ParamStore(T.REFERENCE_DTYPE)
    for other, value in params.items():
        reference.add(other, value.astype(T.REFERENCE_DTYPE))
    base = reference[name].numpy()
    h = base.dtype.type(step)

    def shifted(offset: int):
        perturbed = base.copy()
        perturbed[index] = base[index] + offset * h
        reference.set(name, Tensor(perturbed))
        loss = model_closure(Tape(reference, grad_enabled=False)).value
        return loss.data.reshape(-1)[0]

    try:
        total = base.dtype.type(0)
        for offset, weight in _STENCIL:
            total += base.dtype.type(weight) * (shifted(offset) - shifted(-offset))
    except PrecisionMismatchError:
        logger.debug("[GRADCHECK] %s%s has no extended-precision reference", name, index)
        return None
    return float(total / (base.dtype.type(_STENCIL_DENOMINATOR) * h))


def grad_check(
    model_closure: Callable[[Tape], Var],
    params: ParamStore,
    epsilon: float = 1e-5,
    tolerance: float = 1e-6,
    names: Optional[Sequence[str]] = None,
) -> GradCheckReport:
    """Compare tape gradients with central finite differences.

    ``model_closure`` records a scalar loss on the tape it is given. It is
    evaluated twice at the unperturbed parameters; any difference means the
    closure is not deterministic and the check is aborted. An entry whose
    central difference at ``epsilon`` misses ``tolerance`` is compared
    against ``reference_derivative`` instead.
    """
    tape = Tape(params)
    loss = model_closure(tape)
    base_value = loss.value.item()
    analytic = tape.backward(loss)

    def evaluate() -> float:
        return model_closure(Tape(params, grad_enabled=False)).value.item()

    if evaluate() != base_value:
        raise NonDeterministicClosureError(
            "Closure produced different losses for identical parameters"
        )

    entries: list[ParamCheck] = []
    for name in names if names is not None else params.names():
        original = params[name]
        base = original.numpy()
        worst = 0.0
        refined = 0
        for index in np.ndindex(base.shape):
            perturbed = base.copy()
            perturbed[index] = base[index] + epsilon
            params.set(name, Tensor(perturbed))
            f_plus = evaluate()
            perturbed[index] = base[index] - epsilon
            params.set(name, Tensor(perturbed))
            f_minus = evaluate()
            params.set(name, original)
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            error = relative_error(float(analytic[name][index]), numeric)
            if error >= tolerance:
                reference = reference_derivative(model_closure, params, name, index)
                if reference is not None:
                    refined += 1
                    error = relative_error(float(analytic[name][index]), reference)
            worst = max(worst, error)
        entries.append(
            ParamCheck(
                name=name,
                size=original.size,
                max_rel_error=worst,
                passed=worst < tolerance,
                refined=refined,
            )
        )
        logger.debug("[GRADCHECK] %s max rel err %.3e (%d refined)", name, worst, refined)

    return GradCheckReport(
        epsilon=epsilon,
        tolerance=tolerance,
        loss=base_value,
        entries=entries,
        passed=all(e.passed for e in entries),
    )

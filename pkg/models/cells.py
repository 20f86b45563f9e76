"""Single-step LSTM and lambda-gated 2DLSTM cells over tape variables.

Gate pre-activations are one fused projection split into blocks. Block
order is fixed:

    LSTM:    0 input, 1 forget, 2 output, 3 candidate
    2DLSTM:  0 input, 1 forget, 2 output, 3 candidate, 4 lambda
"""

from dataclasses import dataclass

import numpy as np

from core import autodiff as ad
from core.autodiff import ParamStore, Tape, Var
from core.errors import ShapeMismatchError
from core.tensor import Tensor

LSTM_GATES = 4
TWOD_GATES = 5
FORGET_BIAS = 1.0


def uniform_init(rng: np.random.Generator, shape, n: int, dtype) -> Tensor:
    """Uniform in [-sqrt(1/n), sqrt(1/n)]."""
    bound = float(np.sqrt(1.0 / n))
    return Tensor(rng.uniform(-bound, bound, size=shape), dtype=dtype)


def gate_bias(n: int, gates: int, dtype) -> Tensor:
    bias = np.zeros(gates * n)
    bias[n : 2 * n] = FORGET_BIAS
    return Tensor(bias, dtype=dtype)


@dataclass
class CellState:
    c: Var
    s: Var

    @classmethod
    def zeros(cls, tape: Tape, n: int) -> "CellState":
        zero = tape.zeros((n,))
        return cls(c=zero, s=zero)


@dataclass
class LSTMParams:
    W: Var  # (4n, d)
    U: Var  # (4n, n)
    b: Var  # (4n,)
    n: int
    d: int

    @staticmethod
    def register(store: ParamStore, prefix: str, n: int, d: int, rng: np.random.Generator) -> None:
        store.add(f"{prefix}.W", uniform_init(rng, (LSTM_GATES * n, d), n, store.dtype))
        store.add(f"{prefix}.U", uniform_init(rng, (LSTM_GATES * n, n), n, store.dtype))
        store.add(f"{prefix}.b", gate_bias(n, LSTM_GATES, store.dtype))

    @classmethod
    def bind(cls, tape: Tape, prefix: str) -> "LSTMParams":
        W = tape.param(f"{prefix}.W")
        n = W.shape[0] // LSTM_GATES
        return cls(W=W, U=tape.param(f"{prefix}.U"), b=tape.param(f"{prefix}.b"), n=n, d=W.shape[1])


@dataclass
class TwoDLSTMParams:
    W: Var  # (5n, d)  input path W_1..W_5
    U: Var  # (5n, n)  horizontal path U_1..U_5, applied to s[j-1, i]
    V: Var  # (5n, n)  vertical path V_1..V_5, applied to s[j, i-1]
    b: Var  # (5n,)
    n: int
    d: int

    @staticmethod
    def register(store: ParamStore, prefix: str, n: int, d: int, rng: np.random.Generator) -> None:
        store.add(f"{prefix}.W", uniform_init(rng, (TWOD_GATES * n, d), n, store.dtype))
        store.add(f"{prefix}.U", uniform_init(rng, (TWOD_GATES * n, n), n, store.dtype))
        store.add(f"{prefix}.V", uniform_init(rng, (TWOD_GATES * n, n), n, store.dtype))
        store.add(f"{prefix}.b", gate_bias(n, TWOD_GATES, store.dtype))

    @classmethod
    def bind(cls, tape: Tape, prefix: str) -> "TwoDLSTMParams":
        W = tape.param(f"{prefix}.W")
        n = W.shape[0] // TWOD_GATES
        return cls(
            W=W,
            U=tape.param(f"{prefix}.U"),
            V=tape.param(f"{prefix}.V"),
            b=tape.param(f"{prefix}.b"),
            n=n,
            d=W.shape[1],
        )

    @property
    def tape(self) -> Tape:
        return self.W.tape


def _gate(pre: Var, k: int, n: int) -> Var:
    return ad.slice_vector(pre, k * n, (k + 1) * n)


def _check(x: Var, d: int, states: tuple[CellState, ...], n: int) -> None:
    if x.shape != (d,):
        raise ShapeMismatchError(f"cell input shape {x.shape}, expected ({d},)")
    for state in states:
        if state.c.shape != (n,) or state.s.shape != (n,):
            raise ShapeMismatchError(f"cell state shape {state.c.shape}, expected ({n},)")


def lstm_step(params: LSTMParams, x: Var, prev: CellState) -> CellState:
    n = params.n
    _check(x, params.d, (prev,), n)
    pre = ad.add(ad.add(ad.matmul(params.W, x), ad.matmul(params.U, prev.s)), params.b)
    i = ad.sigmoid(_gate(pre, 0, n))
    f = ad.sigmoid(_gate(pre, 1, n))
    o = ad.sigmoid(_gate(pre, 2, n))
    candidate = ad.tanh(_gate(pre, 3, n))
    c = ad.add(ad.mul(f, prev.c), ad.mul(i, candidate))
    s = ad.mul(ad.tanh(c), o)
    return CellState(c=c, s=s)


def twodlstm_step(
    params: TwoDLSTMParams, x: Var, horiz: CellState, vert: CellState
) -> CellState:
    """One 2DLSTM cell at (j, i).

    ``horiz`` is the state at (j-1, i), ``vert`` the state at (j, i-1).
    The recurrent terms are summed first (U s_h + V s_v) so swapping the two
    predecessors together with U and V yields the same pre-activations.
    """
    n = params.n
    _check(x, params.d, (horiz, vert), n)
    recurrent = ad.add(ad.matmul(params.U, horiz.s), ad.matmul(params.V, vert.s))
    pre = ad.add(ad.add(recurrent, ad.matmul(params.W, x)), params.b)
    i = ad.sigmoid(_gate(pre, 0, n))
    f = ad.sigmoid(_gate(pre, 1, n))
    o = ad.sigmoid(_gate(pre, 2, n))
    candidate = ad.tanh(_gate(pre, 3, n))
    lam = ad.sigmoid(_gate(pre, 4, n))
    blend = ad.add(ad.mul(lam, horiz.c), ad.mul(ad.one_minus(lam), vert.c))
    c = ad.add(ad.mul(f, blend), ad.mul(candidate, i))
    s = ad.mul(ad.tanh(c), o)
    return CellState(c=c, s=s)

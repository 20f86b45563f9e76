"""
Tape recording and reverse-mode gradients: elementary rules, the
consumed-tape contract, accumulation order and finite-difference checks.
"""

import numpy as np
import pytest

from core import autodiff as ad
from core.autodiff import (
    RELATIVE_ERROR_FLOOR,
    ParamStore,
    Tape,
    backward,
    grad_check,
    reference_derivative,
    relative_error,
)
from core.errors import NonDeterministicClosureError, NotScalarError, TapeConsumedError
from core.tensor import Tensor
from models.cells import CellState, LSTMParams, TwoDLSTMParams, lstm_step, twodlstm_step


def store_with(**values) -> ParamStore:
    store = ParamStore("float64")
    for name, value in values.items():
        store.add(name, Tensor(value))
    return store


def test_add_passes_gradient_through():
    store = store_with(a=[1.5], b=[-2.0])
    tape = Tape(store)
    grads = tape.backward(ad.sum_all(ad.add(tape.param("a"), tape.param("b"))))
    assert grads["a"].tolist() == [1.0]
    assert grads["b"].tolist() == [1.0]


def test_square_gradient_is_twice_the_value():
    store = store_with(a=[0.5, -3.0])
    tape = Tape(store)
    a = tape.param("a")
    grads = tape.backward(ad.sum_all(ad.mul(a, a)))
    assert grads["a"].tolist() == [1.0, -6.0]


def test_disconnected_parameter_gets_zero_gradient():
    store = store_with(p=[1.0, 2.0], q=[3.0])
    tape = Tape(store)
    grads = tape.backward(ad.sum_all(tape.param("q")))
    assert grads["p"].tolist() == [0.0, 0.0]


def test_sum_gives_all_ones():
    store = store_with(p=np.arange(6.0).reshape(2, 3))
    tape = Tape(store)
    grads = tape.backward(ad.sum_all(tape.param("p")))
    assert np.array_equal(grads["p"], np.ones((2, 3)))


def test_linear_model_gradient_is_exact(rng):
    W = rng.standard_normal((3, 4))
    x = rng.standard_normal(4)
    v = rng.standard_normal(3)
    store = store_with(W=W)
    tape = Tape(store)
    y = ad.matmul(tape.param("W"), tape.constant(x))
    grads = tape.backward(ad.sum_all(ad.mul(y, tape.constant(v))))
    assert np.array_equal(grads["W"], np.multiply.outer(v, x))


def test_seed_must_be_scalar():
    store = store_with(p=[1.0, 2.0])
    tape = Tape(store)
    with pytest.raises(NotScalarError):
        tape.backward(ad.tanh(tape.param("p")))


def test_backward_consumes_the_tape():
    store = store_with(p=[1.0])
    tape = Tape(store)
    loss = ad.sum_all(ad.tanh(tape.param("p")))
    tape.backward(loss)
    assert all(node.value is None for node in tape.nodes)
    with pytest.raises(TapeConsumedError):
        tape.backward(loss)
    with pytest.raises(TapeConsumedError):
        ad.tanh(loss)


def test_no_grad_tape_records_nothing():
    store = store_with(p=[1.0, 2.0])
    tape = Tape(store, grad_enabled=False)
    out = ad.sum_all(ad.tanh(tape.param("p")))
    assert len(tape) == 0
    assert out.value.item() == pytest.approx(np.tanh(1.0) + np.tanh(2.0))
    with pytest.raises(TapeConsumedError):
        tape.backward(out)


def test_batch_accumulation_equals_ordered_sum(rng):
    store = store_with(W=rng.standard_normal((2, 3)))
    inputs = [rng.standard_normal(3) for _ in range(5)]
    per_example = []
    for x in inputs:
        tape = Tape(store)
        loss = ad.sum_all(ad.tanh(ad.matmul(tape.param("W"), tape.constant(x))))
        per_example.append(backward(tape, loss, store)["W"])
    expected = np.zeros((2, 3))
    for g in per_example:
        expected += g
    assert np.array_equal(store.grad("W"), expected)
    store.zero_grads()
    assert not store.grad("W").any()


def test_five_node_graph_matches_finite_differences(rng):
    store = store_with(a=rng.uniform(-2, 2, 3), b=rng.uniform(-2, 2, 3))

    def closure(tape: Tape):
        a, b = tape.param("a"), tape.param("b")
        h = ad.tanh(ad.mul(a, b))
        z = ad.sub(ad.sigmoid(ad.add(h, b)), ad.scale(a, 0.5))
        return ad.sum_all(ad.mul(z, z))

    report = grad_check(closure, store, epsilon=1e-5, tolerance=1e-6)
    assert report.passed, report.worst


PRIMITIVE_CASES = {
    "add": lambda t, x, y: ad.add(x, y),
    "sub": lambda t, x, y: ad.sub(x, y),
    "mul": lambda t, x, y: ad.mul(x, y),
    "div": lambda t, x, y: ad.div(x, ad.add(ad.mul(y, y), t.ones(y.shape))),
    "tanh": lambda t, x, y: ad.tanh(x),
    "sigmoid": lambda t, x, y: ad.sigmoid(x),
    "exp": lambda t, x, y: ad.exp(x),
    "log": lambda t, x, y: ad.log(ad.add(ad.mul(x, x), t.ones(x.shape))),
    "scale": lambda t, x, y: ad.scale(x, -1.75),
    "clip": lambda t, x, y: ad.clip(x, -5.0, 5.0),
    "matmul": lambda t, x, y: ad.matmul(ad.reshape(x, (2, 2)), ad.slice_vector(y, 0, 2)),
    "softmax": lambda t, x, y: ad.softmax(x),
    "log_softmax": lambda t, x, y: ad.log_softmax(x),
    "concat": lambda t, x, y: ad.concat([x, y]),
    "stack": lambda t, x, y: ad.stack([x, y]),
    "slice": lambda t, x, y: ad.slice_vector(x, 1, 3),
    "take": lambda t, x, y: ad.take(x, 2),
    "row": lambda t, x, y: ad.row(ad.stack([x, y]), 1),
    "transpose": lambda t, x, y: ad.transpose(ad.reshape(x, (2, 2))),
    "repeat_rows": lambda t, x, y: ad.repeat_rows(x, 3),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_gradient_matches_finite_differences(name):
    rng = np.random.default_rng(sorted(PRIMITIVE_CASES).index(name))
    store = store_with(x=rng.uniform(-2, 2, 4), y=rng.uniform(-2, 2, 4))
    weights = rng.uniform(-1, 1, 32)

    def closure(tape: Tape):
        out = PRIMITIVE_CASES[name](tape, tape.param("x"), tape.param("y"))
        flat = ad.reshape(out, (out.value.size,))
        # a random linear read-out makes every output element matter
        return ad.sum_all(ad.mul(flat, tape.constant(weights[: out.value.size])))

    report = grad_check(closure, store, epsilon=1e-5, tolerance=1e-6)
    assert report.passed, report.worst


def test_clip_passes_no_gradient_outside_the_bound():
    store = store_with(z=[-20.0, -3.0, 0.5, 16.0])
    tape = Tape(store)
    grads = tape.backward(ad.sum_all(ad.clip(tape.param("z"), -15.0, 15.0)))
    assert grads["z"].tolist() == [0.0, 1.0, 1.0, 0.0]


def test_non_deterministic_closure_is_detected():
    store = store_with(p=[1.0])
    calls = iter(range(100))

    def closure(tape: Tape):
        return ad.sum_all(ad.scale(tape.param("p"), float(next(calls))))

    with pytest.raises(NonDeterministicClosureError):
        grad_check(closure, store)


def test_relative_error_is_symmetric_and_floored():
    assert relative_error(1.0, 1.0) == 0.0
    assert relative_error(2.0, 1.0) == relative_error(1.0, 2.0) == 0.5
    assert relative_error(0.0, 0.0) == 0.0


def test_relative_error_floor_is_1e_8():
    assert RELATIVE_ERROR_FLOOR == 1e-8
    assert relative_error(2e-8, 0.0) == 1.0
    assert relative_error(1e-9, 0.0) == pytest.approx(0.1)


EXTENDED = np.finfo(np.longdouble).eps < np.finfo(np.float64).eps


def tiny_slope_on_a_large_loss(tape: Tape):
    # d/dp = 1e-7 * (1 - tanh(p)^2), buried under a loss near 7389
    big = ad.scale(ad.exp(tape.param("q")), 1000.0)
    small = ad.scale(ad.tanh(tape.param("p")), 1e-7)
    return ad.sum_all(ad.add(big, small))


@pytest.mark.skipif(not EXTENDED, reason="long double is plain float64 here")
def test_reference_derivative_resolves_a_slope_below_double_round_off():
    store = store_with(p=[0.3], q=[2.0])
    exact = 1e-7 * (1.0 - np.tanh(0.3) ** 2)
    assert reference_derivative(tiny_slope_on_a_large_loss, store, "p", (0,)) == pytest.approx(
        exact, abs=1e-12
    )
    assert store["p"].tolist() == [0.3]
    assert store["p"].dtype == np.float64


@pytest.mark.skipif(not EXTENDED, reason="long double is plain float64 here")
def test_grad_check_passes_at_the_1e_8_floor_with_a_noisy_central_difference():
    store = store_with(p=[0.3], q=[2.0])
    report = grad_check(tiny_slope_on_a_large_loss, store, epsilon=1e-5, tolerance=1e-4)
    assert report.passed, report.worst
    assert store["p"].tolist() == [0.3]


def test_reference_derivative_gives_up_on_closures_with_pinned_precision():
    store = store_with(p=[0.5])

    def closure(tape: Tape):
        return ad.sum_all(ad.add(tape.param("p"), tape.constant(Tensor([1.0]))))

    assert reference_derivative(closure, store, "p", (0,)) is None
    assert grad_check(closure, store).passed


def test_lstm_step_gradients(rng):
    store = ParamStore("float64")
    LSTMParams.register(store, "cell", 3, 2, rng)
    x = rng.uniform(-2, 2, 2)
    s0, c0 = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)

    def closure(tape: Tape):
        prev = CellState(c=tape.constant(c0), s=tape.constant(s0))
        state = lstm_step(LSTMParams.bind(tape, "cell"), tape.constant(x), prev)
        return ad.sum_all(ad.add(state.s, ad.scale(state.c, 0.3)))

    report = grad_check(closure, store, epsilon=1e-5, tolerance=1e-6)
    assert report.passed, report.worst


def test_twodlstm_step_gradients(rng):
    store = ParamStore("float64")
    TwoDLSTMParams.register(store, "grid", 3, 2, rng)
    x = rng.uniform(-2, 2, 2)
    states = [rng.uniform(-1, 1, 3) for _ in range(4)]

    def closure(tape: Tape):
        horiz = CellState(c=tape.constant(states[0]), s=tape.constant(states[1]))
        vert = CellState(c=tape.constant(states[2]), s=tape.constant(states[3]))
        state = twodlstm_step(TwoDLSTMParams.bind(tape, "grid"), tape.constant(x), horiz, vert)
        return ad.sum_all(ad.add(state.s, ad.scale(state.c, 0.3)))

    report = grad_check(closure, store, epsilon=1e-5, tolerance=1e-6)
    assert report.passed, report.worst

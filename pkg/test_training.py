"""
Training pieces: Adam, global-norm clipping, checkpoint averaging, data
preparation and a complete (tiny) training run.
"""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from core.autodiff import ParamStore
from core.config import build_config
from core.errors import ConfigError, DataError, NumericError, ShapeMismatchError
from core.tensor import Tensor
from services.trainer import (
    AdamState,
    MetricRecord,
    adam_step,
    average_checkpoints,
    clip_global_norm,
    global_norm,
    prepare_data,
    train_loop,
)
from utils.corpus import ParallelCorpus
from utils.storage import Checkpoint, load_checkpoint


def params_with(**values) -> ParamStore:
    store = ParamStore("float64")
    for name, value in values.items():
        store.add(name, Tensor(value))
    return store


# Adam


def test_zero_gradient_leaves_parameters_unchanged():
    params = params_with(w=[1.0, -2.0])
    adam_step(AdamState.init(params, lr=0.1), params, {"w": np.zeros(2)})
    assert params["w"].tolist() == [1.0, -2.0]


def test_first_adam_step_moves_by_lr_times_sign():
    params = params_with(w=[1.0, -2.0, 0.5])
    g = np.array([0.3, -4.0, 1e-3])
    adam_step(AdamState.init(params, lr=0.01), params, {"w": g})
    expected = np.array([1.0, -2.0, 0.5]) - 0.01 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(params["w"].data, expected, rtol=1e-12)


def test_zero_learning_rate_is_the_identity(rng):
    start = rng.standard_normal((3, 2))
    params = params_with(w=start)
    state = AdamState.init(params, lr=0.0)
    for _ in range(3):
        adam_step(state, params, {"w": rng.standard_normal((3, 2))})
    assert np.array_equal(params["w"].data, start)
    assert state.t == 3


def test_identical_gradients_give_identical_updates(rng):
    start = rng.standard_normal(4)
    params = params_with(a=start, b=start)
    state = AdamState.init(params, lr=0.05)
    for _ in range(4):
        g = rng.standard_normal(4)
        adam_step(state, params, {"a": g, "b": g.copy()})
    assert params["a"].identical(params["b"])


def test_non_finite_gradient_aborts_the_step():
    params = params_with(w=[1.0], u=[2.0])
    state = AdamState.init(params, lr=0.1)
    with pytest.raises(NumericError, match="w"):
        adam_step(state, params, {"w": np.array([np.nan]), "u": np.array([1.0])})
    assert params["u"].tolist() == [2.0]
    assert state.t == 0


# clipping


def test_gradients_under_the_threshold_are_untouched():
    grads = {"a": np.array([0.3, 0.4])}
    assert clip_global_norm(grads, 1.0) is grads


def test_gradients_over_the_threshold_are_rescaled():
    clipped = clip_global_norm({"a": np.array([3.0]), "b": np.array([4.0])}, 1.0)
    assert clipped["a"].tolist() == pytest.approx([0.6])
    assert clipped["b"].tolist() == pytest.approx([0.8])


@settings(max_examples=100, deadline=None)
@given(
    arrays(np.float64, 5, elements=st.floats(-1e6, 1e6)),
    arrays(np.float64, (2, 3), elements=st.floats(-1e6, 1e6)),
)
def test_clipped_norm_never_exceeds_the_threshold(a, b):
    assert global_norm(clip_global_norm({"a": a, "b": b}, 1.0)) <= 1.0 + 1e-12


# averaging


def ckpt(step: int, config_hash: str = "h", **values) -> Checkpoint:
    return Checkpoint(params={k: Tensor(v) for k, v in values.items()}, step=step, config_hash=config_hash)


def test_averaging_one_checkpoint_is_the_identity(rng):
    w = rng.standard_normal((2, 2))
    averaged = average_checkpoints([ckpt(7, w=w)])
    assert np.array_equal(averaged.params["w"].data, w)
    assert averaged.step == 7
    assert averaged.dev_ppl is None


def test_average_of_zero_and_two_is_one():
    averaged = average_checkpoints([ckpt(1, w=[0.0]), ckpt(2, w=[2.0])])
    assert averaged.params["w"].tolist() == [1.0]
    assert averaged.step == 2


def test_average_is_the_ordered_sum_over_k_bit_for_bit(rng):
    values = [rng.standard_normal(6) for _ in range(4)]
    averaged = average_checkpoints([ckpt(k, w=v) for k, v in enumerate(values)])
    for e in range(6):
        total = values[0][e]
        for v in values[1:]:
            total = total + v[e]
        assert averaged.params["w"].data[e] == total / len(values)


def test_averaging_rejects_mismatches():
    with pytest.raises(DataError):
        average_checkpoints([])
    with pytest.raises(ConfigError):
        average_checkpoints([ckpt(1, "h1", w=[0.0]), ckpt(2, "h2", w=[1.0])])
    with pytest.raises(ShapeMismatchError):
        average_checkpoints([ckpt(1, w=[0.0]), ckpt(2, w=[1.0, 2.0])])
    with pytest.raises(ShapeMismatchError):
        average_checkpoints([ckpt(1, w=[0.0]), ckpt(2, u=[0.0])])


# data


def test_length_filter_checks_both_sides():
    corpus = ParallelCorpus(
        [(["a"] * 3, ["b"] * 3), (["a"] * 4, ["b"] * 2), (["a"] * 2, ["b"] * 5), (["a"], ["b"])]
    )
    kept = corpus.filter_by_length(3)
    assert [(len(s), len(t)) for s, t in kept] == [(3, 3), (1, 1)]


def test_empty_training_corpus_is_a_data_error(tmp_path):
    for name in ("train.src", "train.tgt"):
        (tmp_path / name).write_text("", encoding="utf-8")
    for name in ("dev.src", "dev.tgt"):
        (tmp_path / name).write_text("a b\n", encoding="utf-8")
    config = build_config(
        {
            "train_src": tmp_path / "train.src",
            "train_tgt": tmp_path / "train.tgt",
            "dev_src": tmp_path / "dev.src",
            "dev_tgt": tmp_path / "dev.tgt",
        }
    )
    with pytest.raises(DataError):
        prepare_data(config)


def test_missing_corpus_file_is_a_data_error(tmp_path):
    config = build_config(
        {
            "train_src": tmp_path / "nope.src",
            "train_tgt": tmp_path / "nope.tgt",
            "dev_src": tmp_path / "nope.src",
            "dev_tgt": tmp_path / "nope.tgt",
        }
    )
    with pytest.raises(DataError, match="nope.src"):
        prepare_data(config)


def test_task_data_is_encoded_with_eos():
    config = build_config({"task": "reverse", "task_train_size": 5, "task_dev_size": 2})
    data = prepare_data(config)
    assert len(data.train) == 5 and len(data.dev) == 2
    for src, tgt in data.train:
        assert tgt[-1] == 2
        assert tgt[:-1] == src[::-1]


# a whole run


def tiny_run_config(**overrides):
    values = {
        "variant": "2d-seq2seq",
        "task": "copy",
        "hidden_size": 4,
        "embed_dim": 3,
        "task_vocab_size": 4,
        "task_min_length": 2,
        "task_max_length": 3,
        "task_train_size": 8,
        "task_dev_size": 3,
        "batch_size": 4,
        "shuffle_window": 2,
        "epochs": 2,
        "keep_best": 2,
        "lr": 0.01,
    }
    values.update(overrides)
    return build_config(values)


def read_metrics(path):
    return [MetricRecord(**json.loads(line)) for line in path.read_text().splitlines()]


def test_training_run_writes_a_complete_run_directory(tmp_path):
    config = tiny_run_config()
    result = train_loop(config, prepare_data(config), tmp_path)
    for name in ("run.conf", "src.vocab", "tgt.vocab", "metrics.jsonl", "avg.ckpt"):
        assert (tmp_path / name).exists()
    # 8 pairs in batches of 4: two batches per epoch, dev ppl after each half epoch
    assert [m.step for m in result.metrics] == [1, 2, 3, 4]
    assert read_metrics(tmp_path / "metrics.jsonl") == result.metrics
    assert all(m.wall_time is None for m in result.metrics)
    kept = sorted(tmp_path.glob("step-*.ckpt"))
    assert len(kept) == 2
    assert {p for _, _, p in result.best} == set(kept)
    ppls = [ppl for ppl, _, _ in result.best]
    assert ppls == sorted(ppls)
    assert ppls[0] == min(m.dev_ppl for m in result.metrics)
    average = load_checkpoint(tmp_path / "avg.ckpt")
    expected = average_checkpoints([load_checkpoint(p) for _, _, p in result.best])
    for name, value in expected.params.items():
        assert average.params[name].identical(value)


def test_training_is_reproducible(tmp_path):
    config = tiny_run_config(dropout=0.3)
    first = train_loop(config, prepare_data(config), tmp_path / "a")
    second = train_loop(config, prepare_data(config), tmp_path / "b")
    assert first.metrics == second.metrics
    assert (tmp_path / "a" / "avg.ckpt").read_bytes() == (tmp_path / "b" / "avg.ckpt").read_bytes()


def test_worker_count_does_not_change_the_run(tmp_path):
    serial = tiny_run_config(workers=1)
    threaded = tiny_run_config(workers=3)
    a = train_loop(serial, prepare_data(serial), tmp_path / "a")
    b = train_loop(threaded, prepare_data(threaded), tmp_path / "b")
    assert a.metrics == b.metrics
    for name, value in a.params.items():
        assert b.params[name].identical(value)


def test_wall_time_is_logged_on_request(tmp_path):
    config = tiny_run_config(epochs=1, log_wall_time=True)
    result = train_loop(config, prepare_data(config), tmp_path)
    assert all(m.wall_time is not None and m.wall_time >= 0 for m in result.metrics)

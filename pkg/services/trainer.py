"""Training: Adam, gradient clipping, batching, checkpoint selection and averaging.

Every sentence is recorded on its own tape, so a batch needs no padding.
Per-sentence gradients are merged in batch order and scaled by the number
of target tokens; the optimizer step runs on one thread.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel

from core.autodiff import ParamStore, Tape
from core.config import RunConfig, config_hash, write_config
from core.errors import ConfigError, DataError, NumericError, ShapeMismatchError
from core.tensor import Tensor
from models.base import Dropout, ModelDims, TranslationModel
from models.registry import build_model
from utils.corpus import ParallelCorpus, make_batches
from utils.metrics import EncodedPair, perplexity
from utils.storage import Checkpoint, load_checkpoint, save_checkpoint
from utils.tasks import SyntheticTaskSettings, TaskName, generate_task
from utils.vocab import Vocabulary, build_vocab

logger = logging.getLogger(__name__)

Grads = dict[str, np.ndarray]

__all__ = [
    "AdamState",
    "Checkpoint",
    "MetricRecord",
    "TrainingData",
    "TrainResult",
    "adam_step",
    "average_checkpoints",
    "clip_global_norm",
    "global_norm",
    "prepare_data",
    "train_loop",
]


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Grads = field(default_factory=dict)
    v: Grads = field(default_factory=dict)

    @classmethod
    def init(cls, params: ParamStore, lr: float) -> "AdamState":
        zeros = {name: np.zeros(value.shape, dtype=params.dtype) for name, value in params.items()}
        return cls(lr=lr, m=zeros, v={name: z.copy() for name, z in zeros.items()})


def adam_step(state: AdamState, params: ParamStore, grads: Grads) -> None:
    """Bias-corrected Adam update of every parameter in ``params``, in place."""
    bad = [name for name in params.names() if not np.all(np.isfinite(grads[name]))]
    if bad:
        raise NumericError(
            f"Non-finite gradient at update {state.t + 1} for: {', '.join(bad)}; step aborted"
        )
    state.t += 1
    correction1 = 1.0 - state.beta1**state.t
    correction2 = 1.0 - state.beta2**state.t
    for name, value in params.items():
        g = grads[name]
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        update = state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        params.set(name, Tensor(value.data - update))


def global_norm(grads: Grads) -> float:
    return math.sqrt(math.fsum(float(np.sum(g * g)) for g in grads.values()))


def clip_global_norm(grads: Grads, threshold: float = 1.0) -> Grads:
    """Rescale all gradients by threshold / norm when the joint L2 norm exceeds it."""
    norm = global_norm(grads)
    if norm <= threshold:
        return grads
    factor = threshold / norm
    return {name: g * factor for name, g in grads.items()}


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def average_checkpoints(ckpts: Sequence[Checkpoint]) -> Checkpoint:
    """Element-wise mean of every parameter: the sum in list order, divided by k."""
    if not ckpts:
        raise DataError("No checkpoints to average")
    first = ckpts[0]
    for other in ckpts[1:]:
        if other.config_hash != first.config_hash:
            raise ConfigError("Cannot average checkpoints from different configs")
        if list(other.params) != list(first.params):
            raise ShapeMismatchError("Checkpoints hold different parameter sets")
        for name, value in other.params.items():
            if value.shape != first.params[name].shape:
                raise ShapeMismatchError(f"{name}: {first.params[name].shape} vs {value.shape}")

    averaged: dict[str, Tensor] = {}
    for name, value in first.params.items():
        total = value.numpy()
        for other in ckpts[1:]:
            total += other.params[name].data
        averaged[name] = Tensor(total / len(ckpts))
    return Checkpoint(
        params=averaged,
        step=max(c.step for c in ckpts),
        dev_ppl=None,
        config_hash=first.config_hash,
        dtype=first.dtype,
    )


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------


@dataclass
class TrainingData:
    train: list[EncodedPair]
    dev: list[EncodedPair]
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary


def _task_corpora(config: RunConfig) -> tuple[ParallelCorpus, ParallelCorpus]:
    common = dict(
        task=TaskName(config.task),
        vocab_size=config.task_vocab_size,
        min_length=config.task_min_length,
        max_length=config.task_max_length,
    )
    train = generate_task(SyntheticTaskSettings(samples=config.task_train_size, seed=config.seed, **common))
    dev = generate_task(SyntheticTaskSettings(samples=config.task_dev_size, seed=config.seed + 1, **common))
    return train, dev


def prepare_data(config: RunConfig) -> TrainingData:
    if config.task is not None:
        train, dev = _task_corpora(config)
    else:
        train = ParallelCorpus.read(config.train_src, config.train_tgt)
        dev = ParallelCorpus.read(config.dev_src, config.dev_tgt)
    train = train.filter_by_length(config.max_length)
    if not len(train):
        raise DataError(f"Training corpus is empty after filtering to {config.max_length} tokens")
    if not len(dev):
        raise DataError("Development corpus is empty")

    src_vocab = build_vocab(train.sources, config.vocab_size)
    tgt_vocab = build_vocab(train.targets, config.vocab_size)

    def encoded(corpus: ParallelCorpus) -> list[EncodedPair]:
        return [(src_vocab.encode(s), tgt_vocab.encode(t, add_eos=True)) for s, t in corpus]

    return TrainingData(encoded(train), encoded(dev), src_vocab, tgt_vocab)


def model_dims(config: RunConfig, src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> ModelDims:
    return ModelDims(
        src_vocab=len(src_vocab),
        tgt_vocab=len(tgt_vocab),
        embed_dim=config.embed_dim,
        hidden_size=config.hidden_size,
        fertility_cap=config.fertility_cap,
    )


# ---------------------------------------------------------------------------
# Loop
# ---------------------------------------------------------------------------


class MetricRecord(BaseModel):
    step: int
    train_nll: float
    dev_ppl: float
    wall_time: Optional[float] = None


@dataclass
class TrainResult:
    metrics: list[MetricRecord]
    best: list[tuple[float, int, Path]]  # (dev ppl, step, path), best first
    average_path: Path
    params: ParamStore


def _sentence_grads(
    model: TranslationModel, params: ParamStore, pair: EncodedPair, dropout: Dropout
) -> tuple[float, Grads]:
    tape = Tape(params)
    loss = model.sentence_loss(tape, pair[0], pair[1], dropout)
    value = loss.value.item()
    return value, tape.backward(loss)


def _example_grads(
    model: TranslationModel, params: ParamStore, train: list[EncodedPair], config: RunConfig, step: int, idx: int
) -> tuple[float, Grads]:
    # dropout masks depend on (seed, step, example) only, never on the worker count
    dropout = Dropout(config.dropout, np.random.default_rng([config.seed, step, idx]))
    return _sentence_grads(model, params, train[idx], dropout)


def _eval_points(num_batches: int) -> set[int]:
    # after the batch that completes each half epoch
    return {max(1, math.ceil(num_batches / 2)), num_batches}


def train_loop(config: RunConfig, data: TrainingData, out_dir: Path) -> TrainResult:
    """Train ``config.variant`` on ``data`` and write the run directory.

    ``out_dir`` receives run.conf, src.vocab, tgt.vocab, the ``keep_best``
    best step checkpoints, avg.ckpt and metrics.jsonl.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config(config, out_dir / "run.conf")
    data.src_vocab.save(out_dir / "src.vocab")
    data.tgt_vocab.save(out_dir / "tgt.vocab")
    run_hash = config_hash(config)

    model = build_model(config.variant, model_dims(config, data.src_vocab, data.tgt_vocab))
    params = model.register(ParamStore(config.dtype), np.random.default_rng(config.seed))
    adam = AdamState.init(params, config.lr)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    logger.info(
        "[TRAIN] %s: %d params, %d train / %d dev pairs, lr %g",
        config.variant,
        params.num_scalars(),
        len(data.train),
        len(data.dev),
        config.lr,
    )

    metrics: list[MetricRecord] = []
    best: list[tuple[float, int, Path]] = []
    metrics_path = out_dir / "metrics.jsonl"
    metrics_path.write_text("", encoding="utf-8")
    pool = (
        ThreadPoolExecutor(max_workers=config.workers, thread_name_prefix="train")
        if config.workers > 1
        else None
    )
    start = time.perf_counter()
    step = 0
    try:
        for epoch in range(1, config.epochs + 1):
            batches = make_batches(
                [len(src) for src, _ in data.train], config.batch_size, config.shuffle_window, shuffle_rng
            )
            eval_points = _eval_points(len(batches))
            nll_total, nll_tokens = 0.0, 0
            window_start = time.perf_counter()
            for b, batch in enumerate(batches, start=1):
                step += 1

                run = partial(_example_grads, model, params, data.train, config, step)
                results = list(pool.map(run, batch)) if pool is not None else [run(i) for i in batch]
                tokens = sum(len(data.train[i][1]) for i in batch)
                merged = {name: np.zeros(value.shape, dtype=params.dtype) for name, value in params.items()}
                for _, grads in results:
                    for name in merged:
                        merged[name] += grads[name]
                merged = {name: g / tokens for name, g in merged.items()}
                adam_step(adam, params, clip_global_norm(merged, config.clip_threshold))
                nll_total += math.fsum(loss for loss, _ in results)
                nll_tokens += tokens

                if b not in eval_points:
                    continue
                elapsed = time.perf_counter() - window_start
                dev_ppl = perplexity(model, params, data.dev, config.workers)
                record = MetricRecord(
                    step=step,
                    train_nll=nll_total / nll_tokens,
                    dev_ppl=dev_ppl,
                    wall_time=time.perf_counter() - start if config.log_wall_time else None,
                )
                metrics.append(record)
                with metrics_path.open("a", encoding="utf-8") as handle:
                    handle.write(record.model_dump_json() + "\n")
                logger.info(
                    "[TRAIN] epoch %d step %d train nll %.4f dev ppl %.4f (%.1f words/s)",
                    epoch,
                    step,
                    record.train_nll,
                    dev_ppl,
                    nll_tokens / elapsed if elapsed > 0 else float("inf"),
                )
                best = _keep_best(best, dev_ppl, step, params, run_hash, config, out_dir)
                nll_total, nll_tokens = 0.0, 0
                window_start = time.perf_counter()
    finally:
        if pool is not None:
            pool.shutdown()

    kept = [load_checkpoint(path) for _, _, path in best]
    average_path = save_checkpoint(average_checkpoints(kept), out_dir / "avg.ckpt")
    logger.info("[TRAIN] averaged %d best checkpoints into %s", len(kept), average_path)
    return TrainResult(metrics=metrics, best=best, average_path=average_path, params=params)


def _keep_best(
    best: list[tuple[float, int, Path]],
    dev_ppl: float,
    step: int,
    params: ParamStore,
    run_hash: str,
    config: RunConfig,
    out_dir: Path,
) -> list[tuple[float, int, Path]]:
    candidate = (dev_ppl, step, out_dir / f"step-{step:07d}.ckpt")
    ranked = sorted([*best, candidate])
    if candidate not in ranked[: config.keep_best]:
        return best
    save_checkpoint(
        Checkpoint(
            params=params.snapshot(),
            step=step,
            dev_ppl=dev_ppl,
            config_hash=run_hash,
            dtype=params.dtype,
        ),
        candidate[2],
    )
    for _, _, path in ranked[config.keep_best :]:
        path.unlink(missing_ok=True)
    return ranked[: config.keep_best]

"""Beam search over any model variant, plus corpus decoding.

Hypotheses never copy decoder state: an extension shares its parent's
state objects (for the 2D model, the immutable ``RowCache`` of the previous
row) and builds only what the new token needs.
"""

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from core.autodiff import ParamStore, Tape
from models.base import TranslationModel
from utils.corpus import read_lines, tokenize
from utils.vocab import BOS_ID, EOS_ID, Vocabulary

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    logprob: float
    state: Any = field(default=None, compare=False, repr=False)
    finished: bool = False
    alignments: tuple[np.ndarray, ...] = field(default=(), compare=False, repr=False)

    @property
    def score(self) -> float:
        """Length-normalized log-probability; EOS counts as a token."""
        return self.logprob / max(1, len(self.tokens))

    @property
    def output(self) -> list[int]:
        return list(self.tokens[:-1]) if self.finished else list(self.tokens)


@dataclass
class BeamResult:
    best: Hypothesis
    nbest: list[Hypothesis]
    steps: int


def default_max_len(source_length: int) -> int:
    return 2 * source_length + 10


def _rank(hyp: Hypothesis) -> tuple:
    # best normalized score, then shorter, then smaller token ids
    return (-hyp.score, len(hyp.tokens), hyp.tokens)


def beam_search(
    model: TranslationModel,
    params: ParamStore,
    src_ids: Sequence[int],
    beam_size: int = 12,
    max_len: Optional[int] = None,
) -> BeamResult:
    """Best length-normalized hypothesis plus the n-best list.

    Candidates are ranked by cumulative log-probability (ties by token ids);
    the ``beam_size`` best survive each step. Hypotheses ending in EOS move to
    a finished pool. The search stops once no active hypothesis can still
    beat the pool: with log-probabilities <= 0, an active hypothesis's
    normalized score is bounded by logprob / max_len.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    max_len = max_len if max_len is not None else default_max_len(len(src_ids))
    tape = Tape(params, grad_enabled=False)
    active = [Hypothesis(tokens=(), logprob=0.0, state=model.start(tape, src_ids))]
    pool: list[Hypothesis] = []
    steps = 0

    for length in range(1, max_len + 1):
        steps = length
        candidates: list[Hypothesis] = []
        for hyp in active:
            out = model.step(tape, hyp.state, hyp.tokens[-1] if hyp.tokens else BOS_ID)
            log_probs = out.log_probs.value.data
            weights = hyp.alignments
            if out.weights is not None:
                weights = weights + (out.weights.numpy(),)
            # per-parent top-k is enough for the global top-k
            order = np.lexsort((np.arange(log_probs.size), -log_probs))[:beam_size]
            for token in order.tolist():
                candidates.append(
                    Hypothesis(
                        tokens=hyp.tokens + (token,),
                        logprob=hyp.logprob + float(log_probs[token]),
                        state=out.state,
                        finished=token == EOS_ID,
                        alignments=weights,
                    )
                )
        candidates.sort(key=lambda h: (-h.logprob, h.tokens))
        active = []
        for hyp in candidates[:beam_size]:
            (pool if hyp.finished else active).append(hyp)
        if not active:
            break
        if pool:
            best_pool = max(h.score for h in pool)
            if max(h.logprob for h in active) / max_len < best_pool:
                break

    finished = sorted(pool, key=_rank)
    if finished:
        return BeamResult(best=finished[0], nbest=finished, steps=steps)
    forced = sorted(active, key=_rank)
    logger.debug("[DECODE] no hypothesis finished within %d tokens", max_len)
    return BeamResult(best=forced[0], nbest=forced, steps=steps)


# ---------------------------------------------------------------------------
# Corpora
# ---------------------------------------------------------------------------


@dataclass
class DecodedLine:
    tokens: list[str]
    logprob: float
    alignments: list[list[float]]

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


def decode_sentences(
    model: TranslationModel,
    params: ParamStore,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    sentences: Sequence[Sequence[str]],
    beam_size: int = 12,
    max_len: Optional[int] = None,
    workers: int = 1,
) -> list[DecodedLine]:
    """Decode tokenized sentences; output order follows input order."""

    def decode_one(tokens: Sequence[str]) -> DecodedLine:
        if not tokens:
            return DecodedLine(tokens=[], logprob=0.0, alignments=[])
        result = beam_search(model, params, src_vocab.encode(tokens), beam_size, max_len)
        best = result.best
        return DecodedLine(
            tokens=tgt_vocab.decode(best.tokens),
            logprob=best.logprob,
            alignments=[a.tolist() for a in best.alignments],
        )

    start = time.perf_counter()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="decode") as pool:
            lines = list(pool.map(decode_one, sentences))
    else:
        lines = [decode_one(tokens) for tokens in sentences]
    elapsed = time.perf_counter() - start
    words = sum(len(line.tokens) for line in lines)
    if lines:
        logger.info(
            "[DECODE] %d sentences, %d words in %.2fs (%.1f words/s)",
            len(lines),
            words,
            elapsed,
            words / elapsed if elapsed > 0 else float("inf"),
        )
    return lines


def decode_corpus(
    model: TranslationModel,
    params: ParamStore,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    input_path: Path,
    output_path: Path,
    beam_size: int = 12,
    max_len: Optional[int] = None,
    workers: int = 1,
    alignments_path: Optional[Path] = None,
) -> list[DecodedLine]:
    """One output line per input line; empty inputs give empty outputs."""
    sentences = [tokenize(line) for line in read_lines(input_path)]
    lines = decode_sentences(
        model, params, src_vocab, tgt_vocab, sentences, beam_size, max_len, workers
    )
    Path(output_path).write_text("".join(line.text + "\n" for line in lines), encoding="utf-8")
    if alignments_path is not None:
        with Path(alignments_path).open("w", encoding="utf-8") as handle:
            for index, line in enumerate(lines):
                handle.write(json.dumps({"line": index, "weights": line.alignments}) + "\n")
    return lines

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

from pydantic import BaseModel
from sacrebleu.metrics import BLEU

from core.autodiff import ParamStore, Tape
from core.errors import DataError

EncodedPair = tuple[list[int], list[int]]


class BleuResult(BaseModel):
    score: float
    precisions: list[float]
    brevity_penalty: float
    sys_len: int
    ref_len: int


def bleu(
    hyps: Sequence[str], refs: Sequence[str], max_ngram: int = 4, case_sensitive: bool = True
) -> BleuResult:
    """Corpus BLEU in percent, unsmoothed, whitespace tokens only."""
    if not hyps:
        raise DataError("BLEU needs at least one hypothesis")
    if len(hyps) != len(refs):
        raise DataError(f"BLEU line count mismatch: {len(hyps)} hypotheses vs {len(refs)} references")
    metric = BLEU(
        lowercase=not case_sensitive,
        tokenize="none",
        smooth_method="none",
        max_ngram_order=max_ngram,
        effective_order=False,
    )
    result = metric.corpus_score(list(hyps), [list(refs)])
    return BleuResult(
        score=result.score,
        precisions=list(result.precisions),
        brevity_penalty=result.bp,
        sys_len=result.sys_len,
        ref_len=result.ref_len,
    )


def corpus_nll(model, params: ParamStore, pairs: Sequence[EncodedPair], workers: int = 1) -> tuple[float, int]:
    """Total NLL and target token count (EOS included), summed in corpus order."""

    def score(pair: EncodedPair) -> float:
        src, tgt = pair
        return model.sentence_loss(Tape(params, grad_enabled=False), src, tgt).value.item()

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="perplexity") as pool:
            losses = list(pool.map(score, pairs))
    else:
        losses = [score(pair) for pair in pairs]
    return math.fsum(losses), sum(len(tgt) for _, tgt in pairs)


def perplexity(model, params: ParamStore, pairs: Sequence[EncodedPair], workers: int = 1) -> float:
    if not pairs:
        raise DataError("Perplexity needs a non-empty corpus")
    total, tokens = corpus_nll(model, params, pairs, workers)
    return math.exp(total / tokens)

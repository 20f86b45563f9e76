from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, ClassVar, Optional, Sequence

import numpy as np

from core import autodiff as ad
from core.autodiff import ParamStore, Tape, Var
from core.tensor import Tensor
from models.cells import uniform_init
from models.encoder import register_embeddings, register_encoder
from utils.vocab import BOS_ID


@dataclass(frozen=True)
class ModelDims:
    src_vocab: int
    tgt_vocab: int
    embed_dim: int
    hidden_size: int
    fertility_cap: float = 2.0


class Dropout:
    """Inverted dropout with masks drawn from an explicitly threaded RNG."""

    def __init__(self, rate: float = 0.0, rng: Optional[np.random.Generator] = None):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng

    @property
    def active(self) -> bool:
        return self.rate > 0.0 and self.rng is not None

    def __call__(self, x: Var) -> Var:
        if not self.active:
            return x
        keep = self.rng.random(x.shape) >= self.rate
        mask = keep / (1.0 - self.rate)
        return ad.mul(x, x.tape.constant(mask))


NO_DROPOUT = Dropout()


@dataclass
class StepOutput:
    log_probs: Var
    context: Var
    state: Any
    # alignment weights over source positions (alpha or gamma), when the variant has them
    weights: Optional[Var] = None

    @property
    def distribution(self) -> np.ndarray:
        return np.exp(self.log_probs.value.data)


class TranslationModel(ABC):
    """Uniform train-step / decode-step interface shared by all variants."""

    variant: ClassVar[str]

    def __init__(self, dims: ModelDims):
        self.dims = dims

    @property
    def n(self) -> int:
        return self.dims.hidden_size

    @property
    @abstractmethod
    def context_dim(self) -> int: ...

    def register(self, store: ParamStore, rng: np.random.Generator) -> ParamStore:
        d = self.dims
        register_embeddings(store, d.src_vocab, d.tgt_vocab, d.embed_dim, rng)
        register_encoder(store, d.hidden_size, d.embed_dim, rng)
        self.register_specific(store, rng)
        store.add("out.W", uniform_init(rng, (d.tgt_vocab, self.context_dim), d.hidden_size, store.dtype))
        store.add("out.b", Tensor.zeros((d.tgt_vocab,), store.dtype))
        return store

    @abstractmethod
    def register_specific(self, store: ParamStore, rng: np.random.Generator) -> None: ...

    @abstractmethod
    def start(self, tape: Tape, src_ids: Sequence[int], dropout: Dropout = NO_DROPOUT) -> Any:
        """Encode the source and return the initial decoder state."""

    @abstractmethod
    def step(
        self, tape: Tape, state: Any, y_prev: int, dropout: Dropout = NO_DROPOUT
    ) -> StepOutput:
        """Consume y_{i-1} and return log p(y_i | prefix, source)."""

    def output_layer(self, tape: Tape, t: Var) -> Var:
        logits = ad.add(ad.matmul(tape.param("out.W"), t), tape.param("out.b"))
        return ad.log_softmax(logits)

    def target_embedding(self, tape: Tape, token: int, dropout: Dropout = NO_DROPOUT) -> Var:
        return dropout(ad.row(tape.param("tgt_embed"), token))

    def sentence_loss(
        self,
        tape: Tape,
        src_ids: Sequence[int],
        tgt_ids: Sequence[int],
        dropout: Dropout = NO_DROPOUT,
    ) -> Var:
        """Reference-prefix -sum_i log p(y_i | y_<i, x); ``tgt_ids`` ends with EOS."""
        state = self.start(tape, src_ids, dropout)
        y_prev = BOS_ID
        picked: list[Var] = []
        for y in tgt_ids:
            out = self.step(tape, state, y_prev, dropout)
            picked.append(ad.take(out.log_probs, y))
            state, y_prev = out.state, y
        return negated_sum(picked)


def negated_sum(terms: Sequence[Var]) -> Var:
    total = terms[0]
    for term in terms[1:]:
        total = ad.add(total, term)
    return ad.scale(total, -1.0)

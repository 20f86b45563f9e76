"""Embeddings and the bidirectional LSTM pre-encoder."""

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from core import autodiff as ad
from core.autodiff import ParamStore, Tape, Var
from core.errors import ShapeMismatchError
from models.cells import CellState, LSTMParams, lstm_step, uniform_init


@dataclass
class EncoderStates:
    states: list[Var]  # h_1..h_J, each [forward; backward], width 2n
    forward: list[CellState]
    backward: list[CellState]  # backward[j] is the right-to-left state at position j

    @property
    def J(self) -> int:
        return len(self.states)

    @property
    def final_backward(self) -> CellState:
        """Right-to-left scan state after reading the whole source."""
        return self.backward[0]


def register_embeddings(
    store: ParamStore, src_vocab: int, tgt_vocab: int, embed_dim: int, rng: np.random.Generator
) -> None:
    store.add("src_embed", uniform_init(rng, (src_vocab, embed_dim), embed_dim, store.dtype))
    store.add("tgt_embed", uniform_init(rng, (tgt_vocab, embed_dim), embed_dim, store.dtype))


def register_encoder(store: ParamStore, n: int, embed_dim: int, rng: np.random.Generator) -> None:
    LSTMParams.register(store, "enc.fwd", n, embed_dim, rng)
    LSTMParams.register(store, "enc.bwd", n, embed_dim, rng)


def lookup(tape: Tape, table: str, ids: Sequence[int]) -> list[Var]:
    matrix = tape.param(table)
    return [ad.row(matrix, token) for token in ids]


def encode(
    tape: Tape,
    src_ids: Sequence[int],
    dropout: Callable[[Var], Var] = lambda x: x,
    forward_prefix: str = "enc.fwd",
    backward_prefix: str = "enc.bwd",
) -> EncoderStates:
    if not src_ids:
        raise ShapeMismatchError("cannot encode an empty source sequence")
    fwd = LSTMParams.bind(tape, forward_prefix)
    bwd = LSTMParams.bind(tape, backward_prefix)
    embedded = [dropout(x) for x in lookup(tape, "src_embed", src_ids)]

    forward: list[CellState] = []
    state = CellState.zeros(tape, fwd.n)
    for x in embedded:
        state = lstm_step(fwd, x, state)
        forward.append(state)

    backward: list[CellState] = [None] * len(embedded)  # type: ignore[list-item]
    state = CellState.zeros(tape, bwd.n)
    for j in range(len(embedded) - 1, -1, -1):
        state = lstm_step(bwd, embedded[j], state)
        backward[j] = state

    states = [ad.concat([f.s, b.s]) for f, b in zip(forward, backward)]
    return EncoderStates(states=states, forward=forward, backward=backward)

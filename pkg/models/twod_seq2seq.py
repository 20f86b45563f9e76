"""2D sequence-to-sequence model.

The source axis (j) of a 2DLSTM grid encodes and the target axis (i)
decodes. The cell at (j, i) reads x_{j,i} = [h_j; embed(y_{i-1})], so every
target step re-reads the whole source conditioned on the target history.
The context t_i is s_{J,i} (or, with weighting, a softmax-weighted sum of
the row s_{1..J,i}).
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from core import autodiff as ad
from core.autodiff import ParamStore, Tape, Var
from models.attention import register_weighting, weighted_context
from models.base import NO_DROPOUT, Dropout, ModelDims, StepOutput, TranslationModel, negated_sum
from models.cells import TwoDLSTMParams
from models.encoder import EncoderStates, encode
from services.grid_engine import RowCache, extend_row, forward_full, forward_wavefront
from utils.vocab import BOS_ID


@dataclass
class TwoDState:
    enc: EncoderStates
    sources: list[Var]
    cache: RowCache
    prefix: tuple[int, ...] = ()  # y_0 .. y_{i-1} consumed so far


class TwoDSeq2Seq(TranslationModel):
    variant = "2d-seq2seq"
    weighting = False

    def __init__(self, dims: ModelDims, grid_workers: int = 1, recompute: bool = False):
        super().__init__(dims)
        self.grid_workers = grid_workers
        # debug path: rebuild the whole grid at every target step instead of extending a row
        self.recompute = recompute

    @property
    def context_dim(self) -> int:
        return self.n

    @property
    def input_dim(self) -> int:
        return 2 * self.n + self.dims.embed_dim

    def register_specific(self, store: ParamStore, rng: np.random.Generator) -> None:
        TwoDLSTMParams.register(store, "grid", self.n, self.input_dim, rng)
        if self.weighting:
            register_weighting(store, self.n, rng)

    def start(self, tape: Tape, src_ids: Sequence[int], dropout: Dropout = NO_DROPOUT) -> TwoDState:
        enc = encode(tape, src_ids, dropout)
        sources = [dropout(h) for h in enc.states]
        grid = TwoDLSTMParams.bind(tape, "grid")
        return TwoDState(enc=enc, sources=sources, cache=RowCache.empty(grid, enc.J))

    def _context(self, tape: Tape, row_states: Sequence[Var]) -> tuple[Var, Optional[Var]]:
        if self.weighting:
            gamma, t = weighted_context(tape, row_states)
            return t, gamma
        return row_states[-1], None

    def step(
        self, tape: Tape, state: TwoDState, y_prev: int, dropout: Dropout = NO_DROPOUT
    ) -> StepOutput:
        grid = TwoDLSTMParams.bind(tape, "grid")
        prefix = state.prefix + (y_prev,)
        if self.recompute:
            embeds = [self.target_embedding(tape, y, dropout) for y in prefix]
            inputs = [[ad.concat([h, y]) for y in embeds] for h in state.sources]
            full = forward_full(grid, inputs)
            row = full.row(full.I)
            cache = RowCache(i=full.I, cells=tuple(row))
        else:
            y_embed = self.target_embedding(tape, y_prev, dropout)
            cache, row = extend_row(grid, state.cache, [ad.concat([h, y_embed]) for h in state.sources])
        t, weights = self._context(tape, [cell.s for cell in row])
        return StepOutput(
            log_probs=self.output_layer(tape, t),
            context=t,
            state=TwoDState(enc=state.enc, sources=state.sources, cache=cache, prefix=prefix),
            weights=weights,
        )

    def sentence_loss(
        self,
        tape: Tape,
        src_ids: Sequence[int],
        tgt_ids: Sequence[int],
        dropout: Dropout = NO_DROPOUT,
    ) -> Var:
        # The whole target is known, so the grid is built once up front.
        state = self.start(tape, src_ids, dropout)
        grid = TwoDLSTMParams.bind(tape, "grid")
        history = [BOS_ID, *tgt_ids[:-1]]
        embeds = [self.target_embedding(tape, y, dropout) for y in history]
        inputs = [[ad.concat([h, y]) for y in embeds] for h in state.sources]
        if self.grid_workers > 1:
            lattice = forward_wavefront(grid, inputs, self.grid_workers)
        else:
            lattice = forward_full(grid, inputs)
        picked: list[Var] = []
        for i, y in enumerate(tgt_ids, start=1):
            t, _ = self._context(tape, [cell.s for cell in lattice.row(i)])
            picked.append(ad.take(self.output_layer(tape, t), y))
        return negated_sum(picked)


class WeightedTwoDSeq2Seq(TwoDSeq2Seq):
    variant = "2d-seq2seq-weighted"
    weighting = True

"""Attention baselines: plain additive attention, coverage and fertility.

One-layer bidirectional encoder and a unidirectional LSTM decoder whose
input at step i is [embed(y_{i-1}); context_{i-1}]. The decoder starts from
the final right-to-left encoder state. The output layer reads [s_i; context_i].
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from core import autodiff as ad
from core.autodiff import ParamStore, Tape, Var
from models.attention import (
    AttentionContext,
    AttentionMode,
    attention_step,
    fertility_beta,
    prepare_attention,
    register_attention,
)
from models.base import NO_DROPOUT, Dropout, StepOutput, TranslationModel
from models.cells import CellState, LSTMParams, lstm_step
from models.encoder import EncoderStates, encode


@dataclass
class AttentionState:
    enc: EncoderStates
    attention: AttentionContext
    decoder: CellState
    context: Var  # context_{i-1}, zeros before the first step
    prev_alpha: Optional[Var] = None  # coverage feedback, alpha_0 = 0
    alpha_sum: Optional[Var] = None  # fertility feedback, empty sum = 0


class AttentionSeq2Seq(TranslationModel):
    variant = "attention"
    mode = AttentionMode.PLAIN

    @property
    def context_dim(self) -> int:
        return 3 * self.n

    def register_specific(self, store: ParamStore, rng: np.random.Generator) -> None:
        LSTMParams.register(store, "dec", self.n, self.dims.embed_dim + 2 * self.n, rng)
        register_attention(store, self.n, self.mode, rng)

    def start(
        self, tape: Tape, src_ids: Sequence[int], dropout: Dropout = NO_DROPOUT
    ) -> AttentionState:
        enc = encode(tape, src_ids, dropout)
        sources = [dropout(h) for h in enc.states]
        attention = prepare_attention(tape, sources, self.mode, self.dims.fertility_cap)
        J = enc.J
        return AttentionState(
            enc=enc,
            attention=attention,
            decoder=enc.final_backward,
            context=tape.zeros((2 * self.n,)),
            prev_alpha=tape.zeros((J,)) if self.mode is AttentionMode.COVERAGE else None,
            alpha_sum=tape.zeros((J,)) if self.mode is AttentionMode.FERTILITY else None,
        )

    def _feedback(self, state: AttentionState) -> Optional[Var]:
        if self.mode is AttentionMode.COVERAGE:
            return state.prev_alpha
        if self.mode is AttentionMode.FERTILITY:
            return fertility_beta(state.alpha_sum, state.attention)
        return None

    def step(
        self, tape: Tape, state: AttentionState, y_prev: int, dropout: Dropout = NO_DROPOUT
    ) -> StepOutput:
        alpha, context = attention_step(tape, state.attention, state.decoder.s, self._feedback(state))
        y_embed = self.target_embedding(tape, y_prev, dropout)
        decoder = lstm_step(
            LSTMParams.bind(tape, "dec"), ad.concat([y_embed, state.context]), state.decoder
        )
        log_probs = self.output_layer(tape, ad.concat([decoder.s, context]))
        alpha_sum = ad.add(state.alpha_sum, alpha) if state.alpha_sum is not None else None
        return StepOutput(
            log_probs=log_probs,
            context=context,
            state=AttentionState(
                enc=state.enc,
                attention=state.attention,
                decoder=decoder,
                context=context,
                prev_alpha=alpha if state.prev_alpha is not None else None,
                alpha_sum=alpha_sum,
            ),
            weights=alpha,
        )


class CoverageSeq2Seq(AttentionSeq2Seq):
    variant = "coverage"
    mode = AttentionMode.COVERAGE


class FertilitySeq2Seq(AttentionSeq2Seq):
    variant = "fertility"
    mode = AttentionMode.FERTILITY

"""Additive attention (plain, coverage, fertility) and the 2D weighting layer.

Energies follow the additive form

    e_j = v . tanh(W_h h_j + U_s s_{i-1} [+ w_c * extra_j] + b)

where ``extra_j`` is the previous alignment alpha_{i-1,j} (coverage) or the
fertility-normalized accumulated alignment beta_{i,j} (fertility).
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from core import autodiff as ad
from core.autodiff import ParamStore, Tape, Var
from core.tensor import Tensor
from models.cells import uniform_init

# sigmoid stays strictly inside (0, 1) at float32 for |z| <= 15. A clipped
# logit passes no gradient, so u_phi stops learning from that source word.
FERTILITY_LOGIT_BOUND = 15.0


class AttentionMode(str, Enum):
    PLAIN = "plain"
    COVERAGE = "coverage"
    FERTILITY = "fertility"


def register_attention(
    store: ParamStore, n: int, mode: AttentionMode, rng: np.random.Generator
) -> None:
    a = n
    store.add("att.W_h", uniform_init(rng, (2 * n, a), n, store.dtype))
    store.add("att.U_s", uniform_init(rng, (a, n), n, store.dtype))
    store.add("att.b", Tensor.zeros((a,), store.dtype))
    store.add("att.v", uniform_init(rng, (a,), n, store.dtype))
    if mode is not AttentionMode.PLAIN:
        store.add("att.w_c", uniform_init(rng, (1, a), n, store.dtype))
    if mode is AttentionMode.FERTILITY:
        store.add("att.u_phi", uniform_init(rng, (2 * n,), n, store.dtype))


@dataclass
class AttentionContext:
    """Per-sentence quantities that do not depend on the decoder step."""

    mode: AttentionMode
    H: Var  # (J, 2n)
    HT: Var  # (2n, J)
    keys: Var  # (J, a) = H W_h
    fertility: Optional[Var] = None  # (J,) = N * sigmoid(u_phi . h_j)

    @property
    def J(self) -> int:
        return self.H.shape[0]


def prepare_attention(
    tape: Tape, sources: Sequence[Var], mode: AttentionMode, fertility_cap: float = 2.0
) -> AttentionContext:
    H = ad.stack(sources)
    fertility = None
    if mode is AttentionMode.FERTILITY:
        logits = ad.clip(
            ad.matmul(H, tape.param("att.u_phi")), -FERTILITY_LOGIT_BOUND, FERTILITY_LOGIT_BOUND
        )
        fertility = ad.scale(ad.sigmoid(logits), fertility_cap)
    return AttentionContext(
        mode=mode,
        H=H,
        HT=ad.transpose(H),
        keys=ad.matmul(H, tape.param("att.W_h")),
        fertility=fertility,
    )


def fertility_beta(alpha_sum: Var, context: AttentionContext) -> Var:
    """Accumulated past alignment divided by the per-position fertility."""
    return ad.div(alpha_sum, context.fertility)


def attention_step(
    tape: Tape, context: AttentionContext, dec_state: Var, extra: Optional[Var] = None
) -> tuple[Var, Var]:
    """Return (alpha_{i,.}, sum_j alpha_{i,j} h_j)."""
    J = context.J
    query = ad.repeat_rows(ad.matmul(tape.param("att.U_s"), dec_state), J)
    pre = ad.add(context.keys, query)
    if context.mode is not AttentionMode.PLAIN:
        if extra is None:
            extra = tape.zeros((J,))
        feedback = ad.matmul(ad.reshape(extra, (J, 1)), tape.param("att.w_c"))
        pre = ad.add(pre, feedback)
    pre = ad.add(pre, ad.repeat_rows(tape.param("att.b"), J))
    energies = ad.matmul(ad.tanh(pre), tape.param("att.v"))
    alpha = ad.softmax(energies)
    return alpha, ad.matmul(context.HT, alpha)


def register_weighting(store: ParamStore, n: int, rng: np.random.Generator) -> None:
    store.add("weight.W", uniform_init(rng, (n, n), n, store.dtype))
    store.add("weight.v", uniform_init(rng, (n,), n, store.dtype))


def weighted_context(tape: Tape, row_states: Sequence[Var]) -> tuple[Var, Var]:
    """gamma = softmax_j(v . tanh(W s_j)); t = sum_j gamma_j s_j."""
    S = ad.stack(row_states)
    energies = ad.matmul(ad.tanh(ad.matmul(S, tape.param("weight.W"))), tape.param("weight.v"))
    gamma = ad.softmax(energies)
    return gamma, ad.matmul(ad.transpose(S), gamma)

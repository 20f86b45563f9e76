"""Finite-difference check of a whole model on a tiny random sentence pair."""

import logging

import numpy as np

from core.autodiff import GradCheckReport, ParamStore, Tape, Var, grad_check
from core.errors import ConfigError
from models.base import ModelDims
from models.registry import build_model
from utils.vocab import EOS_ID, RESERVED

logger = logging.getLogger(__name__)

GRADCHECK_VOCAB = len(RESERVED) + 3
GRADCHECK_TOLERANCE = 1e-4


def parse_dims(text: str) -> tuple[int, int, int]:
    """``"3x4x5"`` -> (J, I, n)."""
    try:
        J, I, n = (int(part) for part in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"--dims expects JxIxn, got {text!r}") from None
    if min(J, I, n) < 1:
        raise ConfigError(f"--dims values must be positive, got {text!r}")
    return J, I, n


def check_model(
    variant: str,
    J: int,
    I: int,
    n: int,
    seed: int = 1,
    epsilon: float = 1e-5,
    tolerance: float = GRADCHECK_TOLERANCE,
    grid_workers: int = 1,
) -> GradCheckReport:
    """Gradient-check ``variant`` on a source of J tokens and a target of I tokens.

    The target's last token is EOS, so I counts EOS like the training loss does.
    Runs in float64; no dropout.
    """
    dims = ModelDims(src_vocab=GRADCHECK_VOCAB, tgt_vocab=GRADCHECK_VOCAB, embed_dim=n, hidden_size=n)
    try:
        model = build_model(variant, dims, grid_workers=grid_workers)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    rng = np.random.default_rng(seed)
    params = model.register(ParamStore("float64"), rng)
    words = np.arange(len(RESERVED), GRADCHECK_VOCAB)
    src = [int(t) for t in rng.choice(words, size=J)]
    tgt = [int(t) for t in rng.choice(words, size=I - 1)] + [EOS_ID]

    def closure(tape: Tape) -> Var:
        return model.sentence_loss(tape, src, tgt)

    logger.info("[GRADCHECK] %s J=%d I=%d n=%d, %d scalars", variant, J, I, n, params.num_scalars())
    return grad_check(closure, params, epsilon=epsilon, tolerance=tolerance)

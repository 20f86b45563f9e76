"""
Shared fixtures: seeded generators, tiny model builders and tape helpers.
"""

import numpy as np
import pytest

from core.autodiff import ParamStore, Tape
from core.tensor import Tensor
from models.base import ModelDims
from models.registry import build_model

ALL_VARIANTS = ["attention", "2d-seq2seq", "2d-seq2seq-weighted", "coverage", "fertility"]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_dims(vocab: int = 7, n: int = 4, embed: int = 3) -> ModelDims:
    return ModelDims(src_vocab=vocab, tgt_vocab=vocab, embed_dim=embed, hidden_size=n)


def tiny_model(variant: str, seed: int = 0, dims: ModelDims | None = None, **kwargs):
    """Build ``variant`` with freshly initialized float64 parameters."""
    model = build_model(variant, dims or tiny_dims(), **kwargs)
    params = model.register(ParamStore("float64"), np.random.default_rng(seed))
    return model, params


def zero_output_layer(params: ParamStore) -> None:
    """Make the model's output distribution uniform."""
    params.set("out.W", Tensor.zeros(params["out.W"].shape))
    params.set("out.b", Tensor.zeros(params["out.b"].shape))


def no_grad(params: ParamStore | None = None) -> Tape:
    return Tape(params, grad_enabled=False)


@pytest.fixture
def store():
    return ParamStore("float64")

from models.attention_seq2seq import AttentionSeq2Seq, CoverageSeq2Seq, FertilitySeq2Seq
from models.base import ModelDims, TranslationModel
from models.twod_seq2seq import TwoDSeq2Seq, WeightedTwoDSeq2Seq

MODEL_VARIANTS: dict[str, type[TranslationModel]] = {
    cls.variant: cls
    for cls in (
        AttentionSeq2Seq,
        TwoDSeq2Seq,
        WeightedTwoDSeq2Seq,
        CoverageSeq2Seq,
        FertilitySeq2Seq,
    )
}

TWOD_VARIANTS = (TwoDSeq2Seq.variant, WeightedTwoDSeq2Seq.variant)


def build_model(
    variant: str, dims: ModelDims, grid_workers: int = 1, recompute: bool = False
) -> TranslationModel:
    try:
        cls = MODEL_VARIANTS[variant]
    except KeyError:
        raise ValueError(f"Unknown model variant: {variant}") from None
    if issubclass(cls, TwoDSeq2Seq):
        return cls(dims, grid_workers=grid_workers, recompute=recompute)
    return cls(dims)

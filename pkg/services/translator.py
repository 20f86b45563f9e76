"""Load a trained run directory and translate with it.

A run directory holds run.conf, src.vocab, tgt.vocab and one or more
checkpoints; ``avg.ckpt`` is used unless a checkpoint file is named.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from core.autodiff import ParamStore
from core.config import RunConfig, config_hash, parse_config
from core.errors import ConfigError, DataError
from models.base import TranslationModel
from models.registry import build_model
from services.decoder import DecodedLine, decode_corpus, decode_sentences
from services.trainer import model_dims
from utils.corpus import ParallelCorpus, tokenize
from utils.metrics import BleuResult, EncodedPair, bleu, perplexity
from utils.storage import load_checkpoint
from utils.vocab import Vocabulary

logger = logging.getLogger(__name__)

AVERAGE_CHECKPOINT = "avg.ckpt"


@dataclass
class Translator:
    config: RunConfig
    model: TranslationModel
    params: ParamStore
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    checkpoint: Path

    @classmethod
    def load(cls, model_path: Path, recompute: bool = False) -> "Translator":
        model_path = Path(model_path)
        if not model_path.exists():
            raise DataError(f"Model path not found: {model_path}")
        run_dir = model_path if model_path.is_dir() else model_path.parent
        ckpt_path = model_path / AVERAGE_CHECKPOINT if model_path.is_dir() else model_path

        config = parse_config(run_dir / "run.conf")
        src_vocab = Vocabulary.load(run_dir / "src.vocab")
        tgt_vocab = Vocabulary.load(run_dir / "tgt.vocab")
        ckpt = load_checkpoint(ckpt_path, dtype=config.dtype)
        if ckpt.config_hash and ckpt.config_hash != config_hash(config):
            raise ConfigError(f"{ckpt_path} was written under a different run.conf")

        model = build_model(
            config.variant, model_dims(config, src_vocab, tgt_vocab), recompute=recompute
        )
        # registration fixes names and shapes; the values come from the checkpoint
        params = model.register(ParamStore(config.dtype), np.random.default_rng(0))
        missing = set(params.names()) - set(ckpt.params)
        if missing:
            raise DataError(f"{ckpt_path} lacks parameters: {', '.join(sorted(missing))}")
        params.load(ckpt.params)
        logger.info("[DECODE] loaded %s (%s, step %d)", ckpt_path, config.variant, ckpt.step)
        return cls(config, model, params, src_vocab, tgt_vocab, ckpt_path)

    def translate(
        self,
        sentences: Sequence[str],
        beam_size: Optional[int] = None,
        max_len: Optional[int] = None,
        workers: int = 1,
    ) -> list[DecodedLine]:
        return decode_sentences(
            self.model,
            self.params,
            self.src_vocab,
            self.tgt_vocab,
            [tokenize(s) for s in sentences],
            beam_size or self.config.beam_size,
            max_len or self.config.max_decode_len,
            workers,
        )

    def decode_file(
        self,
        input_path: Path,
        output_path: Path,
        beam_size: Optional[int] = None,
        max_len: Optional[int] = None,
        workers: int = 1,
        alignments_path: Optional[Path] = None,
    ) -> list[DecodedLine]:
        return decode_corpus(
            self.model,
            self.params,
            self.src_vocab,
            self.tgt_vocab,
            input_path,
            output_path,
            beam_size or self.config.beam_size,
            max_len or self.config.max_decode_len,
            workers,
            alignments_path,
        )

    def perplexity(self, corpus: ParallelCorpus, workers: int = 1) -> float:
        pairs = [
            (self.src_vocab.encode(s), self.tgt_vocab.encode(t, add_eos=True)) for s, t in corpus
        ]
        return self.perplexity_pairs(pairs, workers)

    def perplexity_pairs(self, pairs: Sequence[EncodedPair], workers: int = 1) -> float:
        return perplexity(self.model, self.params, pairs, workers)

    def bleu(self, corpus: ParallelCorpus, beam_size: Optional[int] = None, workers: int = 1) -> BleuResult:
        lines = self.translate([" ".join(s) for s in corpus.sources], beam_size, workers=workers)
        return bleu([line.text for line in lines], [" ".join(t) for t in corpus.targets])

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from core.errors import DataError

logger = logging.getLogger(__name__)

Sentence = list[str]


def tokenize(line: str) -> Sentence:
    return line.split()


def read_lines(path: Path) -> list[str]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Corpus file not found: {path}")
    return path.read_text(encoding="utf-8").splitlines()


@dataclass
class ParallelCorpus:
    pairs: list[tuple[Sentence, Sentence]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[tuple[Sentence, Sentence]]:
        return iter(self.pairs)

    @property
    def sources(self) -> list[Sentence]:
        return [src for src, _ in self.pairs]

    @property
    def targets(self) -> list[Sentence]:
        return [tgt for _, tgt in self.pairs]

    @classmethod
    def read(cls, src_path: Path, tgt_path: Path) -> "ParallelCorpus":
        src_lines = read_lines(src_path)
        tgt_lines = read_lines(tgt_path)
        if len(src_lines) != len(tgt_lines):
            raise DataError(
                f"Line count mismatch: {src_path} has {len(src_lines)}, {tgt_path} has {len(tgt_lines)}"
            )
        pairs = [(tokenize(s), tokenize(t)) for s, t in zip(src_lines, tgt_lines)]
        kept = [(s, t) for s, t in pairs if s and t]
        if len(kept) != len(pairs):
            logger.warning("[DATA] dropped %d pairs with an empty side", len(pairs) - len(kept))
        return cls(kept)

    def save(self, src_path: Path, tgt_path: Path) -> None:
        Path(src_path).write_text("".join(" ".join(s) + "\n" for s in self.sources), encoding="utf-8")
        Path(tgt_path).write_text("".join(" ".join(t) + "\n" for t in self.targets), encoding="utf-8")

    def filter_by_length(self, max_length: int) -> "ParallelCorpus":
        """Drop pairs with more than ``max_length`` tokens on either side."""
        kept = [(s, t) for s, t in self.pairs if len(s) <= max_length and len(t) <= max_length]
        logger.info("[DATA] length filter <= %d kept %d of %d pairs", max_length, len(kept), len(self.pairs))
        return ParallelCorpus(kept)


def make_batches(
    lengths: list[int], batch_size: int, window: int, rng: np.random.Generator
) -> list[list[int]]:
    """Shuffle, sort by source length inside windows of ``window`` batches, chunk.

    Returns lists of example indices. Sentences are processed on their own
    tapes, so batches need no padding.
    """
    order = rng.permutation(len(lengths))
    span = max(1, batch_size * window)
    batches: list[list[int]] = []
    for start in range(0, len(order), span):
        chunk = sorted(order[start : start + span].tolist(), key=lambda k: (lengths[k], k))
        batches.extend(chunk[b : b + batch_size] for b in range(0, len(chunk), batch_size))
    shuffled = rng.permutation(len(batches))
    return [batches[k] for k in shuffled]

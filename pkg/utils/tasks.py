"""Synthetic translation tasks for desk-scale training runs."""

from enum import Enum

import numpy as np
from pydantic import BaseModel, Field, model_validator

from utils.corpus import ParallelCorpus

DIGIT_WORDS = ("zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine")


class TaskName(str, Enum):
    COPY = "copy"
    REVERSE = "reverse"
    DIGIT_TO_WORD = "digit-to-word"


class SyntheticTaskSettings(BaseModel):
    task: TaskName
    vocab_size: int = Field(default=10, gt=0)
    min_length: int = Field(default=3, gt=0)
    max_length: int = Field(default=10, gt=0)
    samples: int = Field(default=5000, gt=0)
    seed: int = 1

    @model_validator(mode="after")
    def check_lengths(self) -> "SyntheticTaskSettings":
        if self.min_length > self.max_length:
            raise ValueError("min_length must not exceed max_length")
        return self


def transform(task: TaskName, source: list[str]) -> list[str]:
    if task is TaskName.COPY:
        return list(source)
    if task is TaskName.REVERSE:
        return source[::-1]
    return [DIGIT_WORDS[int(tok)] for tok in source]


def generate_task(settings: SyntheticTaskSettings) -> ParallelCorpus:
    rng = np.random.default_rng(settings.seed)
    # digit-to-word reads single digits only
    alphabet = 10 if settings.task is TaskName.DIGIT_TO_WORD else settings.vocab_size
    alphabet = min(alphabet, settings.vocab_size)
    pairs = []
    for _ in range(settings.samples):
        length = int(rng.integers(settings.min_length, settings.max_length + 1))
        source = [str(int(tok)) for tok in rng.integers(0, alphabet, size=length)]
        pairs.append((source, transform(settings.task, source)))
    return ParallelCorpus(pairs)

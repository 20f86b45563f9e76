"""Run configuration: a flat ``key=value`` file validated into ``RunConfig``.

    # copy task, desk scale
    variant=2d-seq2seq
    hidden_size=32
    task=copy
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Literal, Mapping, Optional

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, model_validator

from core.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

Variant = Literal["attention", "2d-seq2seq", "2d-seq2seq-weighted", "coverage", "fertility"]
TaskChoice = Literal["copy", "reverse", "digit-to-word"]

TWOD_LR = 0.0005
ATTENTION_LR = 0.001


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    # model
    variant: Variant = "2d-seq2seq"
    hidden_size: int = Field(default=32, gt=0)
    embed_dim: int = Field(default=32, gt=0)
    fertility_cap: float = Field(default=2.0, gt=0)
    dtype: Literal["float64", "float32"] = "float64"

    # optimisation
    lr: Optional[float] = Field(default=None, ge=0)
    batch_size: int = Field(default=50, gt=0)
    dropout: float = Field(default=0.3, ge=0, lt=1)
    clip_threshold: float = Field(default=1.0, gt=0)
    seed: int = Field(default=1, ge=0)
    epochs: int = Field(default=20, gt=0)
    shuffle_window: int = Field(default=20, gt=0)
    keep_best: int = Field(default=4, gt=0)
    workers: int = Field(default=1, gt=0)
    log_wall_time: bool = False

    # data
    max_length: int = Field(default=50, gt=0)
    vocab_size: int = Field(default=30000, gt=4)
    task: Optional[TaskChoice] = None
    task_vocab_size: int = Field(default=10, gt=0)
    task_min_length: int = Field(default=3, gt=0)
    task_max_length: int = Field(default=10, gt=0)
    task_train_size: int = Field(default=2000, gt=0)
    task_dev_size: int = Field(default=100, gt=0)
    train_src: Optional[Path] = None
    train_tgt: Optional[Path] = None
    dev_src: Optional[Path] = None
    dev_tgt: Optional[Path] = None

    # decoding
    beam_size: int = Field(default=12, gt=0)
    max_decode_len: Optional[int] = Field(default=None, gt=0)

    _lr_defaulted: bool = PrivateAttr(default=False)

    @model_validator(mode="before")
    @classmethod
    def blank_lr_is_unset(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("lr") == "":
            data = {**data, "lr": None}
        return data

    @model_validator(mode="after")
    def default_lr(self) -> "RunConfig":
        if self.lr is None:
            self.lr = TWOD_LR if self.variant.startswith("2d") else ATTENTION_LR
            self._lr_defaulted = True
        return self

    @model_validator(mode="after")
    def check_sources(self) -> "RunConfig":
        paths = (self.train_src, self.train_tgt, self.dev_src, self.dev_tgt)
        if self.task is None and any(p is None for p in paths):
            raise ValueError("set either task or all of train_src, train_tgt, dev_src, dev_tgt")
        if self.task_min_length > self.task_max_length:
            raise ValueError("task_min_length must not exceed task_max_length")
        return self


def _raise_config_error(source: str, exc: ValidationError) -> None:
    problems = "; ".join(
        f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in exc.errors()
    )
    raise ConfigError(f"Invalid config {source}: {problems}") from None


def build_config(values: Mapping[str, Any], source: str = "<values>") -> RunConfig:
    try:
        return RunConfig(**dict(values))
    except ValidationError as exc:
        _raise_config_error(source, exc)


def parse_config(path: Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Config file not found: {path}")
    raw = dotenv_values(path, interpolate=False)
    empty = [key for key, value in raw.items() if value is None]
    if empty:
        raise ConfigError(f"Invalid config {path}: keys without a value: {', '.join(empty)}")
    return build_config(raw, str(path))


def apply_overrides(config: RunConfig, overrides: Mapping[str, Any]) -> RunConfig:
    """Command-line flags win over the file; every changed value is reported."""
    changed = {k: v for k, v in overrides.items() if v is not None}
    for key, value in changed.items():
        current = getattr(config, key)
        if current != value:
            logger.warning("[CONFIG] flag overrides %s: %r -> %r", key, current, value)
    if not changed:
        return config
    merged = config.model_dump()
    merged.update(changed)
    if config._lr_defaulted and "lr" not in changed:
        # re-derived from the variant after the overrides
        merged["lr"] = None
    return build_config(merged, "flags")


def to_lines(config: RunConfig) -> str:
    lines = []
    for key, value in config.model_dump(mode="json").items():
        if value is None:
            continue
        if isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def write_config(config: RunConfig, path: Path) -> Path:
    path = Path(path)
    path.write_text(to_lines(config), encoding="utf-8")
    return path


def config_hash(config: RunConfig) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

"""Checkpoint files: a plain-text manifest followed by a raw binary payload.

    NMT2D-CHECKPOINT 1
    dtype float64
    step 1200
    dev_ppl 1.0412
    config_hash 3f1c...
    params 2
    param out.W 20,32 0 5120
    param out.b 20 5120 160
    end
    <payload: little-endian IEEE-754 arrays in manifest order>

Offsets are relative to the first payload byte.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from core.errors import CheckpointCorruptError, DataError
from core.tensor import Tensor, resolve_dtype

logger = logging.getLogger(__name__)

MAGIC = "NMT2D-CHECKPOINT"
FORMAT_VERSION = 1
END_MARKER = b"end\n"


@dataclass
class Checkpoint:
    params: dict[str, Tensor]
    step: int = 0
    dev_ppl: Optional[float] = None
    config_hash: str = ""
    dtype: np.dtype = field(default_factory=lambda: np.dtype(np.float64))


def _format_float(value: Optional[float]) -> str:
    return "none" if value is None else repr(float(value))


def _manifest(ckpt: Checkpoint) -> tuple[bytes, list[bytes]]:
    dtype = resolve_dtype(ckpt.dtype)
    little = dtype.newbyteorder("<")
    lines = [
        f"{MAGIC} {FORMAT_VERSION}",
        f"dtype {dtype.name}",
        f"step {ckpt.step}",
        f"dev_ppl {_format_float(ckpt.dev_ppl)}",
        f"config_hash {ckpt.config_hash or 'none'}",
        f"params {len(ckpt.params)}",
    ]
    blobs: list[bytes] = []
    offset = 0
    for name, value in ckpt.params.items():
        blob = np.ascontiguousarray(value.data, dtype=little).tobytes()
        shape = ",".join(str(extent) for extent in value.shape)
        lines.append(f"param {name} {shape} {offset} {len(blob)}")
        blobs.append(blob)
        offset += len(blob)
    header = ("\n".join(lines) + "\n").encode("utf-8") + END_MARKER
    return header, blobs


def save_checkpoint(ckpt: Checkpoint, path: Path) -> Path:
    path = Path(path)
    header, blobs = _manifest(ckpt)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as handle:
        handle.write(header)
        for blob in blobs:
            handle.write(blob)
    logger.debug("[CKPT] wrote %s (%d params)", path, len(ckpt.params))
    return path


def _field(line: str, key: str) -> str:
    parts = line.split(" ", 1)
    if len(parts) != 2 or parts[0] != key:
        raise CheckpointCorruptError(f"Corrupt manifest: expected '{key}', got {line!r}")
    return parts[1]


def load_checkpoint(path: Path, dtype=None) -> Checkpoint:
    """Read a checkpoint; ``dtype`` may widen float32 files to float64."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"Checkpoint not found: {path}")
    raw = path.read_bytes()
    end = raw.find(b"\n" + END_MARKER)
    if end < 0:
        raise CheckpointCorruptError(f"Corrupt manifest in {path}: no end marker")
    payload = raw[end + 1 + len(END_MARKER) :]
    try:
        lines = raw[:end].decode("utf-8").split("\n")
    except UnicodeDecodeError as exc:
        raise CheckpointCorruptError(f"Corrupt manifest in {path}: {exc}") from exc

    try:
        magic, version = lines[0].split(" ")
        if magic != MAGIC:
            raise CheckpointCorruptError(f"{path} is not a checkpoint file")
        if int(version) != FORMAT_VERSION:
            raise CheckpointCorruptError(f"Unsupported checkpoint version {version} in {path}")
        file_dtype = resolve_dtype(_field(lines[1], "dtype"))
        step = int(_field(lines[2], "step"))
        ppl_text = _field(lines[3], "dev_ppl")
        dev_ppl = None if ppl_text == "none" else float(ppl_text)
        config_hash = _field(lines[4], "config_hash")
        count = int(_field(lines[5], "params"))
        entries = lines[6:]
    except (ValueError, IndexError) as exc:
        raise CheckpointCorruptError(f"Corrupt manifest in {path}: {exc}") from exc
    if len(entries) != count:
        raise CheckpointCorruptError(f"Manifest lists {len(entries)} params, header says {count}")

    target = resolve_dtype(dtype) if dtype is not None else file_dtype
    if target.itemsize < file_dtype.itemsize:
        raise DataError(f"Refusing to narrow {file_dtype.name} checkpoint to {target.name}")

    little = file_dtype.newbyteorder("<")
    params: dict[str, Tensor] = {}
    expected_offset = 0
    for entry in entries:
        try:
            _, name, shape_text, offset_text, nbytes_text = entry.split(" ")
            shape = tuple(int(x) for x in shape_text.split(",")) if shape_text else ()
            offset, nbytes = int(offset_text), int(nbytes_text)
        except ValueError as exc:
            raise CheckpointCorruptError(f"Corrupt param entry {entry!r}") from exc
        if offset != expected_offset or nbytes != int(np.prod(shape)) * file_dtype.itemsize:
            raise CheckpointCorruptError(f"Offset mismatch for {name} in {path}")
        if offset + nbytes > len(payload):
            raise CheckpointCorruptError(f"Truncated payload in {path} at {name}")
        values = np.frombuffer(payload, dtype=little, count=int(np.prod(shape)), offset=offset)
        params[name] = Tensor(values.reshape(shape).astype(target))
        expected_offset += nbytes
    if expected_offset != len(payload):
        raise CheckpointCorruptError(f"Trailing bytes after payload in {path}")

    return Checkpoint(
        params=params,
        step=step,
        dev_ppl=dev_ppl,
        config_hash="" if config_hash == "none" else config_hash,
        dtype=target,
    )

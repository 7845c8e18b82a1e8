"""On-disk formats: JSON documents and the packed sequence dataset file."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Union

import numpy as np

from mmvp.errors import (
    BadMagicError,
    DatasetError,
    TruncatedPayloadError,
    UnsupportedDtypeError,
    UnsupportedVersionError,
)


PathLike = Union[str, Path]

DATASET_MAGIC = b"MMVP"
DATASET_VERSION = 1
DTYPE_U8 = 0
HEADER = struct.Struct("<4sIIIIIIB")


# ─── JSON documents ─────────────────────────────────────────────────────────


def load_json(path: PathLike, default: Any = None) -> Any:
    """Load a UTF-8 JSON document, returning default if the file is absent or blank."""
    path = Path(path)
    text = path.read_text(encoding="utf-8") if path.exists() else ""
    if not text.strip():
        return default if default is not None else {}
    return json.loads(text)


def save_json(path: PathLike, data: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, default=str)


# ─── Sequence datasets ──────────────────────────────────────────────────────


@dataclass(frozen=True)
class DatasetHeader:
    num_sequences: int
    seq_len: int
    height: int
    width: int
    channels: int
    version: int = DATASET_VERSION
    dtype: int = DTYPE_U8

    @property
    def payload_size(self) -> int:
        return self.num_sequences * self.seq_len * self.height * self.width * self.channels

    def pack(self) -> bytes:
        return HEADER.pack(
            DATASET_MAGIC, self.version, self.num_sequences, self.seq_len,
            self.height, self.width, self.channels, self.dtype,
        )


@dataclass
class SequenceDataset:
    """Video sequences stored as u8, shape (num_sequences, seq_len, C, H, W)."""

    frames: np.ndarray

    def __post_init__(self):
        if self.frames.ndim != 5:
            raise DatasetError(f"dataset frames must be (N, T, C, H, W), got {self.frames.shape}")
        if self.frames.dtype != np.uint8:
            raise DatasetError(f"dataset frames must be uint8, got {self.frames.dtype}")

    def __len__(self) -> int:
        return self.frames.shape[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, SequenceDataset) and np.array_equal(self.frames, other.frames)

    @property
    def header(self) -> DatasetHeader:
        n, t, c, h, w = self.frames.shape
        return DatasetHeader(num_sequences=n, seq_len=t, height=h, width=w, channels=c)

    @property
    def seq_len(self) -> int:
        return self.frames.shape[1]

    def sequence(self, i: int) -> np.ndarray:
        """Sequence ``i`` as float32 in [0, 1], (T, C, H, W)."""
        return self.frames[i].astype(np.float32) / 255.0

    def as_float(self) -> np.ndarray:
        return self.frames.astype(np.float32) / 255.0

    @classmethod
    def from_float(cls, frames: np.ndarray) -> "SequenceDataset":
        """Quantise [0, 1] floats back to u8."""
        return cls(np.round(np.clip(frames, 0.0, 1.0) * 255.0).astype(np.uint8))


def write_dataset(ds: SequenceDataset, path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(ds.header.pack())
        f.write(np.ascontiguousarray(ds.frames).tobytes())


def read_dataset(path: PathLike) -> SequenceDataset:
    """Read and validate a dataset file."""
    blob = Path(path).read_bytes()
    if len(blob) < HEADER.size:
        raise TruncatedPayloadError(f"{path}: file is shorter than the {HEADER.size}-byte header")
    magic, version, n, t, h, w, c, dtype = HEADER.unpack_from(blob)
    if magic != DATASET_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {DATASET_MAGIC!r}")
    if version != DATASET_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported dataset version {version}")
    if dtype != DTYPE_U8:
        raise UnsupportedDtypeError(f"{path}: unsupported dtype code {dtype}")

    header = DatasetHeader(num_sequences=n, seq_len=t, height=h, width=w, channels=c)
    payload = len(blob) - HEADER.size
    if payload != header.payload_size:
        raise TruncatedPayloadError(
            f"{path}: truncated payload, header declares {header.payload_size} bytes, found {payload}"
        )
    frames = np.frombuffer(blob, dtype=np.uint8, offset=HEADER.size).reshape(n, t, c, h, w)
    return SequenceDataset(frames.copy())

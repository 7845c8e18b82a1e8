"""Named-tensor checkpoint archive ("MMCK") with parameters and optimizer state.

Layout, little-endian: magic, version u32, tensor count u32, then per tensor
name length u32, UTF-8 name, rank u32, dims u32[rank], float32 payload.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from mmvp.blocks import Params
from mmvp.config import TrainConfig, parse_config
from mmvp.errors import CheckpointError, CheckpointMagicError, CheckpointShapeError, CheckpointTruncatedError
from mmvp.model import init_params
from mmvp.optim import AdamState
from mmvp.storage import PathLike
from mmvp.tensor import Tensor


MAGIC = b"MMCK"
VERSION = 1

PARAM = "param/"
ADAM_M = "adam.m/"
ADAM_V = "adam.v/"

# Counters are stored as little-endian 16-bit words; float32 holds each exactly.
COUNTER_WORDS = 4
WORD_BITS = 16


@dataclass
class TrainState:
    """Everything needed to continue training.

    ``epoch`` is the epoch in progress and ``batch`` the next batch of it to run;
    ``epoch_losses`` holds the losses of the batches of ``epoch`` already applied.
    """

    config: TrainConfig
    params: Params
    adam: AdamState
    epoch: int = 0
    batch: int = 0
    epoch_losses: list = field(default_factory=list)


def _config_bytes(config: TrainConfig) -> np.ndarray:
    text = json.dumps(config.to_document(), sort_keys=True)
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float32)


def encode_counter(value: int) -> np.ndarray:
    """Non-negative integer below 2**64 as COUNTER_WORDS float32 words, low word first."""
    value = int(value)
    if not 0 <= value < 1 << (COUNTER_WORDS * WORD_BITS):
        raise CheckpointError(f"counter {value} does not fit in {COUNTER_WORDS * WORD_BITS} bits")
    mask = (1 << WORD_BITS) - 1
    return np.array([(value >> (WORD_BITS * k)) & mask for k in range(COUNTER_WORDS)], dtype=np.float32)


def decode_counter(words: np.ndarray, key: str = "counter") -> int:
    ints = words.astype(np.int64)
    if words.shape != (COUNTER_WORDS,) or np.any(ints != words) or np.any((ints < 0) | (ints >> WORD_BITS != 0)):
        raise CheckpointError(f"malformed {key}: expected {COUNTER_WORDS} 16-bit words, got {words.tolist()}")
    return sum(int(w) << (WORD_BITS * k) for k, w in enumerate(ints))


def state_tensors(state: TrainState) -> dict[str, np.ndarray]:
    if len(state.epoch_losses) != state.batch:
        raise CheckpointError(f"{len(state.epoch_losses)} epoch losses recorded for {state.batch} batches")
    tensors = {}
    for name, p in state.params.items():
        tensors[PARAM + name] = p.data
    for name in state.params:
        tensors[ADAM_M + name] = state.adam.m[name]
        tensors[ADAM_V + name] = state.adam.v[name]
    tensors["meta/step"] = encode_counter(state.adam.step)
    tensors["meta/epoch"] = encode_counter(state.epoch)
    tensors["meta/batch"] = encode_counter(state.batch)
    tensors["meta/epoch_losses"] = np.asarray(state.epoch_losses, dtype=np.float32).reshape(-1)
    tensors["meta/config"] = _config_bytes(state.config)
    return tensors


def write_tensors(path: PathLike, tensors: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))


def read_tensors(path: PathLike) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointTruncatedError(f"{path}: truncated checkpoint at byte {pos}")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise CheckpointMagicError(f"{path}: bad magic, not an MMCK checkpoint")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")

    tensors = {}
    for _ in range(count):
        (length,) = struct.unpack("<I", take(4))
        name = take(length).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims, dtype=np.int64))
        tensors[name] = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
    if pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - pos} trailing bytes after the last tensor")
    return tensors


def save_checkpoint(path: PathLike, state: TrainState) -> None:
    write_tensors(path, state_tensors(state))


def load_checkpoint(path: PathLike, config: Optional[TrainConfig] = None) -> TrainState:
    """Read a checkpoint; with ``config`` given, parameter shapes are checked against it."""
    tensors = read_tensors(path)
    for key in ("meta/step", "meta/epoch", "meta/batch", "meta/epoch_losses", "meta/config"):
        if key not in tensors:
            raise CheckpointError(f"{path}: missing {key}")
    try:
        step, epoch, batch = (decode_counter(tensors[f"meta/{k}"], f"meta/{k}") for k in ("step", "epoch", "batch"))
    except CheckpointError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    epoch_losses = [float(v) for v in tensors["meta/epoch_losses"].reshape(-1)]
    if len(epoch_losses) != batch:
        raise CheckpointError(f"{path}: {len(epoch_losses)} epoch losses recorded for {batch} batches")

    stored_config = parse_config(json.loads(bytes(tensors["meta/config"].astype(np.uint8)).decode("utf-8")))
    config = config or stored_config

    expected = {name: p.shape for name, p in init_params(config.model).items()}
    stored = {key[len(PARAM):] for key in tensors if key.startswith(PARAM)}
    missing = sorted(set(expected) - stored)
    if missing:
        raise CheckpointError(f"{path}: missing parameter {missing[0]!r}")
    extra = sorted(stored - set(expected))
    if extra:
        raise CheckpointError(f"{path}: parameter {extra[0]!r} is not part of this model")

    params: Params = {}
    adam = AdamState(step=step)
    for name, shape in expected.items():
        for prefix in (PARAM, ADAM_M, ADAM_V):
            key = prefix + name
            if key not in tensors:
                raise CheckpointError(f"{path}: missing {key}")
            if tensors[key].shape != shape:
                raise CheckpointShapeError(key, shape, tensors[key].shape)
        params[name] = Tensor(tensors[PARAM + name], requires_grad=True)
        adam.m[name] = tensors[ADAM_M + name]
        adam.v[name] = tensors[ADAM_V + name]
    return TrainState(
        config=config, params=params, adam=adam, epoch=epoch, batch=batch, epoch_losses=epoch_losses
    )

"""Network building blocks: pixel (un)shuffle, conv layers and RRDBs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from mmvp.errors import ShapeError
from mmvp.tensor import Tensor, concat, conv2d, conv3d, leaky_relu, reshape, scale, transpose


LEAKY_SLOPE = 0.2

Params = dict[str, Tensor]


# ─── Pixel shuffle ──────────────────────────────────────────────────────────


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Space-to-depth: out[n, c*r*r + dy*r + dx, y, x] = in[n, c, y*r + dy, x*r + dx]."""
    if x.ndim != 4:
        raise ShapeError(f"pixel_unshuffle expects (N, C, H, W), got {x.shape}")
    n, c, h, w = x.shape
    if r < 1 or h % r or w % r:
        raise ShapeError(f"pixel_unshuffle: H={h}, W={w} not divisible by r={r}")
    if r == 1:
        return x
    y = reshape(x, (n, c, h // r, r, w // r, r))
    y = transpose(y, (0, 1, 3, 5, 2, 4))
    return reshape(y, (n, c * r * r, h // r, w // r))


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Depth-to-space, the exact inverse of pixel_unshuffle."""
    if x.ndim != 4:
        raise ShapeError(f"pixel_shuffle expects (N, C, H, W), got {x.shape}")
    n, c, h, w = x.shape
    if r < 1 or c % (r * r):
        raise ShapeError(f"pixel_shuffle: {c} channels not divisible by r^2={r * r}")
    if r == 1:
        return x
    y = reshape(x, (n, c // (r * r), r, r, h, w))
    y = transpose(y, (0, 1, 4, 2, 5, 3))
    return reshape(y, (n, c // (r * r), h * r, w * r))


@dataclass(frozen=True)
class ShuffleSpec:
    factor: int

    def __post_init__(self):
        if self.factor < 1:
            raise ValueError(f"shuffle factor must be >= 1, got {self.factor}")

    def unshuffle(self, x: Tensor) -> Tensor:
        return pixel_unshuffle(x, self.factor)

    def shuffle(self, x: Tensor) -> Tensor:
        return pixel_shuffle(x, self.factor)


# ─── Conv layers ────────────────────────────────────────────────────────────


def init_conv(
    params: Params,
    rng: np.random.Generator,
    name: str,
    c_in: int,
    c_out: int,
    kernel: int = 3,
    nd: int = 2,
    zero: bool = False,
) -> None:
    """Add ``<name>.weight`` and ``<name>.bias`` to ``params``."""
    shape = (c_out, c_in) + (kernel,) * nd
    if zero:
        weight = np.zeros(shape, dtype=np.float32)
    else:
        bound = 0.5 * math.sqrt(6.0 / (c_in * kernel**nd))
        weight = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    params[f"{name}.weight"] = Tensor(weight, requires_grad=True)
    params[f"{name}.bias"] = Tensor(np.zeros(c_out, dtype=np.float32), requires_grad=True)


def conv(params: Params, name: str, x: Tensor, stride: int = 1) -> Tensor:
    """Apply the named conv with 'same' padding (2D or 3D by weight rank)."""
    weight = params[f"{name}.weight"]
    op = conv2d if weight.ndim == 4 else conv3d
    return op(x, weight, params[f"{name}.bias"], stride=stride, padding=weight.shape[-1] // 2)


# ─── RRDB ───────────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class RrdbBlock:
    """Residual-in-residual dense block layout.

    ``dense_blocks`` dense blocks of ``layers`` 3x3 convs each; every conv
    sees the block input concatenated with all earlier outputs of the same
    dense block. The last conv of a dense block maps back to ``channels``
    and is zero-initialised, so a fresh block is the identity.
    """

    channels: int
    layers: int = 3
    dense_blocks: int = 2
    beta: float = 0.2
    growth: Optional[int] = None

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"residual scale must lie in (0, 1], got {self.beta}")
        if self.layers < 1 or self.dense_blocks < 1:
            raise ValueError("RRDB needs at least one layer and one dense block")

    @property
    def growth_channels(self) -> int:
        return self.growth if self.growth is not None else max(4, self.channels // 2)

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(c_in, c_out) of every conv in one dense block."""
        g = self.growth_channels
        shapes = [(self.channels + i * g, g) for i in range(self.layers - 1)]
        shapes.append((self.channels + (self.layers - 1) * g, self.channels))
        return shapes


def init_rrdb(params: Params, rng: np.random.Generator, prefix: str, block: RrdbBlock) -> None:
    last = block.layers - 1
    for b in range(block.dense_blocks):
        for i, (c_in, c_out) in enumerate(block.layer_shapes()):
            init_conv(params, rng, f"{prefix}.d{b}.c{i}", c_in, c_out, zero=(i == last))


def rrdb_forward(x: Tensor, params: Params, prefix: str, block: RrdbBlock) -> Tensor:
    """x + beta * F(x), F being the sum of the dense-block residuals."""
    if x.ndim != 4 or x.shape[1] != block.channels:
        raise ShapeError(f"RRDB {prefix!r} expects {block.channels} channels, got input {x.shape}")
    last = block.layers - 1
    y = x
    for b in range(block.dense_blocks):
        feats = [y]
        for i in range(block.layers):
            inp = feats[0] if len(feats) == 1 else concat(feats, axis=1)
            h = conv(params, f"{prefix}.d{b}.c{i}", inp)
            if i < last:
                feats.append(leaky_relu(h, LEAKY_SLOPE))
        y = y + scale(h, block.beta)
    return y

"""Deterministic bouncing-sprite sequences, a stand-in for Moving MNIST."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from mmvp.errors import DatasetError
from mmvp.storage import SequenceDataset


MASK64 = 0xFFFFFFFFFFFFFFFF
GLYPH_SIZE = 16
GLYPH_NAMES = ("disk", "ring", "square", "frame", "cross", "x", "triangle", "diamond", "hbar", "vbar")
DEFAULT_SPEED = (2.0, 4.0)


class Prng:
    """splitmix64; identical seeds give identical streams everywhere."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Float in [0, 1) from the top 53 bits of next()."""
        return (self.next() >> 11) / 2.0**53

    def below(self, n: int) -> int:
        return min(int(self.uniform() * n), n - 1)

    def shuffle(self, items: list) -> list:
        """Fisher-Yates in place; returns ``items``."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items


def splitmix(value: int) -> int:
    """First splitmix64 output for seed ``value``."""
    return Prng(value).next()


def derive_seed(seed: int, index: int) -> int:
    """Per-item seed, independent of how many items are generated or in what order."""
    return (seed ^ splitmix(index)) & MASK64


# ─── Glyphs ─────────────────────────────────────────────────────────────────


def _glyph(name: str) -> np.ndarray:
    n = GLYPH_SIZE
    y, x = np.mgrid[0:n, 0:n].astype(np.float64)
    cy = cx = (n - 1) / 2.0
    r = np.hypot(y - cy, x - cx)
    if name == "disk":
        mask = r <= 6.5
    elif name == "ring":
        mask = (r <= 7.0) & (r >= 4.5)
    elif name == "square":
        mask = (np.abs(y - cy) <= 5.5) & (np.abs(x - cx) <= 5.5)
    elif name == "frame":
        edge = np.maximum(np.abs(y - cy), np.abs(x - cx))
        mask = (edge <= 7.0) & (edge >= 5.0)
    elif name == "cross":
        mask = (np.abs(y - cy) <= 1.5) | (np.abs(x - cx) <= 1.5)
    elif name == "x":
        mask = (np.abs(y - x) <= 1.5) | (np.abs(y + x - (n - 1)) <= 1.5)
    elif name == "triangle":
        mask = (y >= 2) & (y <= 13) & (np.abs(x - cx) <= (y - 2) * 0.6 + 0.5)
    elif name == "diamond":
        mask = np.abs(y - cy) + np.abs(x - cx) <= 7.0
    elif name == "hbar":
        mask = np.abs(y - cy) <= 2.5
    elif name == "vbar":
        mask = np.abs(x - cx) <= 2.5
    else:
        raise DatasetError(f"unknown glyph {name!r}")
    return mask.astype(np.float64)


GLYPHS = np.stack([_glyph(name) for name in GLYPH_NAMES])


# ─── Sprites ────────────────────────────────────────────────────────────────


@dataclass
class SpriteSpec:
    glyph_id: int
    x: float
    y: float
    vx: float
    vy: float

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)


def reflect(pos: float, vel: float, limit: float) -> tuple[float, float]:
    """Fold ``pos`` back into [0, limit], flipping ``vel`` at every bounce."""
    if limit <= 0:
        return 0.0, vel
    while pos < 0 or pos > limit:
        if pos < 0:
            pos, vel = -pos, -vel
        else:
            pos, vel = 2 * limit - pos, -vel
    return pos, vel


def sample_sprites(rng: Prng, n_sprites: int, height: int, width: int, speed=DEFAULT_SPEED) -> list[SpriteSpec]:
    """Draw glyph, x, y, angle and speed per sprite, in that order."""
    lo, hi = speed
    sprites = []
    for _ in range(n_sprites):
        glyph_id = rng.below(len(GLYPHS))
        x = rng.uniform() * (width - GLYPH_SIZE)
        y = rng.uniform() * (height - GLYPH_SIZE)
        angle = rng.uniform() * 2.0 * math.pi
        s = lo + (hi - lo) * rng.uniform()
        sprites.append(SpriteSpec(glyph_id, x, y, s * math.cos(angle), s * math.sin(angle)))
    return sprites


def step_sprite(sprite: SpriteSpec, height: int, width: int) -> None:
    sprite.x, sprite.vx = reflect(sprite.x + sprite.vx, sprite.vx, width - GLYPH_SIZE)
    sprite.y, sprite.vy = reflect(sprite.y + sprite.vy, sprite.vy, height - GLYPH_SIZE)


def render(sprites: list[SpriteSpec], height: int, width: int) -> np.ndarray:
    """u8 frame with per-pixel max over sprites."""
    frame = np.zeros((height, width), dtype=np.float64)
    for s in sprites:
        top, left = int(round(s.y)), int(round(s.x))
        patch = frame[top:top + GLYPH_SIZE, left:left + GLYPH_SIZE]
        np.maximum(patch, GLYPHS[s.glyph_id], out=patch)
    return np.round(frame * 255.0).astype(np.uint8)


def generate_sequence(seed: int, seq_len: int, height: int, width: int, n_sprites: int, speed=DEFAULT_SPEED) -> np.ndarray:
    """One (seq_len, 1, H, W) u8 sequence."""
    rng = Prng(seed)
    sprites = sample_sprites(rng, n_sprites, height, width, speed)
    frames = np.empty((seq_len, 1, height, width), dtype=np.uint8)
    for t in range(seq_len):
        if t:
            for s in sprites:
                step_sprite(s, height, width)
        frames[t, 0] = render(sprites, height, width)
    return frames


def generate_sequences(
    seed: int,
    count: int,
    seq_len: int,
    height: int,
    width: int,
    n_sprites: int,
    speed=DEFAULT_SPEED,
) -> SequenceDataset:
    """``count`` sequences; sequence i uses its own derived seed."""
    if height < GLYPH_SIZE or width < GLYPH_SIZE:
        raise DatasetError(f"{GLYPH_SIZE}x{GLYPH_SIZE} glyphs do not fit {height}x{width} frames")
    if count < 1 or seq_len < 1 or n_sprites < 1:
        raise DatasetError("count, seq_len and n_sprites must be positive")
    lo, hi = speed
    if lo < 0 or hi < lo:
        raise DatasetError(f"bad speed range {speed}")

    frames = np.stack([
        generate_sequence(derive_seed(seed, i), seq_len, height, width, n_sprites, speed)
        for i in range(count)
    ])
    return SequenceDataset(frames)

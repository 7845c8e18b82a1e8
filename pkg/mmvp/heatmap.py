"""Predicted motion-matrix heatmaps written as binary PGM images."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np

from mmvp.checkpoint import TrainState
from mmvp.errors import DatasetError, ShapeError
from mmvp.model import run_pipeline
from mmvp.storage import PathLike, SequenceDataset
from mmvp.tensor import Tensor


MID_GRAY = 128
OVERLAY_ALPHA = 0.5


def render_heatmap(heat: np.ndarray, height: int, width: int) -> np.ndarray:
    """Min-max scale an (h, w) heatmap to u8 and nearest-upsample it to H x W.

    A constant heatmap has no range and renders as mid-gray.
    """
    heat = np.asarray(heat, dtype=np.float64)
    if heat.ndim != 2:
        raise ShapeError(f"heatmap must be (h, w), got {heat.shape}")
    h, w = heat.shape
    if height % h or width % w:
        raise ShapeError(f"a {h}x{w} heatmap does not tile {height}x{width}")

    lo, hi = heat.min(), heat.max()
    if hi - lo <= 0.0:
        img = np.full(heat.shape, MID_GRAY, dtype=np.uint8)
    else:
        img = np.rint((heat - lo) / (hi - lo) * 255.0).astype(np.uint8)
    return img.repeat(height // h, axis=0).repeat(width // w, axis=1)


def overlay(img: np.ndarray, frame: np.ndarray, alpha: float = OVERLAY_ALPHA) -> np.ndarray:
    """Blend a u8 heatmap over a float frame (C, H, W) in [0, 1], channels averaged."""
    base = np.clip(np.asarray(frame, dtype=np.float64).mean(axis=0), 0.0, 1.0) * 255.0
    mixed = alpha * img.astype(np.float64) + (1.0 - alpha) * base
    return np.clip(np.rint(mixed), 0, 255).astype(np.uint8)


def write_pgm(path: PathLike, img: np.ndarray) -> None:
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ShapeError(f"PGM payload must be a 2D u8 array, got {img.shape} {img.dtype}")
    h, w = img.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def patch_heatmaps(state: TrainState, observed: np.ndarray, patch: tuple[int, int]) -> list[np.ndarray]:
    """Normalised predicted matrix rows for ``patch``, one (h, w) map per future step."""
    m = state.config.model
    gh, gw = m.grid
    ph, pw = patch
    if not (0 <= ph < gh and 0 <= pw < gw):
        raise ShapeError(f"patch ({ph}, {pw}) is outside the {gh}x{gw} matrix grid")
    dtype = next(iter(state.params.values())).dtype
    result = run_pipeline(Tensor(observed, dtype=dtype), state.params, m)
    return [mat.values.data[0, ph, pw] for mat in result.predicted_matrices]


def dump_heatmaps(
    state: TrainState,
    dataset: SequenceDataset,
    seq_index: int,
    patch: tuple[int, int],
    out_dir: PathLike,
) -> list[Path]:
    """Write heatmap_<j>.pgm for every future step, overlays under overlay/ when
    the sequence holds the ground-truth future frames."""
    m = state.config.model
    if not 0 <= seq_index < len(dataset):
        raise DatasetError(f"sequence {seq_index} is out of range for {len(dataset)} sequences")
    seq = dataset.sequence(seq_index)
    if seq.shape[0] < m.t_observed:
        raise DatasetError(f"sequence has {seq.shape[0]} frames, {m.t_observed} observed frames are needed")

    out = Path(out_dir)
    future: Optional[np.ndarray] = None
    if seq.shape[0] >= m.t_observed + m.t_future:
        future = seq[m.t_observed:m.t_observed + m.t_future]

    written = []
    for j, heat in enumerate(patch_heatmaps(state, seq[:m.t_observed], patch)):
        img = render_heatmap(heat, m.height, m.width)
        path = out / f"heatmap_{j}.pgm"
        write_pgm(path, img)
        written.append(path)
        if future is not None:
            write_pgm(out / "overlay" / f"heatmap_{j}.pgm", overlay(img, future[j]))
    return written

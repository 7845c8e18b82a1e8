"""Image-quality metrics and the SSIM-based difficulty evaluation protocol.

All metrics work on float frames in [0, L] with L = 1.0 by default.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

from mmvp.errors import DatasetError, ShapeError
from mmvp.storage import SequenceDataset


DATA_RANGE = 1.0
PSNR_CAP = 100.0
SSIM_WINDOW = 7
EASY_SSIM = 0.9
HARD_SSIM = 0.6
SUBSETS = ("easy", "intermediate", "hard")

Predictor = Callable[[np.ndarray], np.ndarray]


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    return pred, gt


def psnr(pred, gt, data_range: float = DATA_RANGE) -> float:
    """10 log10(L^2 / MSE) in dB, capped at 100 for (near) zero error."""
    pred, gt = _pair(pred, gt)
    if float(np.mean((pred - gt) ** 2)) < 1e-10:
        return PSNR_CAP
    return float(peak_signal_noise_ratio(gt, pred, data_range=data_range))


def _ssim_plane(a: np.ndarray, b: np.ndarray, data_range: float) -> float:
    if min(a.shape) < SSIM_WINDOW:
        raise ShapeError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    # uniform 7x7 window, population statistics, mean over the valid region
    return float(structural_similarity(
        a, b, win_size=SSIM_WINDOW, gaussian_weights=False, use_sample_covariance=False, data_range=data_range
    ))


def ssim(pred, gt, data_range: float = DATA_RANGE) -> float:
    """Mean SSIM over 7x7 uniform windows (valid region); channels are averaged.

    Accepts (H, W) or (C, H, W).
    """
    pred, gt = _pair(pred, gt)
    if pred.ndim == 2:
        return _ssim_plane(pred, gt, data_range)
    if pred.ndim != 3:
        raise ShapeError(f"SSIM expects (H, W) or (C, H, W), got {pred.shape}")
    return math.fsum(_ssim_plane(p, g, data_range) for p, g in zip(pred, gt)) / pred.shape[0]


def frame_mse_sums(pred_seq, gt_seq) -> np.ndarray:
    """Per-frame pixel sum of squared error for (T, ...) sequences."""
    pred, gt = _pair(pred_seq, gt_seq)
    diff = (pred - gt).reshape(pred.shape[0], -1)
    return (diff * diff).sum(axis=1)


def mse_sum(pred_seq, gt_seq) -> float:
    """Frame-sum MSE averaged over frames."""
    sums = frame_mse_sums(pred_seq, gt_seq)
    return math.fsum(sums) / len(sums)


def difficulty_label(s: float) -> str:
    if s >= EASY_SSIM:
        return "easy"
    if s < HARD_SSIM:
        return "hard"
    return "intermediate"


def split_difficulty(last_observed, first_future) -> str:
    """Subset of a sequence by SSIM between its last observed and first future frame."""
    return difficulty_label(ssim(last_observed, first_future))


# ─── Reports ────────────────────────────────────────────────────────────────


@dataclass
class SequenceScore:
    index: int
    psnr: float
    ssim: float
    mse_sum: float
    subset: str


def _mean(values: list[float]) -> Optional[float]:
    return math.fsum(values) / len(values) if values else None


def _aggregate(scores: list[SequenceScore]) -> dict:
    return {
        "psnr": _mean([s.psnr for s in scores]),
        "ssim": _mean([s.ssim for s in scores]),
        "mse_sum": _mean([s.mse_sum for s in scores]),
    }


@dataclass
class MetricReport:
    sequences: list[SequenceScore]
    baseline: list[SequenceScore] = field(default_factory=list)
    data_range: float = DATA_RANGE

    def aggregate(self, subset: Optional[str] = None, baseline: bool = False) -> dict:
        scores = self.baseline if baseline else self.sequences
        if subset is not None:
            scores = [s for s in scores if s.subset == subset]
        return _aggregate(scores)

    def counts(self) -> dict:
        return {name: sum(1 for s in self.sequences if s.subset == name) for name in SUBSETS}

    def _section(self, baseline: bool) -> dict:
        return {
            "full": self.aggregate(baseline=baseline),
            "subset": {name: self.aggregate(name, baseline) for name in SUBSETS},
        }

    def to_document(self) -> dict:
        doc = {
            "header": {"data_range": self.data_range, "psnr_cap": PSNR_CAP, "ssim_window": SSIM_WINDOW},
            **self.aggregate(),
            "subset": self._section(False)["subset"],
            "counts": self.counts(),
            "sequences": [asdict(s) for s in self.sequences],
        }
        if self.baseline:
            doc["baseline"] = self._section(True)
        return doc


def score_sequence(index: int, pred: np.ndarray, future: np.ndarray, last_observed: np.ndarray) -> SequenceScore:
    """Metrics for one predicted sequence, (T', C, H, W) against ground truth."""
    _pair(pred, future)
    return SequenceScore(
        index=index,
        psnr=math.fsum(psnr(p, g) for p, g in zip(pred, future)) / len(pred),
        ssim=math.fsum(ssim(p, g) for p, g in zip(pred, future)) / len(pred),
        mse_sum=mse_sum(pred, future),
        subset=split_difficulty(last_observed, future[0]),
    )


def repeat_last_frame(observed: np.ndarray, t_future: int) -> np.ndarray:
    return np.repeat(observed[-1:], t_future, axis=0)


def evaluate(
    predictor: Predictor,
    dataset: SequenceDataset,
    t_observed: int,
    t_future: int,
    workers: int = 1,
) -> MetricReport:
    """Score ``predictor`` and the repeat-last-frame baseline on every sequence.

    ``predictor`` maps observed frames (T, C, H, W) in [0, 1] to (T', C, H, W).
    It must be safe to call from several threads when ``workers`` > 1.
    """
    return _score_all(lambda i, observed: predictor(observed), dataset, t_observed, t_future, workers)


def _score_all(
    predictions: Callable[[int, np.ndarray], np.ndarray],
    dataset: SequenceDataset,
    t_observed: int,
    t_future: int,
    workers: int = 1,
) -> MetricReport:
    if dataset.seq_len < t_observed + t_future:
        raise DatasetError(
            f"sequences have {dataset.seq_len} frames, {t_observed} + {t_future} are needed"
        )

    def job(i: int) -> tuple[SequenceScore, SequenceScore]:
        seq = dataset.sequence(i)
        observed, future = seq[:t_observed], seq[t_observed:t_observed + t_future]
        pred = np.asarray(predictions(i, observed))
        last = observed[-1]
        return (
            score_sequence(i, pred, future, last),
            score_sequence(i, repeat_last_frame(observed, t_future), future, last),
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, range(len(dataset))))
    else:
        results = [job(i) for i in range(len(dataset))]
    return MetricReport(sequences=[r[0] for r in results], baseline=[r[1] for r in results])


def evaluate_predictions(pred: SequenceDataset, gt: SequenceDataset, t_observed: int) -> MetricReport:
    """Score stored predictions (T' frames per sequence) against a ground-truth dataset."""
    t_future = pred.seq_len
    if len(pred) != len(gt):
        raise DatasetError(f"{len(pred)} predicted sequences for {len(gt)} ground-truth sequences")
    stored = pred.as_float()
    return _score_all(lambda i, observed: stored[i], gt, t_observed, t_future)

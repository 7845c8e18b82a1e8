"""Tests for PSNR, SSIM, frame-sum MSE and the difficulty-split evaluation."""

import math

import numpy as np
import pytest

from mmvp.errors import DatasetError, ShapeError
from mmvp.metrics import (
    PSNR_CAP,
    SUBSETS,
    difficulty_label,
    evaluate,
    evaluate_predictions,
    frame_mse_sums,
    mse_sum,
    psnr,
    repeat_last_frame,
    split_difficulty,
    ssim,
)
from mmvp.storage import SequenceDataset
from mmvp.synth import generate_sequences


def ssim_oracle(a, b, data_range=1.0):
    """Direct per-window formula, written without shared helpers."""
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    values = []
    for y in range(a.shape[0] - 6):
        for x in range(a.shape[1] - 6):
            wa = a[y:y + 7, x:x + 7].ravel()
            wb = b[y:y + 7, x:x + 7].ravel()
            ma, mb = wa.mean(), wb.mean()
            va = ((wa - ma) ** 2).mean()
            vb = ((wb - mb) ** 2).mean()
            cov = ((wa - ma) * (wb - mb)).mean()
            values.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return sum(values) / len(values)


class TestPsnr:
    def test_identical_is_capped(self):
        x = np.random.default_rng(0).random((8, 8))
        assert psnr(x, x) == PSNR_CAP

    def test_known_values(self):
        gt = np.zeros((4, 4))
        assert psnr(np.full((4, 4), 0.1), gt) == pytest.approx(20.0)
        assert psnr(np.ones((4, 4)), gt) == pytest.approx(0.0)

    def test_decreasing_with_noise(self, rng):
        gt = rng.random((16, 16)) * 0.5 + 0.25
        noise = rng.choice([-1.0, 1.0], size=gt.shape)
        values = [psnr(gt + a * noise, gt) for a in (0.01, 0.05, 0.1)]
        assert values[0] > values[1] > values[2]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            psnr(np.zeros((2, 2)), np.zeros((3, 3)))

    def test_oracle(self, rng):
        for _ in range(50):
            a, b = rng.random((16, 16)), rng.random((16, 16))
            assert psnr(a, b) == pytest.approx(10 * math.log10(1.0 / np.mean((a - b) ** 2)), abs=1e-6)


class TestSsim:
    def test_identical(self, rng):
        x = rng.random((16, 16))
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-9)

    def test_constant_images(self):
        assert ssim(np.zeros((8, 8)), np.ones((8, 8))) == pytest.approx(1e-4 / 1.0001, rel=1e-9)

    def test_symmetric(self, rng):
        a, b = rng.random((12, 12)), rng.random((12, 12))
        assert abs(ssim(a, b) - ssim(b, a)) < 1e-12

    def test_oracle(self, rng):
        for _ in range(50):
            a, b = rng.random((16, 16)), rng.random((16, 16))
            assert ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-6)

    def test_range(self, rng):
        for _ in range(20):
            a, b = rng.random((10, 10)), rng.random((10, 10))
            assert -1.0 <= ssim(a, b) <= 1.0
            assert ssim(a, 1.0 - a) < 1.0

    def test_channels_averaged(self, rng):
        a, b = rng.random((2, 9, 9)), rng.random((2, 9, 9))
        assert ssim(a, b) == pytest.approx((ssim(a[0], b[0]) + ssim(a[1], b[1])) / 2)

    def test_too_small(self):
        with pytest.raises(ShapeError):
            ssim(np.zeros((6, 10)), np.zeros((6, 10)))


class TestMseSum:
    def test_zero(self, rng):
        x = rng.random((2, 1, 4, 4))
        assert mse_sum(x, x) == 0.0

    def test_uniform_error(self):
        gt = np.zeros((1, 1, 64, 64))
        assert mse_sum(gt + 0.1, gt) == pytest.approx(40.96)

    def test_mean_over_frames(self):
        gt = np.zeros((2, 1, 1, 10))
        pred = gt.copy()
        pred[0, 0, 0, 0] = math.sqrt(10.0)
        pred[1, 0, 0, 0] = math.sqrt(30.0)
        assert frame_mse_sums(pred, gt).tolist() == pytest.approx([10.0, 30.0])
        assert mse_sum(pred, gt) == pytest.approx(20.0)


class TestDifficulty:
    @pytest.mark.parametrize("s,label", [
        (0.95, "easy"), (0.9, "easy"), (0.75, "intermediate"), (0.6, "intermediate"), (0.5, "hard"),
        (-1.0, "hard"), (1.0, "easy"),
    ])
    def test_thresholds(self, s, label):
        assert difficulty_label(s) == label

    def test_identical_frames_are_easy(self, rng):
        x = rng.random((1, 16, 16))
        assert split_difficulty(x, x) == "easy"

    def test_unrelated_frames_are_hard(self, rng):
        assert split_difficulty(rng.random((1, 16, 16)), rng.random((1, 16, 16))) == "hard"


class TestEvaluate:
    @pytest.fixture
    def dataset(self):
        return generate_sequences(3, 6, 6, 32, 32, 2)

    def test_oracle_predictor(self, dataset):
        lookup = {dataset.sequence(i)[:3].tobytes(): dataset.sequence(i)[3:6] for i in range(len(dataset))}
        report = evaluate(lambda observed: lookup[observed.tobytes()], dataset, 3, 3)
        assert all(s.psnr == PSNR_CAP and s.ssim == pytest.approx(1.0) and s.mse_sum == 0.0
                   for s in report.sequences)
        assert sum(report.counts().values()) == len(dataset)

    def test_baseline_on_static_scene(self):
        ds = generate_sequences(4, 3, 5, 32, 32, 2, speed=(0.0, 0.0))
        report = evaluate(lambda observed: np.zeros((2,) + observed.shape[1:], dtype=np.float32), ds, 3, 2)
        assert report.aggregate(baseline=True)["psnr"] == PSNR_CAP
        assert all(s.subset == "easy" for s in report.sequences)

    def test_parallel_matches_serial(self, dataset):
        def predictor(observed):
            return repeat_last_frame(observed, 3) * 0.9

        serial = evaluate(predictor, dataset, 3, 3)
        parallel = evaluate(predictor, dataset, 3, 3, workers=4)
        assert serial.to_document() == parallel.to_document()

    def test_subsets_partition(self, dataset):
        report = evaluate(lambda observed: repeat_last_frame(observed, 2), dataset, 4, 2)
        labels = [s.subset for s in report.sequences]
        assert all(label in SUBSETS for label in labels)
        assert sum(report.counts().values()) == len(dataset)

    def test_too_short(self, dataset):
        with pytest.raises(DatasetError):
            evaluate(lambda observed: observed, dataset, 4, 3)

    def test_document_keys(self, dataset):
        doc = evaluate(lambda observed: repeat_last_frame(observed, 3), dataset, 3, 3).to_document()
        for key in ("psnr", "ssim", "mse_sum", "subset", "counts", "header", "sequences", "baseline"):
            assert key in doc
        assert doc["header"]["data_range"] == 1.0
        assert set(doc["subset"]) == set(SUBSETS)
        assert doc["baseline"]["full"]["psnr"] == pytest.approx(doc["psnr"])

    def test_empty_subset_aggregate(self, dataset):
        report = evaluate(lambda observed: repeat_last_frame(observed, 3), dataset, 3, 3)
        empty = [name for name, n in report.counts().items() if n == 0]
        for name in empty:
            assert report.aggregate(name)["psnr"] is None

    def test_stored_predictions(self, dataset):
        pred = SequenceDataset(dataset.frames[:, 3:6].copy())
        report = evaluate_predictions(pred, dataset, 3)
        assert all(s.mse_sum == 0.0 for s in report.sequences)
        with pytest.raises(DatasetError):
            evaluate_predictions(SequenceDataset(dataset.frames[:2, 3:6].copy()), dataset, 3)

"""Tests for the training loop: determinism, resume, logs and failure reporting."""

import re
from functools import partial

import numpy as np
import pytest

from mmvp import train as train_module
from mmvp.checkpoint import load_checkpoint
from mmvp.config import TrainConfig
from mmvp.errors import DatasetError, ShapeError, TrainingError
from mmvp.metrics import evaluate
from mmvp.model import ModelConfig, predict
from mmvp.storage import write_dataset
from mmvp.synth import generate_sequences
from mmvp.train import epoch_order, log_line, train

LOG_LINE = re.compile(r"^epoch=\d+ step=\d+ loss=\S+ lr=\S+$")
VAL_LINE = re.compile(r"^epoch=\d+ val_psnr=\S+ val_mse_sum=\S+$")


def make_config(**overrides):
    model = ModelConfig(
        height=16, width=16, t_observed=2, t_future=2,
        c_img=4, c_motion=4, downsample=4, scales=(1, 2, 4),
    )
    settings = dict(model=model, batch_size=4, total_epochs=3, checkpoint_every=2, restart_period=2, seed=11)
    settings.update(overrides)
    return TrainConfig(**settings)


@pytest.fixture
def data():
    return generate_sequences(5, 8, 4, 16, 16, 1)


@pytest.fixture
def val():
    return generate_sequences(6, 2, 4, 16, 16, 1)


class TestHelpers:
    def test_epoch_order_is_a_seeded_permutation(self):
        order = epoch_order(3, 0, 10)
        assert sorted(order) == list(range(10))
        assert order == epoch_order(3, 0, 10)
        assert epoch_order(3, 1, 10) != order or epoch_order(3, 2, 10) != order

    def test_log_line(self):
        assert log_line(2, 40, 0.125, 0.001) == "epoch=2 step=40 loss=0.125 lr=0.001"


class TestTrain:
    def test_same_seed_same_checkpoint(self, tmp_path, data):
        cfg = make_config(total_epochs=10)
        train(cfg, data, out_dir=tmp_path / "a", max_steps=3)
        train(cfg, data, out_dir=tmp_path / "b", max_steps=3)
        assert (tmp_path / "a" / "final.mmck").read_bytes() == (tmp_path / "b" / "final.mmck").read_bytes()

    def test_max_steps_mid_epoch(self, data):
        result = train(make_config(total_epochs=10), data, max_steps=3)
        assert result.state.adam.step == 3
        # two batches per epoch, so step 3 is the first batch of epoch 1
        assert result.state.epoch == 1
        assert result.state.batch == 1
        assert result.state.epoch_losses == result.step_losses[2:]
        assert len(result.step_losses) == 3
        assert len(result.log) == 1
        assert len(result.epoch_losses) == 1

    @pytest.mark.parametrize("stop", [1, 3, 4, 5])
    def test_resume_after_max_steps_matches_full_run(self, tmp_path, data, stop):
        cfg = make_config()
        full = train(cfg, data, out_dir=tmp_path / "full")
        part = train(cfg, data, out_dir=tmp_path / "part", max_steps=stop)
        assert part.state.adam.step == stop

        rest = train(cfg, data, out_dir=tmp_path / "part", resume=tmp_path / "part" / "final.mmck")
        assert rest.state.adam.step == full.state.adam.step
        assert part.step_losses + rest.step_losses == full.step_losses
        assert part.epoch_losses + rest.epoch_losses == full.epoch_losses
        for name in ("final.mmck", "epoch_0002.mmck"):
            assert (tmp_path / "part" / name).read_bytes() == (tmp_path / "full" / name).read_bytes()
        assert (tmp_path / "part" / "train.log").read_text() == (tmp_path / "full" / "train.log").read_text()

    def test_resume_matches_uninterrupted_run(self, tmp_path, data):
        cfg = make_config()
        full = train(cfg, data, out_dir=tmp_path / "full")
        assert full.state.epoch == 3
        assert full.state.adam.step == 6
        ckpt = tmp_path / "full" / "epoch_0002.mmck"
        assert load_checkpoint(ckpt).epoch == 2

        resumed = train(cfg, data, out_dir=tmp_path / "resumed", resume=ckpt)
        assert resumed.state.adam.step == 6
        assert len(resumed.log) == 1
        assert (tmp_path / "resumed" / "final.mmck").read_bytes() == (tmp_path / "full" / "final.mmck").read_bytes()

    def test_log_file(self, tmp_path, data):
        train(make_config(), data, out_dir=tmp_path)
        lines = (tmp_path / "train.log").read_text(encoding="utf-8").splitlines()
        assert len(lines) == 3
        assert all(LOG_LINE.match(line) for line in lines)
        assert lines[0].startswith("epoch=0 step=2 ")
        assert lines[-1].startswith("epoch=2 step=6 ")

    def test_lr_follows_schedule(self, data):
        result = train(make_config(lr_max=1e-3, lr_min=0.0), data)
        lrs = [float(line.split("lr=")[1]) for line in result.log]
        assert lrs == pytest.approx([1e-3, 5e-4, 1e-3])

    def test_validation_line(self, data, val):
        result = train(make_config(total_epochs=1, checkpoint_every=1), data, val)
        assert len(result.log) == 2
        assert LOG_LINE.match(result.log[0])
        assert VAL_LINE.match(result.log[1])
        assert result.log[1].startswith("epoch=0 ")

    def test_partial_batch(self):
        seven = generate_sequences(5, 7, 4, 16, 16, 1)
        result = train(make_config(total_epochs=1), seven)
        assert result.state.adam.step == 2

    def test_loss_is_finite(self, data):
        result = train(make_config(), data)
        assert np.all(np.isfinite(result.step_losses))
        assert result.epoch_losses == pytest.approx(
            [np.mean(result.step_losses[i:i + 2]) for i in range(0, 6, 2)]
        )

    def test_failure_names_epoch_and_batch(self, monkeypatch, data):
        calls = []
        real_step = train_module.train_step

        def failing_step(state, batch, lr):
            calls.append(1)
            if len(calls) == 2:
                raise ShapeError("bad batch")
            return real_step(state, batch, lr)

        monkeypatch.setattr(train_module, "train_step", failing_step)
        with pytest.raises(TrainingError, match="epoch 0 batch 1") as info:
            train(make_config(), data)
        assert info.value.epoch == 0
        assert info.value.batch == 1
        assert isinstance(info.value.cause, ShapeError)

    def test_frame_size_mismatch(self):
        with pytest.raises(DatasetError, match="16x16"):
            train(make_config(), generate_sequences(5, 4, 4, 32, 32, 1))

    def test_sequences_too_short(self):
        with pytest.raises(DatasetError, match="3 frames"):
            train(make_config(), generate_sequences(5, 4, 3, 16, 16, 1))

    def test_no_data(self):
        with pytest.raises(DatasetError):
            train(make_config())

    def test_data_path_from_config(self, tmp_path, data):
        path = tmp_path / "train.mmvp"
        write_dataset(data, path)
        result = train(make_config(total_epochs=1, train_data=str(path)))
        assert result.state.adam.step == 2


@pytest.fixture(scope="module")
def overfit_run():
    model = ModelConfig(
        height=32, width=32, t_observed=4, t_future=4,
        c_img=8, c_motion=16, downsample=4, scales=(1, 2, 4, 8),
    )
    cfg = TrainConfig(model=model, batch_size=4, total_epochs=1000, restart_period=1000, seed=0)
    data = generate_sequences(1, 8, 8, 32, 32, 1)
    return train(cfg, data, max_steps=2000)


@pytest.mark.slow
class TestConvergence:
    def test_overfits_small_set(self, overfit_run):
        assert min(overfit_run.epoch_losses) < 5e-3

    def test_smoothed_loss_does_not_rise(self, overfit_run):
        windows = np.asarray(overfit_run.step_losses[:200]).reshape(10, 20).mean(axis=1)
        assert np.all(np.diff(windows) <= 0), windows

    def test_beats_repeating_last_frame(self):
        cfg = TrainConfig(model=ModelConfig(), seed=0)
        m = cfg.model
        data = generate_sequences(100, 512, m.t_observed + m.t_future, m.height, m.width, 2)
        val = generate_sequences(200, 64, m.t_observed + m.t_future, m.height, m.width, 2)
        result = train(cfg, data)
        assert result.state.epoch == cfg.total_epochs

        report = evaluate(partial(predict, result.state.params, m), val, m.t_observed, m.t_future, workers=4)
        full, baseline = report.aggregate(), report.aggregate(baseline=True)
        assert full["psnr"] >= baseline["psnr"] + 1.0
        assert full["mse_sum"] < baseline["mse_sum"]

"""End-to-end checks of the mmvp command through click's test runner."""

import json

import pytest
from click.testing import CliRunner

from mmvp import __version__
from mmvp.cli import cli
from mmvp.storage import load_json, read_dataset

TINY = {
    "H": 16, "W": 16, "T": 2, "T_prime": 2, "C_img": 4, "C_motion": 4,
    "scales": [1, 0.5, 0.25], "batch_size": 2, "total_epochs": 1, "checkpoint_every": 1,
}


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def workdir(tmp_path, runner):
    """A generated dataset, a tiny config and one trained checkpoint."""
    (tmp_path / "cfg.json").write_text(json.dumps(TINY), encoding="utf-8")
    result = runner.invoke(cli, [
        "gen", "--out", str(tmp_path / "data.mmvp"), "--seqs", "4", "--len", "4",
        "--height", "16", "--width", "16", "--sprites", "1", "--seed", "7",
    ])
    assert result.exit_code == 0, result.output
    result = runner.invoke(cli, [
        "train", "--config", str(tmp_path / "cfg.json"), "--data", str(tmp_path / "data.mmvp"),
        "--out", str(tmp_path / "run"),
    ])
    assert result.exit_code == 0, result.output
    return tmp_path


def test_version(runner):
    result = runner.invoke(cli, ["--version"])
    assert result.exit_code == 0
    assert __version__ in result.output


def test_gen(tmp_path, runner):
    out = tmp_path / "d.mmvp"
    result = runner.invoke(cli, ["gen", "--out", str(out), "--seqs", "2", "--len", "3",
                                 "--height", "16", "--width", "16"])
    assert result.exit_code == 0, result.output
    ds = read_dataset(out)
    assert ds.frames.shape == (2, 3, 1, 16, 16)


def test_gen_too_small_for_glyphs(tmp_path, runner):
    result = runner.invoke(cli, ["gen", "--out", str(tmp_path / "d.mmvp"), "--seqs", "1", "--len", "3",
                                 "--height", "8", "--width", "8"])
    assert result.exit_code == 1
    assert "Error:" in result.output


def test_train_outputs(workdir):
    run = workdir / "run"
    assert (run / "final.mmck").exists()
    assert (run / "epoch_0001.mmck").exists()
    lines = (run / "train.log").read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("epoch=0 step=2 loss=")


def test_train_echoes_log(workdir, runner):
    result = runner.invoke(cli, [
        "train", "--config", str(workdir / "cfg.json"), "--data", str(workdir / "data.mmvp"),
        "--out", str(workdir / "again"),
    ])
    assert result.exit_code == 0, result.output
    assert "epoch=0 step=2 loss=" in result.output
    assert "Training finished" in result.output


def test_train_bad_config(tmp_path, runner, workdir):
    (tmp_path / "bad.json").write_text('{"learning_rate": 0.1}', encoding="utf-8")
    result = runner.invoke(cli, [
        "train", "--config", str(tmp_path / "bad.json"), "--data", str(workdir / "data.mmvp"),
        "--out", str(tmp_path / "bad"),
    ])
    assert result.exit_code == 1
    assert "Error:" in result.output
    assert "learning_rate" in result.output


def test_predict_and_eval(workdir, runner):
    pred = workdir / "pred.mmvp"
    result = runner.invoke(cli, ["predict", "--ckpt", str(workdir / "run" / "final.mmck"),
                                 "--data", str(workdir / "data.mmvp"), "--out", str(pred)])
    assert result.exit_code == 0, result.output
    assert read_dataset(pred).frames.shape == (4, 2, 1, 16, 16)

    report = workdir / "report.json"
    result = runner.invoke(cli, ["eval", "--pred", str(pred), "--gt", str(workdir / "data.mmvp"),
                                 "--t", "2", "--report", str(report)])
    assert result.exit_code == 0, result.output
    assert "repeat last frame" in result.output
    doc = load_json(report)
    assert set(doc["subset"]) == {"easy", "intermediate", "hard"}
    assert sum(doc["counts"].values()) == 4
    assert len(doc["sequences"]) == 4


def test_eval_count_mismatch(workdir, runner):
    short = workdir / "short.mmvp"
    runner.invoke(cli, ["gen", "--out", str(short), "--seqs", "1", "--len", "2",
                        "--height", "16", "--width", "16"])
    result = runner.invoke(cli, ["eval", "--pred", str(short), "--gt", str(workdir / "data.mmvp"),
                                 "--t", "2", "--report", str(workdir / "r.json")])
    assert result.exit_code == 1
    assert "Error:" in result.output


def test_dump_matrices(workdir, runner):
    out = workdir / "heat"
    result = runner.invoke(cli, ["dump-matrices", "--ckpt", str(workdir / "run" / "final.mmck"),
                                 "--data", str(workdir / "data.mmvp"), "--seq", "0", "--patch", "1,2",
                                 "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert sorted(p.name for p in out.glob("*.pgm")) == ["heatmap_0.pgm", "heatmap_1.pgm"]


def test_dump_matrices_bad_patch(workdir, runner):
    result = runner.invoke(cli, ["dump-matrices", "--ckpt", str(workdir / "run" / "final.mmck"),
                                 "--data", str(workdir / "data.mmvp"), "--seq", "0", "--patch", "one",
                                 "--out", str(workdir / "heat")])
    assert result.exit_code == 2
    assert "<h>,<w>" in result.output


def test_params(tmp_path, runner):
    (tmp_path / "cfg.json").write_text(json.dumps(TINY), encoding="utf-8")
    result = runner.invoke(cli, ["params", "--config", str(tmp_path / "cfg.json")])
    assert result.exit_code == 0, result.output
    for name in ("encoder", "filter", "predictor", "decoder", "total"):
        assert name in result.output


def test_corrupt_checkpoint(workdir, runner):
    broken = workdir / "broken.mmck"
    broken.write_bytes(b"NOPE" + bytes(8))
    result = runner.invoke(cli, ["predict", "--ckpt", str(broken), "--data", str(workdir / "data.mmvp"),
                                 "--out", str(workdir / "p.mmvp")])
    assert result.exit_code == 1
    assert "Error:" in result.output

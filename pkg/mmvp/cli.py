"""Click-based CLI for the mmvp command."""

from contextlib import contextmanager

import click
import numpy as np
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from mmvp import __version__, checkpoint, config as config_module, heatmap, metrics, model, storage, synth
from mmvp import train as train_module
from mmvp.errors import DatasetError, MmvpError


console = Console()


@contextmanager
def _reported():
    """Turn library errors into a one-line ``Error: ...`` and exit code 1."""
    try:
        yield
    except MmvpError as exc:
        raise click.ClickException(str(exc)) from exc
    except OSError as exc:
        raise click.ClickException(f"{exc.filename or ''}: {exc.strerror or exc}") from exc


def _parse_patch(ctx, param, value):
    try:
        h, w = (int(part) for part in value.split(","))
    except ValueError:
        raise click.BadParameter("expected <h>,<w>, e.g. 3,5") from None
    return h, w


def _config_table(cfg) -> Table:
    table = Table(title="Resolved config", show_header=True)
    table.add_column("Key", style="cyan")
    table.add_column("Value")
    for key, value in cfg.to_document().items():
        table.add_row(key, str(value))
    return table


def _metric_row(table: Table, name: str, agg: dict, count=None) -> None:
    def fmt(v, spec):
        return "-" if v is None else format(v, spec)

    cells = [name, fmt(agg["psnr"], ".3f"), fmt(agg["ssim"], ".4f"), fmt(agg["mse_sum"], ".3f")]
    if count is not None:
        cells.append(str(count))
    table.add_row(*cells)


@click.group()
@click.version_option(__version__, prog_name="mmvp")
def cli():
    """MMVP - motion-matrix video prediction on synthetic sprite videos."""


@cli.command()
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Dataset file to write.")
@click.option("--seqs", type=click.IntRange(min=1), required=True, help="Number of sequences.")
@click.option("--len", "seq_len", type=click.IntRange(min=1), required=True, help="Frames per sequence.")
@click.option("--height", type=int, default=64, show_default=True)
@click.option("--width", type=int, default=64, show_default=True)
@click.option("--sprites", type=click.IntRange(min=1), default=2, show_default=True)
@click.option("--seed", type=click.IntRange(min=0, max=synth.MASK64), default=0, show_default=True)
def gen(out_path, seqs, seq_len, height, width, sprites, seed):
    """Generate a bouncing-sprite dataset."""
    with _reported():
        ds = synth.generate_sequences(seed, seqs, seq_len, height, width, sprites)
        storage.write_dataset(ds, out_path)
    console.print(f"[green]✓ Wrote {seqs} sequences of {seq_len} frames ({height}x{width}) to {out_path}[/green]")


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False), help="Training dataset.")
@click.option("--val", "val_path", type=click.Path(exists=True, dir_okay=False), help="Validation dataset.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--resume", type=click.Path(exists=True, dir_okay=False), help="Checkpoint to resume from.")
def train(config_path, data_path, val_path, out_dir, resume):
    """Train a model and write checkpoints and train.log to --out."""
    with _reported():
        cfg = config_module.load_config(config_path)
        console.print(_config_table(cfg))
        result = train_module.train(cfg, data_path, val_path, out_dir, resume=resume, echo=True)

    state = result.state
    console.print()
    console.print(Panel(
        f"[bold]epochs:[/bold] {state.epoch}   [bold]steps:[/bold] {state.adam.step}\n"
        f"[bold]final checkpoint:[/bold] {out_dir}/final.mmck",
        title="Training finished",
        border_style="green",
    ))


@cli.command()
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def predict(ckpt_path, data_path, out_path):
    """Predict T' future frames for every sequence (written in the dataset format)."""
    with _reported():
        state = checkpoint.load_checkpoint(ckpt_path)
        ds = storage.read_dataset(data_path)
        m = state.config.model
        if ds.seq_len < m.t_observed:
            raise DatasetError(f"sequences have {ds.seq_len} frames, the model observes {m.t_observed}")
        preds = [model.predict(state.params, m, ds.sequence(i)[:m.t_observed]) for i in range(len(ds))]
        storage.write_dataset(storage.SequenceDataset.from_float(np.stack(preds)), out_path)
    console.print(f"[green]✓ Wrote {len(preds)} predictions of {m.t_future} frames to {out_path}[/green]")


@cli.command("eval")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--t", "t_observed", required=True, type=click.IntRange(min=1), help="Observed frames per sequence.")
@click.option("--report", "report_path", required=True, type=click.Path(dir_okay=False))
def eval_cmd(pred_path, gt_path, t_observed, report_path):
    """Score stored predictions against ground truth, per difficulty subset."""
    with _reported():
        report = metrics.evaluate_predictions(
            storage.read_dataset(pred_path), storage.read_dataset(gt_path), t_observed
        )
        storage.save_json(report_path, report.to_document())

    table = Table(title="Evaluation", show_header=True)
    table.add_column("Subset", style="cyan")
    table.add_column("PSNR", justify="right")
    table.add_column("SSIM", justify="right")
    table.add_column("MSE sum", justify="right")
    table.add_column("Count", justify="right")
    counts = report.counts()
    _metric_row(table, "full", report.aggregate(), len(report.sequences))
    for name in metrics.SUBSETS:
        _metric_row(table, name, report.aggregate(name), counts[name])
    _metric_row(table, "[dim]repeat last frame[/dim]", report.aggregate(baseline=True), len(report.baseline))
    console.print(table)
    console.print(f"[dim]Report written to {report_path}[/dim]")


@cli.command("dump-matrices")
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--seq", "seq_index", required=True, type=click.IntRange(min=0))
@click.option("--patch", required=True, callback=_parse_patch, help="Source patch on the matrix grid, <h>,<w>.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def dump_matrices(ckpt_path, data_path, seq_index, patch, out_dir):
    """Write predicted motion-matrix heatmaps for one patch as PGM images."""
    with _reported():
        state = checkpoint.load_checkpoint(ckpt_path)
        ds = storage.read_dataset(data_path)
        written = heatmap.dump_heatmaps(state, ds, seq_index, patch, out_dir)
    console.print(f"[green]✓ Wrote {len(written)} heatmaps for patch {patch} to {out_dir}[/green]")


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="Config file (defaults if omitted).")
def params(config_path):
    """Show parameter counts per component."""
    with _reported():
        cfg = config_module.load_config(config_path) if config_path else config_module.parse_config({})
        count = model.count_params(model.init_params(cfg.model, cfg.seed))

    table = Table(title="Parameters", show_header=True)
    table.add_column("Component", style="cyan")
    table.add_column("Count", justify="right")
    table.add_column("Share", justify="right")
    for name, n in count.breakdown.items():
        table.add_row(name, f"{n:,}", f"{n / count.total:.1%}")
    table.add_row("[bold]total[/bold]", f"[bold]{count.total:,}[/bold]", "100.0%")
    console.print(table)
    console.print(f"Motion-related share (filter + predictor): [yellow]{count.motion_share:.1%}[/yellow]")


if __name__ == "__main__":
    cli()

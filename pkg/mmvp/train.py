"""Training loop: seeded epoch shuffles, AdamW steps, structured logs, checkpoints."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Optional, Union

import numpy as np
from rich.console import Console
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn

from mmvp.checkpoint import TrainState, load_checkpoint, save_checkpoint
from mmvp.config import TrainConfig
from mmvp.errors import DatasetError, MmvpError, TrainingError
from mmvp.metrics import evaluate
from mmvp.model import forward, init_params, predict
from mmvp.optim import AdamState, adamw_step, lr_schedule, zero_grads
from mmvp.storage import PathLike, SequenceDataset, read_dataset
from mmvp.synth import Prng, derive_seed
from mmvp.tensor import Tape, Tensor


console = Console()

DatasetSource = Union[PathLike, SequenceDataset, None]


@dataclass
class TrainResult:
    state: TrainState
    log: list[str] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)


def epoch_order(seed: int, epoch: int, count: int) -> list[int]:
    """Permutation of sequence indices for one epoch."""
    return Prng(derive_seed(seed, epoch)).shuffle(list(range(count)))


def log_line(epoch: int, step: int, loss: float, lr: float) -> str:
    return f"epoch={epoch} step={step} loss={loss:.8g} lr={lr:.8g}"


def new_state(cfg: TrainConfig) -> TrainState:
    params = init_params(cfg.model, cfg.seed)
    return TrainState(config=cfg, params=params, adam=AdamState.for_params(params))


def _load(source: DatasetSource) -> Optional[SequenceDataset]:
    if source is None:
        return None
    if isinstance(source, SequenceDataset):
        return source
    return read_dataset(source)


def _check_dataset(ds: SequenceDataset, cfg: TrainConfig, what: str) -> None:
    m = cfg.model
    _, t, c, h, w = ds.frames.shape
    if (c, h, w) != (m.channels, m.height, m.width):
        raise DatasetError(f"{what} frames are {c}x{h}x{w}, config expects {m.channels}x{m.height}x{m.width}")
    if t < m.t_observed + m.t_future:
        raise DatasetError(f"{what} sequences have {t} frames, {m.t_observed} + {m.t_future} are needed")


def train_step(state: TrainState, batch: np.ndarray, lr: float) -> float:
    """One forward/backward/update on a (B, T + T', C, H, W) float32 batch."""
    m = state.config.model
    observed = Tensor(batch[:, :m.t_observed])
    future = Tensor(batch[:, m.t_observed:m.t_observed + m.t_future])
    zero_grads(state.params)
    with Tape() as tape:
        _, loss = forward(observed, future, m, state.params)
    tape.backward(loss)
    adamw_step(state.params, state.adam, lr, state.config)
    return loss.item()


def train(
    cfg: TrainConfig,
    data: DatasetSource = None,
    val: DatasetSource = None,
    out_dir: Optional[PathLike] = None,
    resume: Optional[PathLike] = None,
    max_steps: Optional[int] = None,
    echo: bool = False,
) -> TrainResult:
    """Train from scratch or from ``resume``; deterministic given the seed.

    Writes ``train.log`` and ``epoch_<e>.mmck`` / ``final.mmck`` into
    ``out_dir`` when one is given. A ``max_steps`` stop inside an epoch keeps
    the batch position, so resuming continues with the next batch and logs the
    epoch once, when it completes.
    """
    dataset = _load(data if data is not None else cfg.train_data)
    if dataset is None:
        raise DatasetError("no training data given")
    _check_dataset(dataset, cfg, "training")
    val_set = _load(val if val is not None else cfg.val_data)
    if val_set is not None:
        _check_dataset(val_set, cfg, "validation")

    if resume is not None:
        state = load_checkpoint(resume, cfg)
    else:
        state = new_state(cfg)
    result = TrainResult(state=state)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_file = open(out / "train.log", "a" if resume is not None else "w", encoding="utf-8")
    else:
        log_file = None

    def emit(line: str) -> None:
        result.log.append(line)
        if log_file is not None:
            log_file.write(line + "\n")
            log_file.flush()
        if echo:
            console.print(line, markup=False, highlight=False)

    frames = dataset.as_float()
    m = cfg.model
    batches = -(-len(dataset) // cfg.batch_size)
    if state.batch > batches:
        raise DatasetError(f"checkpoint is at batch {state.batch} of an epoch, the dataset has {batches} batches")
    try:
        with Progress(
            SpinnerColumn(),
            TextColumn("[cyan]{task.description}"),
            BarColumn(),
            TextColumn("{task.completed}/{task.total}"),
            console=console,
            transient=True,
            disable=not echo,
        ) as progress:
            for epoch in range(state.epoch, cfg.total_epochs):
                if max_steps is not None and state.adam.step >= max_steps:
                    break
                lr = lr_schedule(epoch, cfg)
                order = epoch_order(cfg.seed, epoch, len(dataset))
                task = progress.add_task(f"epoch {epoch}", total=batches, completed=state.batch)
                finished = True
                for b in range(state.batch, batches):
                    idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                    try:
                        loss = train_step(state, frames[idx], lr)
                    except MmvpError as exc:
                        raise TrainingError(epoch, b, exc) from exc
                    state.epoch_losses.append(loss)
                    state.batch = b + 1
                    result.step_losses.append(loss)
                    progress.advance(task)
                    if max_steps is not None and state.adam.step >= max_steps:
                        finished = b == batches - 1
                        break
                progress.remove_task(task)
                if not finished:
                    break

                epoch_loss = float(np.mean(state.epoch_losses))
                state.epoch, state.batch, state.epoch_losses = epoch + 1, 0, []
                result.epoch_losses.append(epoch_loss)
                emit(log_line(epoch, state.adam.step, epoch_loss, lr))

                if (epoch + 1) % cfg.checkpoint_every == 0:
                    if out is not None:
                        save_checkpoint(out / f"epoch_{epoch + 1:04d}.mmck", state)
                    if val_set is not None:
                        report = evaluate(partial(predict, state.params, m), val_set, m.t_observed, m.t_future)
                        full = report.aggregate()
                        emit(f"epoch={epoch} val_psnr={full['psnr']:.6g} val_mse_sum={full['mse_sum']:.6g}")
    finally:
        if log_file is not None:
            log_file.close()

    if out is not None:
        save_checkpoint(out / "final.mmck", state)
    return result

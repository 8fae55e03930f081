"""Training loop."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .checkpoint import save_checkpoint
from .errors import DivergenceError, NumericalError
from .inference import sliding_window_infer
from .losses import volume_loss
from .metrics import dice_score
from .models import LossRecord, TrainConfig
from .network import UnetrModel
from .optim import OptimizerState, adamw_step
from .tensor import Tape
from .transforms import augment, sample_patch
from .volumes import VolumeSample, atomic_write

Echo = Callable[[str], None]


@dataclass
class TrainResult:
    model: UnetrModel
    optimizer: OptimizerState
    curve: list[LossRecord] = field(default_factory=list)
    checkpoint: Optional[Path] = None
    elapsed: float = 0.0

    @property
    def final_val_dice(self) -> Optional[float]:
        scored = [r.val_dice for r in self.curve if r.val_dice is not None]
        return scored[-1] if scored else None


def foreground_dice(model: UnetrModel, samples: Sequence[VolumeSample], overlap: float = 0.5,
                    threads: int = 1) -> float:
    """Mean Dice over foreground classes and samples, predicted by sliding window."""
    scores = []
    for sample in samples:
        probs = sliding_window_infer(sample.image, model, overlap=overlap, threads=threads)
        prediction = probs.argmax(axis=-1)
        for j in range(1, model.config.classes):
            scores.append(dice_score(sample.label == j, prediction == j))
    return float(np.mean(scores)) if scores else 0.0


def train_step(model: UnetrModel, images: Sequence[np.ndarray], labels: Sequence[np.ndarray],
               optimizer: OptimizerState, cfg: TrainConfig) -> tuple[UnetrModel, OptimizerState, float]:
    """Forward, loss, backward and one AdamW update on a batch of patches."""
    with Tape() as tape:
        logits = [model.forward(image) for image in images]
        loss = volume_loss(logits, list(labels), model.config.classes)
    value = loss.item()
    if not math.isfinite(value):
        raise NumericalError(f'loss is {value}')
    params = list(model.parameters.values())
    tape.backward(loss, params)
    grads = {name: t.grad for name, t in model.parameters.items()}
    arrays, optimizer = adamw_step(model.arrays(), grads, optimizer, cfg.optimizer)
    return model.with_arrays(arrays), optimizer, value


def train(
    model: UnetrModel,
    dataset: Sequence[VolumeSample],
    cfg: TrainConfig,
    validation: Sequence[VolumeSample] = (),
    out_dir: Optional[Path] = None,
    echo: Optional[Echo] = None,
) -> TrainResult:
    """Train ``model`` on random patches of ``dataset``.

    The run is fully determined by ``cfg.seed``. When ``out_dir`` is set, periodic
    checkpoints and the final checkpoint are written there. A non-finite loss
    raises :class:`DivergenceError`; with ``out_dir`` set, the state before
    the failing step is saved first and carried on the error.
    """
    if not dataset:
        raise ValueError('training dataset is empty')
    rng = np.random.default_rng(cfg.seed)
    optimizer = OptimizerState.zeros(model.arrays())
    result = TrainResult(model=model, optimizer=optimizer)
    last_checkpoint: Optional[Path] = None
    started = time.monotonic()

    for iteration in range(1, cfg.iterations + 1):
        images, labels = [], []
        for _ in range(cfg.batch_size):
            sample = dataset[int(rng.integers(len(dataset)))]
            image, label = sample_patch(sample, cfg.patch_shape, rng, cfg.foreground_ratio)
            image, label = augment(image, label, rng, cfg.augment)
            images.append(image)
            labels.append(label)

        try:
            model, optimizer, loss = train_step(model, images, labels, optimizer, cfg)
        except NumericalError as e:
            if out_dir is not None:
                # the failed step never updated model or optimizer
                last_checkpoint = save_checkpoint(
                    Path(out_dir) / 'checkpoint.ckpt', model, optimizer, iteration - 1, cfg.intensity, cfg.spacing
                )
            raise DivergenceError(
                f'training diverged at iteration {iteration}: {e}', iteration, last_checkpoint
            ) from e

        record = LossRecord(iteration=iteration, loss=loss)
        if validation and cfg.val_every and iteration % cfg.val_every == 0:
            record.val_dice = foreground_dice(model, validation, cfg.overlap, cfg.threads)
        result.curve.append(record)
        if echo and (iteration % cfg.log_every == 0 or record.val_dice is not None):
            line = f'iteration {iteration}/{cfg.iterations}  loss {loss:.4f}'
            if record.val_dice is not None:
                line += f'  val dice {record.val_dice:.4f}'
            echo(line)
        if out_dir is not None and cfg.checkpoint_every and iteration % cfg.checkpoint_every == 0:
            last_checkpoint = save_checkpoint(
                Path(out_dir) / 'checkpoint.ckpt', model, optimizer, iteration, cfg.intensity, cfg.spacing
            )

    result.model, result.optimizer = model, optimizer
    if out_dir is not None:
        result.checkpoint = save_checkpoint(
            Path(out_dir) / 'checkpoint.ckpt', model, optimizer, cfg.iterations, cfg.intensity, cfg.spacing
        )
        write_loss_curve(result.curve, Path(out_dir) / 'loss.txt')
    result.elapsed = time.monotonic() - started
    return result


def write_loss_curve(curve: Sequence[LossRecord], path: Path) -> Path:
    lines = ['iteration loss val_dice']
    for r in curve:
        val = 'nan' if r.val_dice is None else f'{r.val_dice:.6f}'
        lines.append(f'{r.iteration} {r.loss:.6f} {val}')
    atomic_write(path, ('\n'.join(lines) + '\n').encode())
    return path


def read_loss_curve(path: Path) -> list[LossRecord]:
    records = []
    for line in Path(path).read_text().splitlines()[1:]:
        iteration, loss, val = line.split()
        records.append(LossRecord(
            iteration=int(iteration), loss=float(loss), val_dice=None if val == 'nan' else float(val),
        ))
    return records


def moving_average(values: Sequence[float], window: int = 100) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.size < window:
        return values[:0]
    kernel = np.ones(window) / window
    return np.convolve(values, kernel, mode='valid')


def rises_after(values: Sequence[float], window: int = 100, start: int = 200, tolerance: float = 0.0) -> list[int]:
    """Iterations from ``start`` on where the ``window`` moving average sits more than
    ``tolerance`` above its running minimum.

    The average ending at iteration ``i`` (1-based) covers iterations ``i - window + 1 .. i``.
    An empty result means the smoothed curve never rose after ``start``.
    """
    averaged = moving_average(values, window)
    iterations = np.arange(window, window + averaged.size)
    keep = iterations >= start
    tail, iterations = averaged[keep], iterations[keep]
    if tail.size == 0:
        return []
    floor = np.minimum.accumulate(tail)
    return [int(i) for i in iterations[tail > floor + tolerance]]

from datetime import timedelta
from pathlib import Path
from typing import Optional

import click
import humanize
import yaml

from ..errors import DivergenceError, FormatError, UnetrError
from ..models import TrainConfig
from ..network import UnetrModel
from ..training import train
from ..transforms import normalize_intensity, resample, split_dataset
from ..volumes import VolumeSample, atomic_write, read_dataset
from .main import main
from .symbols import chk, info, spin, watch, wrn
from .utils import fail, load_config, seed_option, threads_option


def prepare_dataset(data_dir: str, cfg: TrainConfig) -> list[VolumeSample]:
    samples = read_dataset(data_dir)
    for sample in samples:
        if sample.label is None:
            raise FormatError(f'volume {sample.name!r} has no label array')
    samples = [resample(s, cfg.spacing) if cfg.spacing else s for s in samples]
    for sample in samples:
        sample.image = normalize_intensity(sample.image, cfg.intensity)
    return samples


@main.command(name='train', help='Train a model from a YAML config file')
@click.argument('config', type=click.Path(exists=True, dir_okay=False))
@click.option('--data', 'data_dir', help='Directory of training volumes', required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option('--out', 'out_dir', help='Directory for the checkpoint, loss curve and split',
              required=True, type=click.Path(file_okay=False, writable=True))
@click.option('--iterations', help='Override the iteration count', default=None, type=click.IntRange(min=0))
@seed_option
@threads_option
def train_model(config: str, data_dir: str, out_dir: str, iterations: Optional[int],
                seed: Optional[int], threads: Optional[int]):
    cfg = load_config(config, TrainConfig)
    if not isinstance(cfg, TrainConfig):
        fail('Invalid training config!', cfg)
    overrides = {'seed': seed, 'threads': threads, 'iterations': iterations}
    cfg = cfg.model_copy(update={k: v for k, v in overrides.items() if v is not None})

    click.echo(f' {spin} Loading volumes from {data_dir}...')
    try:
        samples = prepare_dataset(data_dir, cfg)
    except (UnetrError, OSError) as e:
        fail('Could not load the dataset!', e)
    train_set, val_set, test_set = split_dataset(samples, cfg.split, cfg.seed)
    if not train_set:
        fail(f'The split {list(cfg.split)} leaves no training volumes out of {len(samples)}!')

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    split = {name: [s.name for s in part] for name, part in zip(('train', 'val', 'test'), (train_set, val_set, test_set))}
    atomic_write(out / 'split.yaml', yaml.safe_dump(split, sort_keys=False).encode())

    model = UnetrModel.initialize(cfg.model, seed=cfg.seed)
    click.echo(f' {info} {model!r}')
    click.echo(f' {info} {len(train_set)} training / {len(val_set)} validation / {len(test_set)} test volumes')
    click.echo(f' {spin} Training for {cfg.iterations} iterations...')
    try:
        result = train(model, train_set, cfg, validation=val_set, out_dir=out,
                       echo=lambda line: click.echo(f'   {line}'))
    except DivergenceError as e:
        if e.checkpoint is not None:
            click.echo(f' {wrn} Last good checkpoint: {e.checkpoint}', err=True)
        fail('Training diverged!', e)
    except UnetrError as e:
        fail('Training failed!', e)

    click.echo(f' {chk} Checkpoint written to {result.checkpoint}')
    if result.final_val_dice is not None:
        click.echo(f' {info} Final validation Dice {result.final_val_dice:.4f}')
    click.echo(f' {watch} Training finished in {humanize.naturaldelta(timedelta(seconds=result.elapsed))}.')

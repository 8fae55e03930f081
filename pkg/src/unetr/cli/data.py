import time
from datetime import timedelta
from pathlib import Path
from typing import Optional

import click
import humanize
import numpy as np
from pydantic import ValidationError

from ..errors import UnetrError
from ..models import PhantomSpec
from ..phantoms import iter_phantoms
from ..volumes import SUFFIX, write_volume
from .main import main
from .symbols import chk, info, spin, watch
from .utils import fail, load_config, seed_option, validation_error


@main.command(name='gen', help='Generate a synthetic phantom dataset')
@click.option('--spec', 'specfile', help='Phantom spec YAML file', default=None,
              type=click.Path(exists=True, dir_okay=False))
@click.option('--out', 'out_dir', help='Output directory', required=True,
              type=click.Path(file_okay=False, writable=True))
@click.option('--volumes', help='Number of volumes', default=None, type=click.IntRange(min=1))
@click.option('--classes', help='Class count, background included', default=None, type=click.IntRange(min=2))
@click.option('--dims', help='Volume size', default=None, nargs=3, type=click.IntRange(min=1))
@seed_option
def generate(specfile: Optional[str], out_dir: str, volumes: Optional[int], classes: Optional[int],
             dims: Optional[tuple[int, int, int]], seed: Optional[int]):
    spec = load_config(specfile, PhantomSpec)
    if not isinstance(spec, PhantomSpec):
        fail('Invalid phantom spec!', spec)
    overrides = {'volumes': volumes, 'classes': classes, 'dims': dims or None, 'seed': seed}
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if overrides:
        try:
            spec = PhantomSpec(**(spec.model_dump() | overrides))
        except ValidationError as e:
            fail('Invalid phantom spec!', validation_error(e))

    out = Path(out_dir)
    click.echo(f' {spin} Generating {spec.volumes} phantoms of {list(spec.dims)} with {spec.classes} classes...')
    start = time.time()
    fractions = []
    try:
        for sample in iter_phantoms(spec):
            write_volume(sample, out / f'{sample.name}{SUFFIX}')
            fractions.append(float((sample.label > 0).mean()))
    except (UnetrError, OSError) as e:
        fail('Phantom generation failed!', e)
    delta = timedelta(seconds=time.time() - start)
    click.echo(f' {chk} Wrote {len(fractions)} volumes to {out}')
    click.echo(f' {info} Foreground fraction {np.min(fractions):.3f} to {np.max(fractions):.3f}')
    click.echo(f' {watch} Finished in {humanize.naturaldelta(delta)}.')

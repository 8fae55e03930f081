import time
from pathlib import Path
from typing import Optional

import click
import humanize
import numpy as np
import yaml
from pydantic import ValidationError

from ..complexity import REFERENCE_FLOPS, REFERENCE_PARAMS, compare_reference, count_params_flops
from ..models import ComplexityReport, ModelConfig
from ..network import UnetrModel
from .main import main
from .renderer import RenderField, Renderer, output_format_option
from .symbols import info, watch
from .utils import fail, validation_error


def load_model_config(path: Optional[str]) -> ModelConfig:
    """A model config from YAML (bare, or under a ``model:`` key); the ViT-B/16 preset otherwise."""
    if path is None:
        return ModelConfig.vit_b16()
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
        if isinstance(data, dict) and isinstance(data.get('model'), dict):
            data = data['model']
        return ModelConfig(**data)
    except yaml.YAMLError as e:
        fail(f'Config file {path} is not valid YAML!', e)
    except ValidationError as e:
        fail('Invalid model config!', validation_error(e))


def _giga(value: float) -> str:
    return f'{value / 1e9:.2f}G'


def _mega(value: float) -> str:
    return f'{value / 1e6:.2f}M'


def echo_comparison(report: ComplexityReport) -> None:
    deviation = compare_reference(report)
    click.echo(f' {info} Sequence length N={report.n_patches} for patch size {report.patch_size}')
    click.echo(f' {info} Decoder widths {report.decoder_widths}')
    click.echo(f"   Params        {_mega(report.params):>10}   reference {_mega(REFERENCE_PARAMS)}  "
               f"({deviation['params']:+.1%})")
    click.echo(f"   FLOPs/window  {_giga(report.flops):>10}   reference {_giga(REFERENCE_FLOPS)}  "
               f"({deviation['flops']:+.1%})")
    click.echo(f'   Windows       {report.evaluated_windows:>10}   for input {list(report.input_size)}'
               f' ({report.windows} scheduled)')
    click.echo(f'   FLOPs/pass    {_giga(report.total_pass_flops):>10}')


@main.command(name='summary', help='Report parameter and FLOP counts for a model config')
@click.argument('config', required=False, type=click.Path(exists=True, dir_okay=False))
@click.option('--patch-size', 'patch_sizes', help='Patch sizes to compare (repeatable)',
              multiple=True, type=click.IntRange(min=4))
@click.option('--input-size', help='Full input volume size for the sliding-window total',
              default=None, nargs=3, type=click.IntRange(min=1))
@click.option('--overlap', help='Sliding-window overlap', default=0.5, type=click.FloatRange(0, 1, max_open=True))
@click.option('--time', 'timed', help='Also time one forward pass', default=False, is_flag=True)
@output_format_option
def summary(config: Optional[str], patch_sizes: tuple[int, ...], input_size: Optional[tuple[int, int, int]],
            overlap: float, timed: bool, output: str):
    base = load_model_config(config)
    configs = [base]
    if patch_sizes:
        try:
            configs = [ModelConfig(**(base.model_dump() | {'patch_size': p, 'decoder_widths': None}))
                       if p != base.patch_size else base for p in patch_sizes]
        except ValidationError as e:
            fail('Invalid patch size!', validation_error(e))
    reports = [count_params_flops(c, input_size or None, overlap) for c in configs]

    if len(reports) > 1:
        rows = [
            {'patch_size': r.patch_size, 'n_patches': r.n_patches, 'params': _mega(r.params),
             'flops': _giga(r.flops), 'widths': r.decoder_widths}
            for r in reports
        ]
        fields = [
            RenderField(label='Patch', path='$.patch_size'),
            RenderField(label='N', path='$.n_patches'),
            RenderField(label='Params', path='$.params'),
            RenderField(label='FLOPs/window', path='$.flops'),
            RenderField(label='Decoder widths', path='$.widths'),
        ]
        click.echo(Renderer(data=rows, fields=fields).render(output_format=output))
    else:
        report = reports[0]
        if output in ('json', 'yaml'):
            payload = report.model_dump(mode='json') | {
                'params': report.params, 'flops': report.flops, 'total_pass_flops': report.total_pass_flops,
            }
            click.echo(Renderer(data=payload, fields=[]).render(output_format=output))
        else:
            fields = [
                RenderField(label='Module', path='$.module'),
                RenderField(label='Params', path='$.params', mod=humanize.intcomma),
                RenderField(label='FLOPs', path='$.flops', mod=humanize.intcomma),
            ]
            click.echo(Renderer(data=report.rows, fields=fields).render(output_format=output))
            click.echo()
            echo_comparison(report)

    if timed:
        model = UnetrModel.initialize(base)
        volume = np.zeros(tuple(base.img_size) + (base.in_channels,), dtype=base.dtype)
        start = time.perf_counter()
        model.predict(volume)
        click.echo(f' {watch} One forward pass of {list(base.img_size)} took {time.perf_counter() - start:.2f} s')

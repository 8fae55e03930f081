import json
import time
from datetime import timedelta
from pathlib import Path
from typing import Optional

import click
import humanize
import numpy as np

from ..checkpoint import load_checkpoint
from ..errors import UnetrError
from ..inference import distinct_positions, sliding_window_infer, window_positions
from ..metrics import evaluate, evaluate_cases
from ..models import InferConfig, MetricReport
from ..transforms import normalize_intensity, resample, resize
from ..volumes import SUFFIX, VolumeSample, atomic_write, read_volume, write_volume
from .main import main
from .renderer import RenderField, Renderer, output_format_option
from .symbols import chk, info, spin, watch
from .utils import fail, load_config, threads_option


@main.command(name='infer', help='Predict a volume with sliding-window inference')
@click.argument('checkpoint', type=click.Path(exists=True, dir_okay=False))
@click.argument('volume', type=click.Path(exists=True, dir_okay=False))
@click.option('--out', 'out_dir', help='Output directory', required=True,
              type=click.Path(file_okay=False, writable=True))
@click.option('--config', 'configfile', help='Inference config YAML file', default=None,
              type=click.Path(exists=True, dir_okay=False))
@click.option('--overlap', help='Override the window overlap', default=None, type=click.FloatRange(0, 1, max_open=True))
@threads_option
def infer_volume(checkpoint: str, volume: str, out_dir: str, configfile: Optional[str],
                 overlap: Optional[float], threads: Optional[int]):
    cfg = load_config(configfile, InferConfig)
    if not isinstance(cfg, InferConfig):
        fail('Invalid inference config!', cfg)
    cfg = cfg.model_copy(update={k: v for k, v in {'overlap': overlap, 'threads': threads}.items() if v is not None})

    try:
        ckpt = load_checkpoint(checkpoint)
        model = ckpt.model
        sample = read_volume(volume)
        intensity = cfg.intensity or ckpt.intensity
        spacing = cfg.spacing or ckpt.spacing
        resampled = resample(sample, spacing) if spacing else sample
        image = normalize_intensity(resampled.image, intensity)
        window = cfg.window or model.config.img_size
        padded = [max(n, w) for n, w in zip(resampled.dims, window)]
        scheduled = len(window_positions(padded, window, cfg.overlap))
        count = len(distinct_positions(padded, window, cfg.overlap))
        click.echo(f' {info} Intensity normalization {intensity!r}'
                   + (f', resampled to {list(spacing)} mm' if spacing else ''))
        click.echo(f' {spin} Predicting {list(resampled.dims)} with {count} windows of {list(window)}'
                   f' ({scheduled} scheduled)...')
        start = time.time()
        probs = sliding_window_infer(image, model, window, cfg.overlap, cfg.threads)
        if resampled.dims != sample.dims:
            probs = resize(probs, sample.dims, order=1)
            probs /= probs.sum(axis=-1, keepdims=True)
        prediction = VolumeSample(
            image=probs.astype(np.float32),
            label=probs.argmax(axis=-1).astype(np.uint8),
            spacing=sample.spacing,
        )
        path = write_volume(prediction, Path(out_dir) / f'{Path(volume).stem}_pred{SUFFIX}')
    except (UnetrError, OSError) as e:
        fail('Inference failed!', e)
    delta = timedelta(seconds=time.time() - start)
    click.echo(f' {chk} Probabilities and labels written to {path}')
    click.echo(f' {watch} Finished in {humanize.naturaldelta(delta)}.')


def report_fields() -> list[RenderField]:
    return [
        RenderField(label='Class', path='$.class'),
        RenderField(label='Dice', path='$.dice', mod=lambda v: f'{v:.4f}'),
        RenderField(label='HD95 (mm)', path='$.hd95', mod=lambda v: '-' if v is None else f'{v:.2f}'),
        RenderField(label='Flag', path='$.flag', mod=lambda v: v or ''),
    ]


@main.command(name='eval', help='Score predictions against ground truth (Dice, HD95), given PREDICTION TRUTH pairs')
@click.argument('volumes', nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--classes', help='Class count, background included; inferred when omitted',
              default=None, type=click.IntRange(min=2))
@click.option('--report', 'report_file', help='Also write the report as JSON', default=None,
              type=click.Path(dir_okay=False, writable=True))
@threads_option
@output_format_option
def evaluate_prediction(volumes: tuple[str, ...], classes: Optional[int], report_file: Optional[str],
                        threads: Optional[int], output: str):
    if len(volumes) % 2:
        fail(f'Expected PREDICTION TRUTH pairs, got {len(volumes)} paths!')
    try:
        pairs = [(read_volume(p), read_volume(t)) for p, t in zip(volumes[::2], volumes[1::2])]
    except (UnetrError, OSError) as e:
        fail('Could not read volumes!', e)
    if any(pred.label is None or gt.label is None for pred, gt in pairs):
        fail('Both volumes need a label array!')
    if classes is None:
        # prediction files carry one probability channel per class
        pred = pairs[0][0]
        highest = max(max(int(p.label.max()), int(t.label.max()), 1) for p, t in pairs)
        classes = pred.channels if pred.channels > 1 else highest + 1
    try:
        if len(pairs) == 1:
            pred, gt = pairs[0]
            report = evaluate(pred.label, gt.label, classes, gt.spacing)
        else:
            cases = [(pred.label, gt.label, gt.spacing) for pred, gt in pairs]
            report = evaluate_cases(cases, classes, threads=threads or 1)
    except UnetrError as e:
        fail('Evaluation failed!', e)

    data = report if output in ('json', 'yaml') else report.classes
    click.echo(Renderer(data=data, fields=report_fields()).render(output_format=output))
    if output == 'table':
        click.echo()
        hd = '-' if report.mean_hd95 is None else f'{report.mean_hd95:.2f} mm'
        click.echo(f' {info} Mean Dice {report.mean_dice:.4f}, mean HD95 {hd}')
    if report_file:
        write_report(report, Path(report_file))
        click.echo(f' {chk} Report written to {report_file}')


def write_report(report: MetricReport, path: Path) -> Path:
    payload = json.dumps(report.model_dump(mode='json', by_alias=True), indent=2)
    atomic_write(path, payload.encode())
    return path

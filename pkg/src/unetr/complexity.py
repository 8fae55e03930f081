"""Analytic parameter and FLOP accounting.

FLOPs count a multiply-accumulate as 2 for matrix products, attention and
convolutions. Elementwise work is charged per output element: 1 for a bias
add, residual add or leaky rectifier, 5 for a normalization, 8 for GELU and 3
for each softmax entry.
"""
from __future__ import annotations

import math
from collections import defaultdict
from typing import Optional, Sequence

from .decoder import decoder_layout
from .inference import distinct_positions, window_positions
from .models import ComplexityReport, ComplexityRow, ModelConfig
from .network import parameter_shapes

REFERENCE_PARAMS = 92.58e6
REFERENCE_FLOPS = 41.19e9

NORM_COST = 5
GELU_COST = 8
SOFTMAX_COST = 3


def _group(name: str) -> str:
    parts = name.split('.')
    if parts[0] in ('embedding', 'head'):
        return parts[0]
    return '.'.join(parts[:2])


def parameter_groups(config: ModelConfig) -> dict[str, int]:
    counts: dict[str, int] = defaultdict(int)
    for name, shape in parameter_shapes(config).items():
        counts[_group(name)] += math.prod(shape)
    return dict(counts)


def _encoder_block_flops(config: ModelConfig) -> int:
    N, K = config.n_patches, config.hidden_size
    M = config.encoder.mlp_hidden
    n, Kh = config.heads, config.encoder.head_width
    projections = 4 * 2 * N * K * K + 3 * N * K  # keys carry no bias
    attention = 2 * n * N * N * Kh * 2 + SOFTMAX_COST * n * N * N
    mlp = 2 * N * K * M + N * M + 2 * N * M * K + N * K + GELU_COST * N * M
    elementwise = 2 * NORM_COST * N * K + 2 * N * K
    return projections + attention + mlp + elementwise


def _decoder_flops(config: ModelConfig) -> dict[str, int]:
    voxels = math.prod(config.padded_size)
    flops: dict[str, int] = {}
    for group, specs in decoder_layout(config.decoder).items():
        total = 0
        for spec in specs:
            out_voxels = voxels // 8 ** spec.level
            if spec.kind == 'deconv':
                total += 2 * spec.c_in * spec.c_out * spec.kernel ** 3 * (out_voxels // spec.kernel ** 3)
            else:
                total += 2 * spec.c_in * spec.c_out * spec.kernel ** 3 * out_voxels
            if spec.kind == 'head':
                total += (1 + SOFTMAX_COST) * spec.c_out * out_voxels
            elif spec.norm:
                total += (NORM_COST + 1) * spec.c_out * out_voxels
        flops[group] = total
    return flops


def count_params_flops(config: ModelConfig, input_size: Optional[Sequence[int]] = None,
                       overlap: float = 0.5) -> ComplexityReport:
    """Per-module parameter and FLOP breakdown for one window of ``config.img_size``.

    ``input_size`` (default: the window) sets the number of sliding windows for the
    total-pass figure, which counts each distinct window once.
    """
    params = parameter_groups(config)
    N, K = config.n_patches, config.hidden_size
    flops = {'embedding': 2 * N * config.patch.patch_dim * K + N * K}
    block = _encoder_block_flops(config)
    for layer in range(1, config.layers + 1):
        flops[f'encoder.layer{layer}'] = block
    flops.update(_decoder_flops(config))

    rows = [ComplexityRow(module=name, params=count, flops=flops.get(name, 0)) for name, count in params.items()]
    size = tuple(input_size or config.img_size)
    padded = [max(n, w) for n, w in zip(size, config.img_size)]
    windows = len(window_positions(padded, config.img_size, overlap))
    evaluated = len(distinct_positions(padded, config.img_size, overlap))
    return ComplexityReport(
        input_size=size,
        patch_size=config.patch_size,
        n_patches=N,
        rows=rows,
        decoder_widths=list(config.widths),
        windows=windows,
        evaluated_windows=evaluated,
    )


def compare_reference(report: ComplexityReport) -> dict[str, float]:
    """Relative deviation of params and per-window FLOPs from the reference figures."""
    return {
        'params': report.params / REFERENCE_PARAMS - 1.0,
        'flops': report.flops / REFERENCE_FLOPS - 1.0,
    }

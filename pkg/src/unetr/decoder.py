"""Convolutional decoder: skip projections, the deconvolution ladder and the 1x1x1 head.

Feature maps inside the decoder are channel-first ``[C, H, W, D]``. Level ``l``
runs at ``1/2**l`` of the input resolution; the token grid sits at level
``S = log2(P)``.

The layout of every convolution is described once by :func:`decoder_layout`;
parameter shapes, the forward pass and the complexity counter all read it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Mapping, Optional

import numpy as np

from . import ops
from .errors import ConfigurationError, ShapeError
from .models import DecoderConfig, PatchConfig
from .tensor import Tensor


@dataclass(frozen=True)
class ConvSpec:
    name: str
    kind: Literal['conv', 'deconv', 'head']
    c_in: int
    c_out: int
    kernel: int
    level: int  # resolution level of the output
    norm: Optional[str] = None

    @property
    def weight_shape(self) -> tuple[int, ...]:
        k = self.kernel
        if self.kind == 'deconv':
            return (self.c_in, self.c_out, k, k, k)
        return (self.c_out, self.c_in, k, k, k)


def _conv_block(prefix: str, c_in: int, c_out: int, level: int, cfg: DecoderConfig) -> list[ConvSpec]:
    return [
        ConvSpec(f'{prefix}.conv{i}', 'conv', c_in if i == 1 else c_out, c_out, 3, level, norm=f'{prefix}.norm{i}')
        for i in range(1, cfg.convs_per_block + 1)
    ]


def skips_at(cfg: DecoderConfig, level: int) -> list[int]:
    """Extracted layers joining ``level``, deepest first."""
    return [layer for layer in sorted(cfg.skip_levels, reverse=True) if cfg.skip_levels[layer] == level]


def decoder_layout(cfg: DecoderConfig) -> dict[str, list[ConvSpec]]:
    w, S, K = cfg.widths, cfg.stages, cfg.hidden_size
    for layer, level in cfg.skip_levels.items():
        if not 1 <= level < S:
            raise ConfigurationError(f'skip from layer {layer} targets level {level}, outside 1..{S - 1}')
    layout: dict[str, list[ConvSpec]] = {
        'decoder.input': _conv_block('decoder.input', cfg.in_channels, w[0], 0, cfg),
    }
    for layer in sorted(cfg.skip_levels, reverse=True):
        level = cfg.skip_levels[layer]
        specs: list[ConvSpec] = []
        c_in = K
        for stage in range(1, S - level + 1):
            prefix = f'decoder.skip{layer}.stage{stage}'
            specs.append(ConvSpec(f'{prefix}.deconv', 'deconv', c_in, w[level], 2, S - stage))
            specs.extend(_conv_block(prefix, w[level], w[level], S - stage, cfg))
            c_in = w[level]
        layout[f'decoder.skip{layer}'] = specs
    layout['decoder.bottleneck'] = [ConvSpec('decoder.bottleneck.deconv', 'deconv', K, w[S - 1], 2, S - 1)]
    for level in range(S - 1, -1, -1):
        c_in = w[level] * (1 + len(skips_at(cfg, level))) + (w[0] if level == 0 else 0)
        specs = _conv_block(f'decoder.level{level}', c_in, w[level], level, cfg)
        if level > 0:
            specs.append(ConvSpec(f'decoder.level{level}.deconv', 'deconv', w[level], w[level - 1], 2, level - 1))
        layout[f'decoder.level{level}'] = specs
    layout['head'] = [ConvSpec('head', 'head', w[0], cfg.classes, 1, 0)]
    return layout


def decoder_shapes(cfg: DecoderConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for specs in decoder_layout(cfg).values():
        for spec in specs:
            shapes[f'{spec.name}.weight'] = spec.weight_shape
            if spec.norm:
                shapes[f'{spec.norm}.gamma'] = (spec.c_out,)
                shapes[f'{spec.norm}.beta'] = (spec.c_out,)
            if spec.kind == 'head':
                shapes[f'{spec.name}.bias'] = (spec.c_out,)
    return shapes


def init_decoder(cfg: DecoderConfig, rng: np.random.Generator, dtype='float32') -> dict[str, np.ndarray]:
    """He-normal convolution weights, unit/zero norm affine, zero head bias."""
    arrays = {}
    for name, shape in decoder_shapes(cfg).items():
        if name.endswith('.gamma'):
            arrays[name] = np.ones(shape, dtype=dtype)
        elif name.endswith('.beta') or name.endswith('.bias'):
            arrays[name] = np.zeros(shape, dtype=dtype)
        else:
            # deconv kernels are stored [C_in, C_out, ...]; fan-in is over C_in either way
            fan_in = shape[1] * np.prod(shape[2:]) if 'deconv' not in name else shape[0]
            arrays[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape).astype(dtype)
    return arrays


def run_specs(specs: list[ConvSpec], x: Tensor, params: Mapping[str, Tensor], cfg: DecoderConfig) -> Tensor:
    norm = ops.instance_norm if cfg.norm == 'instance' else ops.channel_norm
    for spec in specs:
        weight = params[f'{spec.name}.weight']
        if spec.kind == 'deconv':
            x = ops.conv_transpose3d(x, weight, stride=2)
        elif spec.kind == 'head':
            x = ops.conv3d(x, weight, params[f'{spec.name}.bias'])
        else:
            x = ops.conv3d(x, weight, padding=1)
            x = norm(x, params[f'{spec.norm}.gamma'], params[f'{spec.norm}.beta'], cfg.eps)
            x = ops.leaky_relu(x, cfg.negative_slope)
    return x


def reshape_sequence(z: Tensor, cfg: PatchConfig) -> Tensor:
    """``[N, K]`` -> ``[H/P, W/P, D/P, K]`` in the partition's grid order."""
    if z.ndim != 2 or z.shape[0] != cfg.n_patches:
        raise ShapeError(f'sequence {z.shape} does not match patch grid {cfg.grid} ({cfg.n_patches} tokens)')
    return ops.reshape(z, tuple(cfg.grid) + (z.shape[1],))


def _channel_first(grid: Tensor) -> Tensor:
    return ops.transpose(grid, (3, 0, 1, 2))


def project_skip(grid: Tensor, layer: int, params: Mapping[str, Tensor], cfg: DecoderConfig) -> Tensor:
    """Bring the ``[h, w, d, K]`` grid of an extracted layer to its decoder level.

    Returns a channel-first map with the level's width, upsampled ×2 per stage.
    """
    if layer not in cfg.skip_levels:
        raise ConfigurationError(f'layer {layer} has no skip projection')
    return run_specs(decoder_layout(cfg)[f'decoder.skip{layer}'], _channel_first(grid), params, cfg)


def project_input(raw_input: Tensor, params: Mapping[str, Tensor], cfg: DecoderConfig) -> Tensor:
    """Conv block on the raw ``[H, W, D, C]`` volume, at full resolution."""
    return run_specs(decoder_layout(cfg)['decoder.input'], _channel_first(raw_input), params, cfg)


def decode(skips: Mapping[int, Tensor], raw_input: Tensor, params: Mapping[str, Tensor],
           cfg: DecoderConfig) -> Tensor:
    """Decode extracted grids plus the raw input into logits ``[H, W, D, J]``.

    ``skips`` maps layer ids to ``[h, w, d, K]`` grids and must hold every skip
    layer and ``cfg.final_layer``.
    """
    missing = [layer for layer in [*cfg.skip_levels, cfg.final_layer] if layer not in skips]
    if missing:
        raise ConfigurationError(f'decoder is missing extracted states for layers {sorted(missing)}')
    layout = decoder_layout(cfg)
    projected = {
        layer: run_specs(layout[f'decoder.skip{layer}'], _channel_first(skips[layer]), params, cfg)
        for layer in cfg.skip_levels
    }
    raw = run_specs(layout['decoder.input'], _channel_first(raw_input), params, cfg)
    x = run_specs(layout['decoder.bottleneck'], _channel_first(skips[cfg.final_layer]), params, cfg)
    for level in range(cfg.stages - 1, -1, -1):
        parts = [x] + [projected[layer] for layer in skips_at(cfg, level)]
        if level == 0:
            parts.append(raw)
        shapes = {p.shape[1:] for p in parts}
        if len(shapes) != 1:
            raise ShapeError(f'decoder level {level} cannot concatenate maps of sizes {sorted(shapes)}')
        x = run_specs(layout[f'decoder.level{level}'], ops.concat(parts, axis=0), params, cfg)
    logits = run_specs(layout['head'], x, params, cfg)
    return ops.transpose(logits, (1, 2, 3, 0))


def head(logits: Tensor) -> Tensor:
    """Voxel-wise class probabilities from ``[..., J]`` logits.

    The 1x1x1 projection producing the logits runs at the end of :func:`decode`;
    training feeds logits straight into the fused loss.
    """
    return ops.softmax(logits, axis=-1)

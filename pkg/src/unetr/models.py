from __future__ import annotations

import math
from typing import Any, Literal, Optional, Union

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    model_validator,
)


class ErrorResponse(BaseModel):
    detail: Optional[Union[str, list[Any], dict[str, Any]]] = Field(default=None, title='Detail')


class ValidationErrorDetail(BaseModel):
    loc: list[str] = Field(..., title='Loc')
    msg: str = Field(..., title='Msg')
    type: str = Field(..., title='Type')


class PatchConfig(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)
    patch_size: int = Field(..., ge=1, title='Patch Size', description='Patch edge length P in voxels')
    channels: int = Field(..., ge=1, title='Input Channels')
    hidden_size: int = Field(..., ge=1, title='Embedding Width')
    grid: tuple[int, int, int] = Field(..., title='Patch Grid', description='(H/P, W/P, D/P)')

    @property
    def n_patches(self) -> int:
        return math.prod(self.grid)

    @property
    def patch_dim(self) -> int:
        return self.patch_size ** 3 * self.channels

    @property
    def volume_shape(self) -> tuple[int, int, int]:
        return tuple(g * self.patch_size for g in self.grid)


class EncoderConfig(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)
    layers: int = Field(default=12, ge=1, title='Layer Count')
    hidden_size: int = Field(default=768, ge=1, title='Embedding Width')
    heads: int = Field(default=12, ge=1, title='Head Count')
    mlp_hidden: int = Field(default=3072, ge=1, title='MLP Width')
    extract_layers: tuple[int, ...] = Field(default=(3, 6, 9, 12), title='Extracted Layers')
    eps: float = Field(default=1e-6, gt=0, title='Layer Norm Epsilon')

    @property
    def head_width(self) -> int:
        return self.hidden_size // self.heads

    @model_validator(mode='after')
    def validate_encoder(self):
        if self.hidden_size % self.heads:
            raise ValueError(
                f'hidden_size {self.hidden_size} is not divisible by heads {self.heads}'
            )
        layers = self.extract_layers
        if not layers:
            raise ValueError('extract_layers must not be empty')
        if list(layers) != sorted(set(layers)):
            raise ValueError(f'extract_layers must be sorted and unique, got {list(layers)}')
        if layers[-1] != self.layers or layers[0] < 1:
            raise ValueError(
                f'extract_layers must lie in 1..{self.layers} and contain {self.layers}, got {list(layers)}'
            )
        return self


class DecoderConfig(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)
    widths: tuple[int, ...] = Field(
        ..., title='Level Widths',
        description='Channel width per decoder level, full resolution first'
    )
    classes: int = Field(..., ge=2, title='Class Count')
    in_channels: int = Field(default=1, ge=1, title='Input Channels')
    hidden_size: int = Field(default=768, ge=1, title='Embedding Width')
    final_layer: int = Field(default=12, ge=1, title='Bottleneck Layer', description='Extracted layer feeding the bottleneck')
    norm: Literal['instance', 'channel'] = Field(default='instance', title='Normalization')
    eps: float = Field(default=1e-5, gt=0, title='Normalization Epsilon')
    negative_slope: float = Field(default=0.01, ge=0, title='Leaky Rectifier Slope')
    convs_per_block: int = Field(default=2, ge=1, title='Consecutive Convolutions')
    skip_levels: dict[int, int] = Field(
        default_factory=dict, title='Skip Levels',
        description='Extracted layer id -> decoder level it joins'
    )

    @property
    def stages(self) -> int:
        return len(self.widths)


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')
    in_channels: int = Field(default=1, ge=1, title='Input Channels')
    classes: int = Field(default=14, ge=2, title='Class Count', description='Output classes J, background included')
    img_size: tuple[int, int, int] = Field(default=(96, 96, 96), title='Input Volume Size')
    patch_size: int = Field(default=16, ge=4, title='Patch Size')
    hidden_size: int = Field(default=768, ge=1, title='Embedding Width')
    layers: int = Field(default=12, ge=1, title='Transformer Layers')
    heads: int = Field(default=12, ge=1, title='Attention Heads')
    mlp_hidden: Optional[int] = Field(default=None, ge=1, title='MLP Width', description='Defaults to 4 x hidden_size')
    extract_layers: Optional[list[int]] = Field(
        default=None, title='Extracted Layers',
        description='Defaults to the evenly spaced layers L/4, L/2, 3L/4, L'
    )
    base_width: int = Field(default=16, ge=1, title='Decoder Base Width')
    decoder_widths: Optional[list[int]] = Field(
        default=None, title='Decoder Widths',
        description='Explicit per-level widths; defaults to base_width * 2**level'
    )
    decoder_norm: Literal['instance', 'channel'] = Field(default='instance', title='Decoder Normalization')
    negative_slope: float = Field(default=0.01, ge=0, title='Leaky Rectifier Slope')
    dtype: Literal['float32', 'float64'] = Field(default='float32', title='Parameter Precision')

    @model_validator(mode='after')
    def validate_model(self):
        p = self.patch_size
        if p & (p - 1):
            raise ValueError(f'patch_size must be a power of two, got {p}')
        widths = self.decoder_widths
        if widths is not None and len(widths) != self.stages:
            raise ValueError(
                f'decoder_widths needs {self.stages} entries for patch_size {p}, got {len(widths)}'
            )
        if self.extract_layers is not None and not self.extract_layers:
            raise ValueError('extract_layers must not be empty')
        # EncoderConfig re-checks heads and extracted layers
        _ = self.encoder
        return self

    @property
    def stages(self) -> int:
        return int(math.log2(self.patch_size))

    @property
    def grid(self) -> tuple[int, int, int]:
        return tuple(-(-d // self.patch_size) for d in self.img_size)

    @property
    def n_patches(self) -> int:
        return math.prod(self.grid)

    @property
    def padded_size(self) -> tuple[int, int, int]:
        return tuple(g * self.patch_size for g in self.grid)

    @property
    def extraction(self) -> tuple[int, ...]:
        if self.extract_layers is not None:
            return tuple(self.extract_layers)
        L = self.layers
        return tuple(sorted({max(1, round(L * j / 4)) for j in range(1, 5)}))

    @property
    def widths(self) -> tuple[int, ...]:
        if self.decoder_widths is not None:
            return tuple(self.decoder_widths)
        return tuple(self.base_width * 2 ** level for level in range(self.stages))

    @property
    def patch(self) -> PatchConfig:
        return PatchConfig(
            patch_size=self.patch_size,
            channels=self.in_channels,
            hidden_size=self.hidden_size,
            grid=self.grid,
        )

    @property
    def encoder(self) -> EncoderConfig:
        return EncoderConfig(
            layers=self.layers,
            hidden_size=self.hidden_size,
            heads=self.heads,
            mlp_hidden=self.mlp_hidden or 4 * self.hidden_size,
            extract_layers=self.extraction,
        )

    @property
    def decoder(self) -> DecoderConfig:
        skips = self.extraction[:-1][::-1]
        return DecoderConfig(
            widths=self.widths,
            classes=self.classes,
            in_channels=self.in_channels,
            hidden_size=self.hidden_size,
            final_layer=self.extraction[-1],
            norm=self.decoder_norm,
            negative_slope=self.negative_slope,
            skip_levels={
                layer: max(self.stages - rank, 1) for rank, layer in enumerate(skips, start=1)
            },
        )

    @classmethod
    def vit_b16(cls, **overrides) -> 'ModelConfig':
        """The ViT-B/16 reference preset with the frozen decoder width table."""
        params = dict(
            in_channels=1, classes=14, img_size=(96, 96, 96), patch_size=16,
            hidden_size=768, layers=12, heads=12, decoder_widths=[2, 4, 16, 64],
        )
        return cls(**(params | overrides))


class OptimizerConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')
    lr: float = Field(default=1e-4, ge=0, title='Learning Rate')
    beta1: float = Field(default=0.9, ge=0, lt=1, title='First Moment Decay')
    beta2: float = Field(default=0.999, ge=0, lt=1, title='Second Moment Decay')
    eps: float = Field(default=1e-8, gt=0, title='Epsilon')
    weight_decay: float = Field(default=1e-5, ge=0, title='Weight Decay')


class AugmentConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')
    enabled: bool = Field(default=True, title='Enabled')
    rotate_prob: float = Field(default=0.5, ge=0, le=1, title='Rotation Probability')
    flip_prob: float = Field(default=0.5, ge=0, le=1, title='Flip Probability', description='Applied per axis')
    scale_prob: float = Field(default=0.5, ge=0, le=1, title='Intensity Scale Probability')
    scale_range: tuple[float, float] = Field(default=(0.9, 1.1), title='Intensity Scale Range')
    shift_prob: float = Field(default=0.5, ge=0, le=1, title='Intensity Shift Probability')
    shift_range: tuple[float, float] = Field(default=(-0.1, 0.1), title='Intensity Shift Range')


IntensityMode = Literal['hu_window', 'zscore', 'percentile', 'none']


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')
    model: ModelConfig = Field(default_factory=ModelConfig, title='Model')
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig, title='Optimizer')
    augment: AugmentConfig = Field(default_factory=AugmentConfig, title='Augmentation')
    batch_size: int = Field(default=2, ge=1, title='Batch Size')
    iterations: int = Field(default=2000, ge=0, title='Iterations')
    patch: Optional[tuple[int, int, int]] = Field(
        default=None, title='Patch Size',
        description='Training patch size; defaults to model.img_size'
    )
    foreground_ratio: float = Field(default=0.5, ge=0, le=1, title='Foreground Sampling Ratio')
    spacing: Optional[tuple[float, float, float]] = Field(
        default=None, title='Resampling Spacing (mm)',
        description='Resample every volume to this voxel spacing before training; unchanged when unset'
    )
    intensity: IntensityMode = Field(default='none', title='Intensity Normalization')
    split: tuple[float, float, float] = Field(default=(0.8, 0.15, 0.05), title='Train/Val/Test Split')
    val_every: int = Field(default=100, ge=0, title='Validation Interval')
    checkpoint_every: int = Field(default=0, ge=0, title='Checkpoint Interval')
    log_every: int = Field(default=10, ge=1, title='Log Interval')
    overlap: float = Field(default=0.5, ge=0, lt=1, title='Sliding Window Overlap')
    seed: int = Field(default=0, title='Seed')
    threads: int = Field(default=1, ge=1, title='Threads')

    @property
    def patch_shape(self) -> tuple[int, int, int]:
        return tuple(self.patch or self.model.img_size)

    @model_validator(mode='after')
    def validate_train(self):
        p = self.model.patch_size
        if any(s % p for s in self.patch_shape):
            raise ValueError(f'patch {list(self.patch_shape)} is not divisible by patch_size {p}')
        if tuple(self.patch_shape) != tuple(self.model.img_size):
            raise ValueError(
                f'patch {list(self.patch_shape)} must equal model.img_size {list(self.model.img_size)}, '
                'the positional table is sized for it'
            )
        if abs(sum(self.split) - 1.0) > 1e-6:
            raise ValueError(f'split ratios must sum to 1, got {list(self.split)}')
        if self.spacing is not None and min(self.spacing) <= 0:
            raise ValueError(f'spacing must be positive, got {list(self.spacing)}')
        return self


class InferConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')
    window: Optional[tuple[int, int, int]] = Field(default=None, title='Window Size')
    overlap: float = Field(default=0.5, ge=0, lt=1, title='Overlap')
    intensity: Optional[IntensityMode] = Field(
        default=None, title='Intensity Normalization',
        description='Defaults to the mode the checkpoint was trained with'
    )
    spacing: Optional[tuple[float, float, float]] = Field(
        default=None, title='Resampling Spacing (mm)',
        description='Defaults to the spacing the checkpoint was trained at'
    )
    threads: int = Field(default=1, ge=1, title='Threads')


class PhantomSpec(BaseModel):
    model_config = ConfigDict(extra='forbid')
    dims: tuple[int, int, int] = Field(default=(48, 48, 48), title='Volume Size')
    classes: int = Field(default=2, ge=2, title='Class Count')
    channels: int = Field(default=1, ge=1, title='Image Channels')
    volumes: int = Field(default=40, ge=1, title='Volume Count')
    shapes: Optional[list[Literal['ellipsoid', 'box']]] = Field(
        default=None, title='Shape Families',
        description='One shape family per foreground class; ellipsoids by default'
    )
    count_range: tuple[int, int] = Field(default=(1, 2), title='Objects Per Class')
    radius_range: tuple[float, float] = Field(
        default=(0.15, 0.3), title='Radius Range',
        description='Semi-axis length as a fraction of each volume extent'
    )
    intensity_means: Optional[list[float]] = Field(
        default=None, title='Class Intensity Means',
        description='Mean image intensity per class, background first'
    )
    noise_std: float = Field(default=0.1, ge=0, title='Noise Standard Deviation')
    foreground_fraction: tuple[float, float] = Field(default=(0.02, 0.6), title='Foreground Fraction Range')
    spacing: tuple[float, float, float] = Field(default=(1.0, 1.0, 1.0), title='Voxel Spacing (mm)')
    seed: int = Field(default=0, title='Seed')

    @property
    def families(self) -> list[str]:
        return list(self.shapes or ['ellipsoid'] * (self.classes - 1))

    @property
    def means(self) -> list[float]:
        if self.intensity_means is not None:
            return list(self.intensity_means)
        return [float(j) / (self.classes - 1) for j in range(self.classes)]

    @model_validator(mode='after')
    def validate_phantom(self):
        lo, hi = self.radius_range
        if not 0 < lo <= hi:
            raise ValueError(f'radius_range must satisfy 0 < low <= high, got {list(self.radius_range)}')
        if hi >= 0.5:
            raise ValueError(f'shapes with radius fraction {hi} exceed the volume')
        if self.count_range[0] < 1 or self.count_range[0] > self.count_range[1]:
            raise ValueError(f'count_range must satisfy 1 <= low <= high, got {list(self.count_range)}')
        if len(self.families) != self.classes - 1:
            raise ValueError(f'shapes needs {self.classes - 1} entries, got {len(self.families)}')
        if len(self.means) != self.classes:
            raise ValueError(f'intensity_means needs {self.classes} entries, got {len(self.means)}')
        f_lo, f_hi = self.foreground_fraction
        if not 0 <= f_lo < f_hi <= 1:
            raise ValueError(f'invalid foreground_fraction {list(self.foreground_fraction)}')
        return self


class ArrayHeader(BaseModel):
    model_config = ConfigDict(extra='forbid')
    name: Literal['image', 'label'] = Field(..., title='Array Name')
    dtype: Literal['f32', 'u8'] = Field(..., title='Data Type')
    channels: int = Field(..., ge=1, title='Channels')


class VolumeHeader(BaseModel):
    model_config = ConfigDict(extra='forbid')
    dims: tuple[int, int, int] = Field(..., title='Dimensions')
    spacing: tuple[float, float, float] = Field(default=(1.0, 1.0, 1.0), title='Spacing (mm)')
    byte_order: Literal['little'] = Field(default='little', title='Byte Order')
    arrays: list[ArrayHeader] = Field(..., min_length=1, title='Arrays')


class TensorEntry(BaseModel):
    model_config = ConfigDict(extra='forbid')
    name: str = Field(..., title='Tensor Name')
    shape: list[int] = Field(..., title='Shape')


class CheckpointHeader(BaseModel):
    model_config = ConfigDict(extra='forbid')
    version: int = Field(..., title='Format Version')
    model: ModelConfig = Field(..., title='Model Config')
    tensors: list[TensorEntry] = Field(..., title='Parameter Tensors')
    optimizer_step: Optional[int] = Field(default=None, title='Optimizer Step')
    iteration: Optional[int] = Field(default=None, title='Training Iteration')
    intensity: IntensityMode = Field(default='none', title='Training Intensity Normalization')
    spacing: Optional[tuple[float, float, float]] = Field(default=None, title='Training Spacing (mm)')


class ClassMetric(BaseModel):
    model_config = ConfigDict(populate_by_name=True)
    class_id: int = Field(..., alias='class', title='Class')
    dice: float = Field(..., ge=0, le=1, title='Dice')
    hd95: Optional[float] = Field(default=None, ge=0, title='HD95 (mm)')
    flag: Optional[str] = Field(default=None, title='Flag')


class MetricReport(BaseModel):
    model_config = ConfigDict(populate_by_name=True)
    classes: list[ClassMetric] = Field(..., title='Per-Class Metrics')
    mean_dice: float = Field(..., title='Mean Dice')
    mean_hd95: Optional[float] = Field(default=None, title='Mean HD95 (mm)')


class ComplexityRow(BaseModel):
    module: str = Field(..., title='Module')
    params: int = Field(..., ge=0, title='Parameters')
    flops: int = Field(..., ge=0, title='FLOPs')


class ComplexityReport(BaseModel):
    input_size: tuple[int, int, int] = Field(..., title='Input Size')
    patch_size: int = Field(..., title='Patch Size')
    n_patches: int = Field(..., title='Sequence Length')
    rows: list[ComplexityRow] = Field(..., title='Per-Module Breakdown')
    decoder_widths: list[int] = Field(..., title='Decoder Widths')
    windows: int = Field(
        default=1, title='Scheduled Windows', description='Window schedule length, clamped repeats included'
    )
    evaluated_windows: int = Field(default=1, title='Evaluated Windows')

    @property
    def params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def flops(self) -> int:
        return sum(r.flops for r in self.rows)

    @property
    def total_pass_flops(self) -> int:
        return self.flops * self.evaluated_windows


class LossRecord(BaseModel):
    iteration: int = Field(..., title='Iteration')
    loss: float = Field(..., title='Loss')
    val_dice: Optional[float] = Field(default=None, title='Validation Dice')

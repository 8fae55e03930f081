"""Resampling, intensity normalization, patch sampling, augmentation and dataset splitting."""
from __future__ import annotations

import math
import warnings
from typing import Optional, Sequence, TypeVar

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, NumericalError, ShapeError
from .models import AugmentConfig, IntensityMode
from .volumes import VolumeSample

T = TypeVar('T')


def resize(array: np.ndarray, dims: Sequence[int], order: int = 1) -> np.ndarray:
    """Interpolate the three spatial axes of ``array`` onto exactly ``dims``; trailing axes are kept."""
    dims = tuple(int(d) for d in dims)
    if tuple(array.shape[:3]) == dims:
        return array
    factors = [d / n for d, n in zip(dims, array.shape[:3])] + [1.0] * (array.ndim - 3)
    return ndimage.zoom(array, factors, order=order, mode='nearest', grid_mode=True)


def resample(sample: VolumeSample, spacing: Sequence[float]) -> VolumeSample:
    """Resample ``sample`` onto voxels of ``spacing`` mm.

    Images are interpolated linearly, labels by nearest neighbour. The physical
    extent is preserved up to rounding of the new dimensions.
    """
    spacing = tuple(float(s) for s in spacing)
    if any(s <= 0 for s in spacing):
        raise ConfigurationError(f'spacing must be positive, got {list(spacing)}')
    if np.allclose(spacing, sample.spacing):
        return sample
    dims = tuple(max(1, int(round(n * old / new))) for n, old, new in zip(sample.dims, sample.spacing, spacing))
    image = resize(sample.image, dims, order=1).astype(np.float32)
    label = None if sample.label is None else resize(sample.label, dims, order=0)
    return VolumeSample(image=image, label=label, spacing=spacing, name=sample.name)


def normalize_intensity(
    volume: np.ndarray,
    mode: IntensityMode,
    hu_range: tuple[float, float] = (-1000.0, 1000.0),
    percentiles: tuple[float, float] = (5.0, 95.0),
    mask: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Normalize a ``[H, W, D, C]`` volume.

    ``hu_window`` clips to ``hu_range`` and maps it onto [0, 1]. ``zscore``
    standardizes each channel. ``percentile`` maps the given foreground
    percentiles of each channel to 0 and 1 and clips; the foreground is ``mask``
    or, by default, the voxels with nonzero intensity.
    """
    volume = np.asarray(volume, dtype=np.float32)
    if volume.ndim == 3:
        volume = volume[..., None]
    if mode == 'none':
        return volume
    if mode == 'hu_window':
        lo, hi = hu_range
        return ((np.clip(volume, lo, hi) - lo) / (hi - lo)).astype(np.float32)
    out = np.empty_like(volume)
    for c in range(volume.shape[3]):
        channel = volume[..., c]
        if mode == 'zscore':
            mean, std = channel.mean(dtype=np.float64), channel.std(dtype=np.float64)
            if std == 0:
                raise NumericalError(f'channel {c} has zero standard deviation; cannot z-score')
            out[..., c] = (channel - mean) / std
        elif mode == 'percentile':
            region = channel != 0 if mask is None else np.asarray(mask, dtype=bool)
            values = channel[region]
            if values.size == 0:
                raise NumericalError(f'channel {c} has no foreground voxels for percentile scaling')
            lo, hi = np.percentile(values, percentiles)
            if hi == lo:
                raise NumericalError(f'channel {c} percentiles coincide at {lo}')
            out[..., c] = np.clip((channel - lo) / (hi - lo), 0.0, 1.0)
        else:
            raise ConfigurationError(f'unknown intensity mode {mode!r}')
    return out


def choose_center(label: np.ndarray, rng: np.random.Generator,
                  foreground_ratio: float = 0.5) -> tuple[tuple[int, int, int], bool]:
    """Pick a patch center; foreground (label > 0) with probability ``foreground_ratio``.

    Returns the voxel index and whether it was drawn from the foreground.
    """
    flat = label.reshape(-1) > 0
    want_foreground = rng.random() < foreground_ratio
    if want_foreground:
        candidates = np.flatnonzero(flat)
        if candidates.size == 0:
            warnings.warn('label has no foreground voxels; sampling background instead', RuntimeWarning)
            want_foreground = False
    if not want_foreground:
        candidates = np.flatnonzero(~flat)
        if candidates.size == 0:
            candidates = np.arange(flat.size)
    index = int(candidates[rng.integers(candidates.size)])
    return tuple(int(i) for i in np.unravel_index(index, label.shape)), want_foreground


def _pad_to(array: np.ndarray, size: Sequence[int]) -> np.ndarray:
    extra = [max(0, s - n) for s, n in zip(size, array.shape[:3])]
    if not any(extra):
        return array
    return np.pad(array, [(0, e) for e in extra] + [(0, 0)] * (array.ndim - 3))


def sample_patch(sample: VolumeSample, size: Sequence[int], rng: np.random.Generator,
                 foreground_ratio: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Crop an image/label patch of exactly ``size`` around a sampled center."""
    if sample.label is None:
        raise ShapeError(f'sample {sample.name!r} has no label to sample patches from')
    size = tuple(int(s) for s in size)
    image, label = _pad_to(sample.image, size), _pad_to(sample.label, size)
    center, _ = choose_center(label, rng, foreground_ratio)
    origin = [min(max(c - s // 2, 0), n - s) for c, s, n in zip(center, size, label.shape)]
    window = tuple(slice(o, o + s) for o, s in zip(origin, size))
    return image[window].copy(), label[window].copy()


_PLANES = ((0, 1), (0, 2), (1, 2))


def augment(image: np.ndarray, label: np.ndarray, rng: np.random.Generator,
            cfg: Optional[AugmentConfig] = None) -> tuple[np.ndarray, np.ndarray]:
    """Random 90° rotation, per-axis flips, then intensity scale and shift on the image."""
    cfg = cfg or AugmentConfig()
    if not cfg.enabled:
        return image, label
    if rng.random() < cfg.rotate_prob:
        planes = [p for p in _PLANES if image.shape[p[0]] == image.shape[p[1]]]
        k = int(rng.integers(1, 4))
        plane = planes[int(rng.integers(len(planes)))] if planes else None
        if plane is not None:
            image, label = np.rot90(image, k, axes=plane), np.rot90(label, k, axes=plane)
    for axis in range(3):
        if rng.random() < cfg.flip_prob:
            image, label = np.flip(image, axis), np.flip(label, axis)
    image = np.ascontiguousarray(image, dtype=np.float32)
    label = np.ascontiguousarray(label)
    if rng.random() < cfg.scale_prob:
        image = image * np.float32(rng.uniform(*cfg.scale_range))
    if rng.random() < cfg.shift_prob:
        image = image + np.float32(rng.uniform(*cfg.shift_range))
    return image, label


def split_dataset(items: Sequence[T], ratios: Sequence[float] = (0.8, 0.15, 0.05),
                  seed: int = 0) -> tuple[list[T], ...]:
    """Deterministically shuffle and cut ``items`` into len(ratios) parts."""
    if any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-6):
        raise ConfigurationError(f'split ratios must be non-negative and sum to 1, got {list(ratios)}')
    order = np.random.default_rng(seed).permutation(len(items))
    counts = [int(round(r * len(items))) for r in ratios[:-1]]
    bounds = np.cumsum(counts).clip(max=len(items))
    parts = np.split(order, bounds)
    return tuple([items[i] for i in part] for part in parts)

"""Sliding-window inference with uniform blending."""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError
from .network import UnetrModel


def window_starts(dim: int, window: int, overlap: float = 0.5) -> list[int]:
    """Start offsets along one axis.

    A single window when the axis fits; otherwise ceil(dim / stride) windows at
    ``min(i * stride, dim - window)``. Clamped starts may repeat; the schedule
    keeps the repeats, the blend counts each distinct window once.
    """
    if not 0.0 <= overlap < 1.0:
        raise ConfigurationError(f'overlap must lie in [0, 1), got {overlap}')
    if dim <= window:
        return [0]
    stride = max(1, int(window * (1.0 - overlap)))
    return [min(i * stride, dim - window) for i in range(math.ceil(dim / stride))]


def window_positions(shape: Sequence[int], window: Sequence[int], overlap: float = 0.5) -> list[tuple[int, int, int]]:
    """The full window schedule, clamped repeats included."""
    axes = [window_starts(n, w, overlap) for n, w in zip(shape, window)]
    return list(itertools.product(*axes))


def distinct_positions(shape: Sequence[int], window: Sequence[int],
                       overlap: float = 0.5) -> list[tuple[int, int, int]]:
    """Windows that are actually evaluated, in schedule order."""
    return list(dict.fromkeys(window_positions(shape, window, overlap)))


def coverage_map(shape: Sequence[int], window: Sequence[int], overlap: float = 0.5) -> np.ndarray:
    """Number of distinct windows touching each voxel (over the padded extent, cropped back to ``shape``)."""
    padded = [max(n, w) for n, w in zip(shape, window)]
    counts = np.zeros(padded, dtype=np.int32)
    for start in distinct_positions(padded, window, overlap):
        counts[tuple(slice(s, s + w) for s, w in zip(start, window))] += 1
    return counts[tuple(slice(0, n) for n in shape)]


def sliding_window_infer(
    volume: np.ndarray,
    model: UnetrModel,
    window: Optional[Sequence[int]] = None,
    overlap: float = 0.5,
    threads: int = 1,
) -> np.ndarray:
    """Class probabilities ``[H, W, D, J]`` for a volume of any size.

    Every distinct window contributes with equal weight. Voxels covered by more
    than one window are renormalized onto the probability simplex; voxels covered
    once keep the window's softmax output unchanged. Windows may run on several
    threads; accumulation always follows the window order.
    """
    volume = np.asarray(volume, dtype=model.config.dtype)
    if volume.ndim == 3:
        volume = volume[..., None]
    window = tuple(window or model.config.img_size)
    P = model.config.patch_size
    if any(w % P for w in window):
        raise ConfigurationError(f'window {list(window)} is not divisible by patch size {P}')
    shape = volume.shape[:3]
    padded_shape = tuple(max(n, w) for n, w in zip(shape, window))
    if padded_shape != shape:
        volume = np.pad(volume, [(0, p - n) for p, n in zip(padded_shape, shape)] + [(0, 0)])

    distinct = distinct_positions(padded_shape, window, overlap)

    def region(start: tuple[int, ...]) -> tuple[slice, ...]:
        return tuple(slice(s, s + w) for s, w in zip(start, window))

    def run(start: tuple[int, ...]) -> np.ndarray:
        return model.predict(volume[region(start)])

    with ThreadPoolExecutor(max_workers=threads) as pool:
        predictions = dict(zip(distinct, pool.map(run, distinct)))

    classes = model.config.classes
    total = np.zeros(padded_shape + (classes,), dtype=volume.dtype)
    counts = np.zeros(padded_shape, dtype=np.int32)
    for start in distinct:
        total[region(start)] += predictions[start]
        counts[region(start)] += 1

    blended = counts > 1
    if blended.any():
        total[blended] /= total[blended].sum(axis=-1, keepdims=True)
    return total[tuple(slice(0, n) for n in shape)]

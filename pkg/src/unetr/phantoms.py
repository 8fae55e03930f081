"""Synthetic phantom volumes with known geometry.

Each foreground class is painted as a few random ellipsoids or boxes; classes
painted later overwrite earlier ones. The image is the class intensity mean plus
Gaussian noise, independently per channel.
"""
from __future__ import annotations

from typing import Iterator

import numpy as np

from .errors import ConfigurationError
from .models import PhantomSpec
from .volumes import VolumeSample

MAX_ATTEMPTS = 200


def _coordinates(dims: tuple[int, int, int]) -> list[np.ndarray]:
    # voxel centres as fractions of each extent, broadcastable
    return [((np.arange(n) + 0.5) / n).reshape([-1 if a == axis else 1 for a in range(3)])
            for axis, n in enumerate(dims)]


def _shape_mask(family: str, coords: list[np.ndarray], center: np.ndarray, radii: np.ndarray) -> np.ndarray:
    if family == 'box':
        inside = np.ones((1, 1, 1), dtype=bool)
        for c, x, r in zip(center, coords, radii):
            inside = inside & (np.abs(x - c) <= r)
        return inside
    total = sum(((x - c) / r) ** 2 for c, x, r in zip(center, coords, radii))
    return total <= 1.0


def draw_label(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    coords = _coordinates(spec.dims)
    label = np.zeros(spec.dims, dtype=np.uint8)
    lo, hi = spec.radius_range
    for j, family in enumerate(spec.families, start=1):
        count = int(rng.integers(spec.count_range[0], spec.count_range[1] + 1))
        for _ in range(count):
            radii = rng.uniform(lo, hi, 3)
            center = rng.uniform(radii, 1.0 - radii)
            mask = np.broadcast_to(_shape_mask(family, coords, center, radii), spec.dims)
            label[mask] = j
    return label


def _acceptable(label: np.ndarray, spec: PhantomSpec) -> bool:
    fraction = float((label > 0).mean())
    f_lo, f_hi = spec.foreground_fraction
    present = np.unique(label)
    return f_lo <= fraction <= f_hi and present.size == spec.classes


def generate_phantom(spec: PhantomSpec, rng: np.random.Generator, name: str = '') -> VolumeSample:
    for _ in range(MAX_ATTEMPTS):
        label = draw_label(spec, rng)
        if _acceptable(label, spec):
            break
    else:
        raise ConfigurationError(
            f'could not draw a phantom with every class present and foreground fraction in '
            f'{list(spec.foreground_fraction)} after {MAX_ATTEMPTS} attempts'
        )
    means = np.asarray(spec.means, dtype=np.float32)
    noise = rng.normal(0.0, spec.noise_std, spec.dims + (spec.channels,)).astype(np.float32)
    image = means[label][..., None] + noise
    return VolumeSample(image=image, label=label, spacing=spec.spacing, name=name)


def iter_phantoms(spec: PhantomSpec) -> Iterator[VolumeSample]:
    """Volume ``i`` depends only on (seed, i)."""
    children = np.random.SeedSequence(spec.seed).spawn(spec.volumes)
    width = len(str(spec.volumes - 1))
    for i, child in enumerate(children):
        yield generate_phantom(spec, np.random.default_rng(child), name=f'phantom_{i:0{width}d}')


def generate_phantoms(spec: PhantomSpec) -> list[VolumeSample]:
    return list(iter_phantoms(spec))

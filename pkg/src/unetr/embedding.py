"""Patch partition and the linear patch embedding.

A volume ``[H, W, D, C]`` is cut into non-overlapping P³ cubes. Rows of the
partitioned matrix follow the patch grid lexicographically (x slowest, z
fastest). Inside a row the values are ordered channel-major, then x, y and z,
with z varying fastest. Checkpoints depend on this order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ShapeError
from .models import PatchConfig
from .tensor import Tensor


@dataclass
class EmbeddingParams:
    projection: Tensor  # E, (P³·C) x K
    position: Tensor  # E_pos, N x K

    @property
    def hidden_size(self) -> int:
        return self.projection.shape[1]


def pad_to_multiple(volume: np.ndarray, patch_size: int) -> np.ndarray:
    """Zero-pad the spatial axes of ``[H, W, D, C]`` at the high end up to a multiple of P."""
    extra = [(-n) % patch_size for n in volume.shape[:3]]
    if not any(extra):
        return volume
    return np.pad(volume, [(0, e) for e in extra] + [(0, 0)] * (volume.ndim - 3))


def partition(volume: Tensor, patch_size: int) -> Tensor:
    if volume.ndim != 4:
        raise ShapeError(f'partition expects a [H, W, D, C] volume, got shape {volume.shape}')
    P = patch_size
    H, W, D, C = volume.shape
    if H % P or W % P or D % P:
        raise ShapeError(f'volume dims {(H, W, D)} are not divisible by patch size {P}; pad first')
    gh, gw, gd = H // P, W // P, D // P
    x = ops.reshape(volume, (gh, P, gw, P, gd, P, C))
    x = ops.transpose(x, (0, 2, 4, 6, 1, 3, 5))
    return ops.reshape(x, (gh * gw * gd, C * P ** 3))


def unpartition(patches: Tensor, cfg: PatchConfig) -> Tensor:
    P, C = cfg.patch_size, cfg.channels
    gh, gw, gd = cfg.grid
    if patches.shape != (cfg.n_patches, cfg.patch_dim):
        raise ShapeError(
            f'patches of shape {patches.shape} do not match grid {cfg.grid} '
            f'(expected {(cfg.n_patches, cfg.patch_dim)})'
        )
    x = ops.reshape(patches, (gh, gw, gd, C, P, P, P))
    x = ops.transpose(x, (0, 4, 1, 5, 2, 6, 3))
    return ops.reshape(x, (gh * P, gw * P, gd * P, C))


def embed(patches: Tensor, params: EmbeddingParams) -> Tensor:
    """z0 = patches · E + E_pos. No class token is prepended."""
    E, E_pos = params.projection, params.position
    if patches.ndim != 2 or patches.shape[1] != E.shape[0]:
        raise ShapeError(f'patches {patches.shape} do not match projection {E.shape}')
    if E_pos.shape != (patches.shape[0], E.shape[1]):
        raise ShapeError(
            f'position table {E_pos.shape} does not match sequence {(patches.shape[0], E.shape[1])}'
        )
    return ops.add(ops.matmul(patches, E), E_pos)


def embedding_shapes(cfg: PatchConfig) -> dict[str, tuple[int, ...]]:
    return {
        'embedding.projection': (cfg.patch_dim, cfg.hidden_size),
        'embedding.position': (cfg.n_patches, cfg.hidden_size),
    }


def init_embedding(cfg: PatchConfig, rng: np.random.Generator, dtype='float32') -> dict[str, np.ndarray]:
    bound = math.sqrt(6.0 / (cfg.patch_dim + cfg.hidden_size))
    return {
        'embedding.projection': rng.uniform(-bound, bound, (cfg.patch_dim, cfg.hidden_size)).astype(dtype),
        'embedding.position': rng.normal(0.0, 0.02, (cfg.n_patches, cfg.hidden_size)).astype(dtype),
    }

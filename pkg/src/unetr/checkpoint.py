"""Checkpoint serialization.

Layout (all integers little-endian)::

    b'UNETRCKP' | u16 version | u32 header length
    | header JSON (sorted keys): model config, tensors, training pre-processing
    | parameter tensors, float32 LE, in header order
    | optimizer first moments, then second moments (only when optimizer_step is set)
    | sha256 of everything above (32 bytes)
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from pydantic import ValidationError

from .errors import ChecksumError, FormatError, ShapeError
from .models import CheckpointHeader, IntensityMode, ModelConfig, TensorEntry
from .network import UnetrModel, parameter_shapes
from .optim import OptimizerState
from .volumes import atomic_write

MAGIC = b'UNETRCKP'
VERSION = 1
_PREFIX = struct.Struct('<8sHI')
_DIGEST = 32
_F32 = np.dtype('<f4')


@dataclass
class Checkpoint:
    model: UnetrModel
    optimizer: Optional[OptimizerState] = None
    iteration: Optional[int] = None
    intensity: IntensityMode = 'none'
    spacing: Optional[tuple[float, float, float]] = None


def encode_checkpoint(model: UnetrModel, optimizer: Optional[OptimizerState] = None,
                      iteration: Optional[int] = None, intensity: IntensityMode = 'none',
                      spacing: Optional[Sequence[float]] = None) -> bytes:
    arrays = model.arrays()
    header = CheckpointHeader(
        version=VERSION,
        model=model.config,
        tensors=[TensorEntry(name=name, shape=list(a.shape)) for name, a in arrays.items()],
        optimizer_step=None if optimizer is None else optimizer.step,
        iteration=iteration,
        intensity=intensity,
        spacing=None if spacing is None else tuple(spacing),
    )
    header_bytes = json.dumps(header.model_dump(mode='json'), sort_keys=True, separators=(',', ':')).encode()
    chunks = [_PREFIX.pack(MAGIC, VERSION, len(header_bytes)), header_bytes]
    chunks.extend(np.ascontiguousarray(a, dtype=_F32).tobytes() for a in arrays.values())
    if optimizer is not None:
        for moments in (optimizer.m, optimizer.v):
            for name, a in arrays.items():
                chunks.append(np.ascontiguousarray(moments.get(name, np.zeros_like(a)), dtype=_F32).tobytes())
    body = b''.join(chunks)
    return body + hashlib.sha256(body).digest()


def decode_checkpoint(raw: bytes, expected: Optional[ModelConfig] = None) -> Checkpoint:
    """Parse checkpoint bytes.

    When ``expected`` is given, every stored tensor must match that config's shapes.
    """
    if len(raw) < _PREFIX.size + _DIGEST:
        raise FormatError('checkpoint is truncated')
    magic, version, header_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError('bad magic, not a checkpoint file')
    if version != VERSION:
        raise FormatError(f'unsupported checkpoint version {version} (this build reads version {VERSION})')
    body, digest = raw[:-_DIGEST], raw[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError('checkpoint checksum mismatch; the file is corrupted')

    try:
        header = CheckpointHeader.model_validate_json(body[_PREFIX.size:_PREFIX.size + header_len])
    except ValidationError as e:
        raise FormatError(f'invalid checkpoint header: {e.errors()[0]["msg"]}') from None

    names = [t.name for t in header.tensors]
    if len(set(names)) != len(names):
        raise FormatError('checkpoint lists a tensor name more than once')
    config = expected or header.model
    shapes = parameter_shapes(config)
    stored = {t.name: tuple(t.shape) for t in header.tensors}
    for name, shape in shapes.items():
        if name not in stored:
            raise FormatError(f'checkpoint is missing tensor {name!r}')
        if stored[name] != shape:
            raise ShapeError(f'tensor {name!r} has shape {stored[name]} in the checkpoint, expected {shape}')
    extra = sorted(set(stored) - set(shapes))
    if extra:
        raise FormatError(f'checkpoint has unexpected tensors: {", ".join(extra[:5])}')

    offset = _PREFIX.size + header_len
    sets = 3 if header.optimizer_step is not None else 1
    needed = sum(int(np.prod(t.shape)) for t in header.tensors) * _F32.itemsize * sets
    if len(body) - offset != needed:
        raise FormatError(f'checkpoint payload holds {len(body) - offset} bytes, header describes {needed}')

    def read_set() -> dict[str, np.ndarray]:
        nonlocal offset
        out = {}
        for t in header.tensors:
            count = int(np.prod(t.shape))
            out[t.name] = np.frombuffer(body, dtype=_F32, count=count, offset=offset).reshape(t.shape).astype(np.float32)
            offset += count * _F32.itemsize
        return out

    params = read_set()
    optimizer = None
    if header.optimizer_step is not None:
        optimizer = OptimizerState(step=header.optimizer_step, m=read_set(), v=read_set())
    model = UnetrModel(config, {name: params[name] for name in shapes})
    return Checkpoint(
        model=model, optimizer=optimizer, iteration=header.iteration,
        intensity=header.intensity, spacing=header.spacing,
    )


def save_checkpoint(path, model: UnetrModel, optimizer: Optional[OptimizerState] = None,
                    iteration: Optional[int] = None, intensity: IntensityMode = 'none',
                    spacing: Optional[Sequence[float]] = None) -> Path:
    path = Path(path)
    atomic_write(path, encode_checkpoint(model, optimizer, iteration, intensity, spacing))
    return path


def load_checkpoint(path, expected: Optional[ModelConfig] = None) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes(), expected)


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()

"""Volume file format.

A volume file is a magic line, one JSON header line, then the raw little-endian
payload: the ``f32`` image ``[H, W, D, C]`` in C order, followed by the ``u8``
label ``[H, W, D]`` when present.
"""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import ValidationError

from .errors import FormatError, ShapeError
from .models import ArrayHeader, VolumeHeader

MAGIC = b'UNETRVOL 1\n'
SUFFIX = '.vol'
_DTYPES = {'f32': np.dtype('<f4'), 'u8': np.dtype('u1')}


@dataclass
class VolumeSample:
    image: np.ndarray  # [H, W, D, C] float32
    label: Optional[np.ndarray] = None  # [H, W, D] integer classes
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    name: str = field(default='')

    def __post_init__(self) -> None:
        if self.image.ndim == 3:
            self.image = self.image[..., None]
        if self.image.ndim != 4:
            raise ShapeError(f'image must be [H, W, D, C], got shape {self.image.shape}')
        if self.label is not None and self.label.shape != self.image.shape[:3]:
            raise ShapeError(f'label {self.label.shape} does not match image {self.image.shape}')

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.image.shape[:3])

    @property
    def channels(self) -> int:
        return self.image.shape[3]


def atomic_write(path: Path, payload: bytes) -> None:
    """Write to a temporary file beside ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f'.{path.name}.', dir=path.parent)
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_volume(sample: VolumeSample) -> bytes:
    arrays = [ArrayHeader(name='image', dtype='f32', channels=sample.channels)]
    chunks = [np.ascontiguousarray(sample.image, dtype=_DTYPES['f32']).tobytes()]
    if sample.label is not None:
        if sample.label.size and (sample.label.min() < 0 or sample.label.max() > 255):
            raise FormatError('label values must fit in an unsigned byte')
        arrays.append(ArrayHeader(name='label', dtype='u8', channels=1))
        chunks.append(np.ascontiguousarray(sample.label, dtype=_DTYPES['u8']).tobytes())
    header = VolumeHeader(dims=sample.dims, spacing=tuple(float(s) for s in sample.spacing), arrays=arrays)
    return MAGIC + header.model_dump_json().encode() + b'\n' + b''.join(chunks)


def decode_volume(raw: bytes, name: str = '') -> VolumeSample:
    if not raw.startswith(MAGIC):
        raise FormatError(f'{name or "volume"}: bad magic, not a volume file')
    end = raw.find(b'\n', len(MAGIC))
    if end < 0:
        raise FormatError(f'{name or "volume"}: header line is not terminated')
    try:
        header = VolumeHeader.model_validate_json(raw[len(MAGIC):end])
    except ValidationError as e:
        raise FormatError(f'{name or "volume"}: invalid header: {e.errors()[0]["msg"]}') from None
    voxels = int(np.prod(header.dims))
    payload = memoryview(raw)[end + 1:]
    expected = sum(voxels * a.channels * _DTYPES[a.dtype].itemsize for a in header.arrays)
    if len(payload) < expected:
        raise FormatError(f'{name or "volume"}: truncated payload, {len(payload)} of {expected} bytes')
    if len(payload) > expected:
        raise FormatError(f'{name or "volume"}: {len(payload) - expected} trailing bytes after payload')
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for a in header.arrays:
        count = voxels * a.channels
        data = np.frombuffer(payload, dtype=_DTYPES[a.dtype], count=count, offset=offset)
        offset += count * _DTYPES[a.dtype].itemsize
        arrays[a.name] = data.reshape(tuple(header.dims) + (a.channels,))
    if 'image' not in arrays:
        raise FormatError(f'{name or "volume"}: no image array')
    label = arrays.get('label')
    return VolumeSample(
        image=arrays['image'].astype(np.float32),
        label=None if label is None else label[..., 0].copy(),
        spacing=header.spacing,
        name=name,
    )


def write_volume(sample: VolumeSample, path) -> Path:
    path = Path(path)
    atomic_write(path, encode_volume(sample))
    return path


def read_volume(path) -> VolumeSample:
    path = Path(path)
    return decode_volume(path.read_bytes(), name=path.stem)


def list_volumes(directory) -> list[Path]:
    return sorted(Path(directory).glob(f'*{SUFFIX}'))


def read_dataset(directory) -> list[VolumeSample]:
    paths = list_volumes(directory)
    if not paths:
        raise FileNotFoundError(f'no {SUFFIX} files in {directory}')
    return [read_volume(p) for p in paths]

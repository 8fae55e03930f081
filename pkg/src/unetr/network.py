from __future__ import annotations

from typing import Mapping, Optional, Union

import numpy as np

from . import ops
from .decoder import decode, decoder_shapes, head, init_decoder, reshape_sequence
from .embedding import EmbeddingParams, embed, embedding_shapes, init_embedding, pad_to_multiple, partition
from .encoder import BlockParams, encode, encoder_shapes, init_encoder
from .errors import ConfigurationError, ShapeError
from .models import ModelConfig
from .tensor import Tensor, no_grad

ArrayLike = Union[np.ndarray, Tensor]


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every learnable tensor of the network, in canonical (checkpoint) order."""
    shapes = embedding_shapes(config.patch)
    shapes.update(encoder_shapes(config.encoder))
    shapes.update(decoder_shapes(config.decoder))
    return shapes


class UnetrModel:
    """The full network: patch embedding, transformer encoder and convolutional decoder.

    Parameters are held as a name -> :class:`Tensor` mapping. Updates produce a
    new model rather than mutating tensors in place.
    """

    def __init__(self, config: ModelConfig, parameters: Mapping[str, ArrayLike]) -> None:
        self.config = config
        shapes = parameter_shapes(config)
        missing = [name for name in shapes if name not in parameters]
        if missing:
            raise ConfigurationError(f'missing parameter tensors: {", ".join(missing[:5])}')
        unknown = [name for name in parameters if name not in shapes]
        if unknown:
            raise ConfigurationError(f'unexpected parameter tensors: {", ".join(unknown[:5])}')
        self.parameters: dict[str, Tensor] = {}
        for name, shape in shapes.items():
            value = parameters[name]
            data = value.data if isinstance(value, Tensor) else np.asarray(value)
            if tuple(data.shape) != shape:
                raise ShapeError(f'parameter {name!r} has shape {tuple(data.shape)}, expected {shape}')
            self.parameters[name] = Tensor(data.astype(config.dtype, copy=False), requires_grad=True, name=name)

    def __repr__(self) -> str:
        c = self.config
        return (
            f'<UnetrModel P={c.patch_size} K={c.hidden_size} L={c.layers} heads={c.heads} '
            f'J={c.classes} params={self.n_params:,}>'
        )

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0) -> 'UnetrModel':
        rng = np.random.default_rng(seed)
        arrays = init_embedding(config.patch, rng, config.dtype)
        arrays.update(init_encoder(config.encoder, rng, config.dtype))
        arrays.update(init_decoder(config.decoder, rng, config.dtype))
        return cls(config, arrays)

    @property
    def n_params(self) -> int:
        return sum(t.size for t in self.parameters.values())

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.parameters.items()}

    def with_arrays(self, arrays: Mapping[str, np.ndarray]) -> 'UnetrModel':
        return UnetrModel(self.config, arrays)

    def astype(self, dtype: str) -> 'UnetrModel':
        config = self.config.model_copy(update={'dtype': dtype})
        return UnetrModel(config, {name: t.data.astype(dtype) for name, t in self.parameters.items()})

    def embedding_params(self) -> EmbeddingParams:
        return EmbeddingParams(
            projection=self.parameters['embedding.projection'],
            position=self.parameters['embedding.position'],
        )

    def block_params(self) -> list[BlockParams]:
        return [
            BlockParams.from_mapping(self.parameters, f'encoder.layer{layer}')
            for layer in range(1, self.config.layers + 1)
        ]

    def _prepare(self, volume: ArrayLike) -> tuple[Tensor, tuple[int, int, int]]:
        data = volume.data if isinstance(volume, Tensor) else np.asarray(volume)
        if data.ndim == 3:
            data = data[..., None]
        if data.ndim != 4 or data.shape[3] != self.config.in_channels:
            raise ShapeError(
                f'expected a [H, W, D, {self.config.in_channels}] volume, got shape {tuple(data.shape)}'
            )
        dims = tuple(data.shape[:3])
        padded = pad_to_multiple(data.astype(self.config.dtype, copy=False), self.config.patch_size)
        grid = tuple(n // self.config.patch_size for n in padded.shape[:3])
        if grid != self.config.grid:
            raise ShapeError(
                f'volume {dims} gives a {grid} patch grid; the positional table was built for '
                f'{self.config.grid} (img_size {self.config.img_size})'
            )
        return Tensor(padded), dims

    def encode(self, volume: ArrayLike, attention: Optional[list] = None) -> tuple[Tensor, dict[int, Tensor]]:
        """Return the embedded sequence z0 and the extracted hidden states."""
        x, _ = self._prepare(volume)
        z0 = embed(partition(x, self.config.patch_size), self.embedding_params())
        return z0, encode(z0, self.config.encoder, self.block_params(), attention)

    def forward(self, volume: ArrayLike, attention: Optional[list] = None) -> Tensor:
        """Logits ``[H, W, D, J]`` for one ``[H, W, D, C]`` volume."""
        x, (H, W, D) = self._prepare(volume)
        patch = self.config.patch
        z0 = embed(partition(x, patch.patch_size), self.embedding_params())
        states = encode(z0, self.config.encoder, self.block_params(), attention)
        grids = {layer: reshape_sequence(z, patch) for layer, z in states.items()}
        logits = decode(grids, x, self.parameters, self.config.decoder)
        if logits.shape[:3] != (H, W, D):
            logits = ops.getitem(logits, (slice(0, H), slice(0, W), slice(0, D)))
        return logits

    __call__ = forward

    def predict(self, volume: ArrayLike) -> np.ndarray:
        """Class probabilities ``[H, W, D, J]`` without recording gradients."""
        with no_grad():
            return head(self.forward(volume)).data

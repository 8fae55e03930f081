"""Pre-norm transformer encoder over the patch token sequence."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Mapping, Optional

import numpy as np

from . import ops
from .errors import ShapeError
from .models import EncoderConfig
from .tensor import Tensor

# BlockParams field -> parameter name suffix
_BLOCK_NAMES = {
    'norm1_gamma': 'norm1.gamma',
    'norm1_beta': 'norm1.beta',
    'w_q': 'attn.q.weight',
    'b_q': 'attn.q.bias',
    'w_k': 'attn.k.weight',
    'w_v': 'attn.v.weight',
    'b_v': 'attn.v.bias',
    'w_msa': 'attn.out.weight',
    'b_msa': 'attn.out.bias',
    'norm2_gamma': 'norm2.gamma',
    'norm2_beta': 'norm2.beta',
    'w_fc1': 'mlp.fc1.weight',
    'b_fc1': 'mlp.fc1.bias',
    'w_fc2': 'mlp.fc2.weight',
    'b_fc2': 'mlp.fc2.bias',
}


@dataclass
class HeadParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    b_q: Optional[Tensor] = None
    b_k: Optional[Tensor] = None
    b_v: Optional[Tensor] = None


@dataclass
class BlockParams:
    norm1_gamma: Tensor
    norm1_beta: Tensor
    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    w_v: Tensor
    b_v: Tensor
    w_msa: Tensor
    b_msa: Tensor
    norm2_gamma: Tensor
    norm2_beta: Tensor
    w_fc1: Tensor
    b_fc1: Tensor
    w_fc2: Tensor
    b_fc2: Tensor

    @classmethod
    def from_mapping(cls, params: Mapping[str, Tensor], prefix: str) -> 'BlockParams':
        return cls(**{field: params[f'{prefix}.{suffix}'] for field, suffix in _BLOCK_NAMES.items()})

    def head(self, index: int, heads: int) -> HeadParams:
        """Parameters of one attention head: columns ``index*K_h`` to ``(index+1)*K_h``."""
        width = self.w_q.shape[1] // heads
        cols = slice(index * width, (index + 1) * width)
        return HeadParams(
            w_q=ops.getitem(self.w_q, (slice(None), cols)),
            w_k=ops.getitem(self.w_k, (slice(None), cols)),
            w_v=ops.getitem(self.w_v, (slice(None), cols)),
            b_q=ops.getitem(self.b_q, cols),
            b_v=ops.getitem(self.b_v, cols),
        )


def _linear(x: Tensor, w: Tensor, b: Optional[Tensor]) -> Tensor:
    y = ops.matmul(x, w)
    return y if b is None else ops.add(y, b)


def attention_weights(q: Tensor, k: Tensor) -> Tensor:
    """A = softmax(q kᵀ / sqrt(K_h)), row-wise. Leading batch axes are allowed."""
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f'query width {q.shape} does not match key width {k.shape}')
    axes = tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)
    logits = ops.matmul(q, ops.transpose(k, axes))
    return ops.softmax(ops.mul(logits, 1.0 / math.sqrt(q.shape[-1])), axis=-1)


def self_attention(z: Tensor, head: HeadParams) -> Tensor:
    q = _linear(z, head.w_q, head.b_q)
    k = _linear(z, head.w_k, head.b_k)
    v = _linear(z, head.w_v, head.b_v)
    return ops.matmul(attention_weights(q, k), v)


def multi_head_attention(z: Tensor, params: BlockParams, heads: int,
                         attention: Optional[list] = None) -> Tensor:
    """[SA_1(z); ...; SA_n(z)] W_msa, with all heads evaluated as one batched product.

    When ``attention`` is a list, the ``[n, N, N]`` weight array is appended to it.
    """
    N, K = z.shape
    if K % heads:
        raise ShapeError(f'embedding width {K} is not divisible by {heads} heads')
    width = K // heads

    def split(x: Tensor) -> Tensor:
        return ops.transpose(ops.reshape(x, (N, heads, width)), (1, 0, 2))

    q = split(_linear(z, params.w_q, params.b_q))
    k = split(_linear(z, params.w_k, None))
    v = split(_linear(z, params.w_v, params.b_v))
    A = attention_weights(q, k)
    if attention is not None:
        attention.append(A.data)
    heads_out = ops.reshape(ops.transpose(ops.matmul(A, v), (1, 0, 2)), (N, K))
    return _linear(heads_out, params.w_msa, params.b_msa)


def encoder_block(z_prev: Tensor, params: BlockParams, cfg: EncoderConfig,
                  attention: Optional[list] = None) -> Tensor:
    h = ops.layer_norm(z_prev, params.norm1_gamma, params.norm1_beta, cfg.eps)
    z_mid = ops.add(multi_head_attention(h, params, cfg.heads, attention), z_prev)
    h = ops.layer_norm(z_mid, params.norm2_gamma, params.norm2_beta, cfg.eps)
    h = _linear(ops.gelu(_linear(h, params.w_fc1, params.b_fc1)), params.w_fc2, params.b_fc2)
    return ops.add(h, z_mid)


def encode(z0: Tensor, cfg: EncoderConfig, params: list[BlockParams],
           attention: Optional[list] = None) -> dict[int, Tensor]:
    """Run all layers and return the hidden states at ``cfg.extract_layers`` (1-based)."""
    if len(params) != cfg.layers:
        raise ShapeError(f'encoder has {cfg.layers} layers but {len(params)} parameter blocks were given')
    if z0.ndim != 2 or z0.shape[1] != cfg.hidden_size:
        raise ShapeError(f'sequence {z0.shape} does not match embedding width {cfg.hidden_size}')
    wanted = set(cfg.extract_layers)
    states: dict[int, Tensor] = {}
    z = z0
    for layer, block in enumerate(params, start=1):
        z = encoder_block(z, block, cfg, attention)
        if layer in wanted:
            states[layer] = z
    return states


def block_shapes(cfg: EncoderConfig, prefix: str) -> dict[str, tuple[int, ...]]:
    K, M = cfg.hidden_size, cfg.mlp_hidden
    shapes = {
        'norm1_gamma': (K,), 'norm1_beta': (K,),
        'w_q': (K, K), 'b_q': (K,),
        'w_k': (K, K),
        'w_v': (K, K), 'b_v': (K,),
        'w_msa': (K, K), 'b_msa': (K,),
        'norm2_gamma': (K,), 'norm2_beta': (K,),
        'w_fc1': (K, M), 'b_fc1': (M,),
        'w_fc2': (M, K), 'b_fc2': (K,),
    }
    return {f'{prefix}.{_BLOCK_NAMES[f.name]}': shapes[f.name] for f in fields(BlockParams)}


def encoder_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for layer in range(1, cfg.layers + 1):
        shapes.update(block_shapes(cfg, f'encoder.layer{layer}'))
    return shapes


def init_encoder(cfg: EncoderConfig, rng: np.random.Generator, dtype='float32') -> dict[str, np.ndarray]:
    arrays = {}
    for name, shape in encoder_shapes(cfg).items():
        if name.endswith('.gamma'):
            arrays[name] = np.ones(shape, dtype=dtype)
        elif name.endswith('.beta') or name.endswith('.bias'):
            arrays[name] = np.zeros(shape, dtype=dtype)
        else:
            arrays[name] = rng.normal(0.0, 0.02, shape).astype(dtype)
    return arrays

from unittest import TestCase

import numpy as np
import pytest

from unetr import ops
from unetr.encoder import (
    BlockParams, HeadParams, attention_weights, encode, encoder_block, encoder_shapes, init_encoder,
    multi_head_attention, self_attention,
)
from unetr.errors import ShapeError
from unetr.models import EncoderConfig
from unetr.tensor import Tensor

from tests.common import sampled_grad_check


def random_blocks(cfg: EncoderConfig, seed: int = 0, scale: float = 0.3) -> list[BlockParams]:
    rng = np.random.default_rng(seed)
    arrays = init_encoder(cfg, rng, 'float64')
    params = {}
    for name, a in arrays.items():
        if name.endswith('.weight'):
            a = rng.normal(0.0, scale, a.shape)
        params[name] = Tensor(a)
    return [BlockParams.from_mapping(params, f'encoder.layer{i}') for i in range(1, cfg.layers + 1)]


class TestAttention(TestCase):

    def test_orthogonal_queries_are_uniform(self):
        q = Tensor(np.array([[1.0, 0.0], [2.0, 0.0]]))
        k = Tensor(np.array([[0.0, 1.0], [0.0, -3.0], [0.0, 5.0]]))
        np.testing.assert_allclose(attention_weights(q, k).data, np.full((2, 3), 1.0 / 3.0))

    def test_single_token(self):
        a = attention_weights(Tensor(np.array([[0.3, -1.2]])), Tensor(np.array([[2.0, 0.5]])))
        np.testing.assert_array_equal(a.data, [[1.0]])

    def test_rows_on_simplex(self):
        rng = np.random.default_rng(0)
        a = attention_weights(Tensor(rng.normal(size=(5, 4))), Tensor(rng.normal(size=(5, 4)))).data
        np.testing.assert_allclose(a.sum(axis=-1), 1.0, atol=1e-12)
        assert (a >= 0).all()

    def test_single_token_returns_value_row(self):
        rng = np.random.default_rng(1)
        z = Tensor(rng.normal(size=(1, 6)))
        head = HeadParams(*(Tensor(rng.normal(size=(6, 3))) for _ in range(3)))
        out = self_attention(z, head)
        np.testing.assert_allclose(out.data, z.data @ head.w_v.data, atol=1e-12)

    def test_identical_rows(self):
        rng = np.random.default_rng(2)
        z = Tensor(np.tile(rng.normal(size=(1, 6)), (4, 1)))
        head = HeadParams(*(Tensor(rng.normal(size=(6, 3))) for _ in range(3)))
        out = self_attention(z, head).data
        np.testing.assert_allclose(out, np.tile(out[:1], (4, 1)), atol=1e-12)

    def test_single_head_with_identity_projection(self):
        cfg = EncoderConfig(layers=1, hidden_size=6, heads=1, mlp_hidden=12, extract_layers=(1,))
        (block,) = random_blocks(cfg, seed=3)
        block.w_msa = Tensor(np.eye(6))
        block.b_msa = Tensor(np.zeros(6))
        z = Tensor(np.random.default_rng(4).normal(size=(5, 6)))
        np.testing.assert_allclose(
            multi_head_attention(z, block, heads=1).data,
            self_attention(z, block.head(0, 1)).data,
            atol=1e-12,
        )

    def test_batched_heads_match_per_head_loop(self):
        cfg = EncoderConfig(layers=1, hidden_size=8, heads=4, mlp_hidden=16, extract_layers=(1,))
        (block,) = random_blocks(cfg, seed=5)
        z = Tensor(np.random.default_rng(6).normal(size=(7, 8)))
        heads = [self_attention(z, block.head(i, 4)).data for i in range(4)]
        expected = np.concatenate(heads, axis=1) @ block.w_msa.data + block.b_msa.data
        collected = []
        out = multi_head_attention(z, block, heads=4, attention=collected)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)
        assert collected[0].shape == (4, 7, 7)

    def test_indivisible_width(self):
        cfg = EncoderConfig(layers=1, hidden_size=6, heads=1, mlp_hidden=12, extract_layers=(1,))
        (block,) = random_blocks(cfg)
        with pytest.raises(ShapeError):
            multi_head_attention(Tensor(np.zeros((3, 6))), block, heads=4)


class TestEncoder(TestCase):

    def setUp(self) -> None:
        self.cfg = EncoderConfig(layers=4, hidden_size=16, heads=2, mlp_hidden=32, extract_layers=(1, 2, 3, 4))
        return super().setUp()

    def test_zero_weights_are_identity(self):
        cfg = EncoderConfig(layers=1, hidden_size=6, heads=2, mlp_hidden=12, extract_layers=(1,))
        params = {}
        for name, a in init_encoder(cfg, np.random.default_rng(0), 'float64').items():
            params[name] = Tensor(np.full(a.shape, 1.7) if name.endswith('.gamma') else np.zeros(a.shape))
        block = BlockParams.from_mapping(params, 'encoder.layer1')
        z = np.random.default_rng(1).normal(size=(5, 6))
        np.testing.assert_array_equal(encoder_block(Tensor(z), block, cfg).data, z)

    def test_extracted_layers(self):
        cfg = EncoderConfig(layers=12, hidden_size=8, heads=2, mlp_hidden=16)
        states = encode(Tensor(np.random.default_rng(0).normal(size=(27, 8))), cfg, random_blocks(cfg))
        assert sorted(states) == [3, 6, 9, 12]
        assert all(z.shape == (27, 8) for z in states.values())

    def test_extraction_matches_running_the_blocks(self):
        blocks = random_blocks(self.cfg, seed=1)
        z0 = Tensor(np.random.default_rng(2).normal(size=(8, 16)))
        states = encode(z0, self.cfg, blocks)
        z = z0
        for layer, block in enumerate(blocks, start=1):
            z = encoder_block(z, block, self.cfg)
            np.testing.assert_array_equal(states[layer].data, z.data)

    def test_permutation_equivariance_without_positions(self):
        blocks = random_blocks(self.cfg, seed=3)
        rng = np.random.default_rng(4)
        z0 = rng.normal(size=(10, 16))
        order = rng.permutation(10)
        plain = encode(Tensor(z0), self.cfg, blocks)
        permuted = encode(Tensor(z0[order]), self.cfg, blocks)
        for layer in plain:
            assert np.abs(plain[layer].data[order] - permuted[layer].data).max() < 1e-5

    def test_positions_break_equivariance(self):
        blocks = random_blocks(self.cfg, seed=3)
        rng = np.random.default_rng(4)
        patches = rng.normal(size=(10, 16))
        positions = rng.normal(size=(10, 16))
        order = rng.permutation(10)
        plain = encode(Tensor(patches + positions), self.cfg, blocks)[4].data
        permuted = encode(Tensor(patches[order] + positions), self.cfg, blocks)[4].data
        assert np.abs(plain[order] - permuted).max() > 1e-2

    def test_layer_count_mismatch(self):
        with pytest.raises(ShapeError):
            encode(Tensor(np.zeros((4, 16))), self.cfg, random_blocks(self.cfg)[:3])

    def test_width_mismatch(self):
        with pytest.raises(ShapeError):
            encode(Tensor(np.zeros((4, 8))), self.cfg, random_blocks(self.cfg))

    def test_parameter_names(self):
        shapes = encoder_shapes(self.cfg)
        assert shapes['encoder.layer1.attn.q.weight'] == (16, 16)
        assert shapes['encoder.layer4.mlp.fc1.weight'] == (16, 32)
        assert 'encoder.layer1.attn.k.bias' not in shapes
        assert len(shapes) == 4 * 15

    def test_block_gradient(self):
        cfg = EncoderConfig(layers=1, hidden_size=8, heads=2, mlp_hidden=16, extract_layers=(1,))
        (block,) = random_blocks(cfg, seed=7)
        z = Tensor(np.random.default_rng(8).normal(size=(5, 8)))
        weights = Tensor(np.random.default_rng(9).normal(size=(5, 8)))
        tensors = [getattr(block, name) for name in ('w_q', 'w_k', 'w_v', 'b_q', 'w_fc1', 'norm1_gamma')]

        def f(*_):
            return ops.sum(ops.mul(encoder_block(z, block, cfg), weights))
        assert sampled_grad_check(f, [z, *tensors], samples=3) < 1e-6

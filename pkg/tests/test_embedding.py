from unittest import TestCase

import numpy as np
import pytest

from unetr.embedding import (
    EmbeddingParams, embed, embedding_shapes, init_embedding, pad_to_multiple, partition, unpartition,
)
from unetr.errors import ShapeError
from unetr.models import PatchConfig
from unetr.tensor import Tensor


class TestPartition(TestCase):

    def test_btcv_sequence_length(self):
        patches = partition(Tensor(np.zeros((96, 96, 96, 1), dtype=np.float32)), 16)
        assert patches.shape == (216, 4096)

    def test_four_channel_volume(self):
        patches = partition(Tensor(np.zeros((128, 128, 128, 4), dtype=np.float32)), 16)
        assert patches.shape == (512, 16384)

    def test_round_trip(self):
        volume = np.random.default_rng(0).normal(size=(8, 12, 16, 2)).astype(np.float32)
        cfg = PatchConfig(patch_size=4, channels=2, hidden_size=8, grid=(2, 3, 4))
        restored = unpartition(partition(Tensor(volume), 4), cfg)
        np.testing.assert_array_equal(restored.data, volume)

    def test_row_order(self):
        volume = np.random.default_rng(1).normal(size=(8, 8, 12, 2))
        patches = partition(Tensor(volume), 4).data
        # grid (2, 2, 3): x slowest, z fastest
        row = 1 * 2 * 3 + 0 * 3 + 2
        cube = volume[4:8, 0:4, 8:12, :]
        np.testing.assert_array_equal(patches[row], cube.transpose(3, 0, 1, 2).reshape(-1))

    def test_zero_patches(self):
        cfg = PatchConfig(patch_size=2, channels=1, hidden_size=4, grid=(2, 2, 2))
        volume = unpartition(Tensor(np.zeros((8, 8))), cfg)
        assert volume.shape == (4, 4, 4, 1)
        assert not volume.data.any()

    def test_not_divisible(self):
        with pytest.raises(ShapeError):
            partition(Tensor(np.zeros((10, 8, 8, 1))), 4)

    def test_inconsistent_count(self):
        cfg = PatchConfig(patch_size=2, channels=1, hidden_size=4, grid=(2, 2, 2))
        with pytest.raises(ShapeError):
            unpartition(Tensor(np.zeros((7, 8))), cfg)

    def test_pad_to_multiple(self):
        padded = pad_to_multiple(np.ones((10, 16, 13, 1)), 8)
        assert padded.shape == (16, 16, 16, 1)
        assert padded[:10, :, :13].all() and not padded[10:].any() and not padded[:, :, 13:].any()


class TestEmbed(TestCase):

    def setUp(self) -> None:
        self.cfg = PatchConfig(patch_size=2, channels=1, hidden_size=6, grid=(2, 2, 2))
        arrays = init_embedding(self.cfg, np.random.default_rng(0), 'float64')
        self.params = EmbeddingParams(
            projection=Tensor(arrays['embedding.projection']),
            position=Tensor(arrays['embedding.position']),
        )
        return super().setUp()

    def test_zero_patches_give_positions(self):
        z0 = embed(Tensor(np.zeros((8, 8))), self.params)
        np.testing.assert_array_equal(z0.data, self.params.position.data)

    def test_zero_everything(self):
        params = EmbeddingParams(projection=self.params.projection, position=Tensor(np.zeros((8, 6))))
        assert not embed(Tensor(np.zeros((8, 8))), params).data.any()

    def test_linear_in_patches(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(8, 8)), rng.normal(size=(8, 8))
        pos = self.params.position.data
        za = embed(Tensor(a), self.params).data - pos
        zb = embed(Tensor(b), self.params).data - pos
        zab = embed(Tensor(2.0 * a + b), self.params).data - pos
        np.testing.assert_allclose(zab, 2.0 * za + zb, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            embed(Tensor(np.zeros((8, 5))), self.params)
        with pytest.raises(ShapeError):
            embed(Tensor(np.zeros((9, 8))), self.params)

    def test_shapes(self):
        assert embedding_shapes(self.cfg) == {
            'embedding.projection': (8, 6),
            'embedding.position': (8, 6),
        }
        assert self.params.hidden_size == 6

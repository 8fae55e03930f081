import struct
import tempfile
from pathlib import Path
from unittest import TestCase

import numpy as np
import pytest
from pydantic import ValidationError

from unetr.checkpoint import (
    MAGIC as CHECKPOINT_MAGIC, decode_checkpoint, encode_checkpoint, file_digest, load_checkpoint, save_checkpoint,
)
from unetr.errors import ChecksumError, FormatError, ShapeError
from unetr.models import PhantomSpec
from unetr.optim import OptimizerState
from unetr.phantoms import generate_phantoms, iter_phantoms
from unetr.volumes import (
    MAGIC, VolumeSample, decode_volume, encode_volume, list_volumes, read_dataset, read_volume, write_volume,
)

from tests.common import random_labels, tiny_config, tiny_model


class TestVolumes(TestCase):

    def setUp(self) -> None:
        rng = np.random.default_rng(0)
        self.sample = VolumeSample(
            image=rng.normal(size=(16, 16, 16, 2)).astype(np.float32),
            label=random_labels((16, 16, 16), 4),
            spacing=(0.8, 0.8, 2.5),
        )
        return super().setUp()

    def test_round_trip(self):
        decoded = decode_volume(encode_volume(self.sample))
        np.testing.assert_array_equal(decoded.image, self.sample.image)
        np.testing.assert_array_equal(decoded.label, self.sample.label)
        assert decoded.spacing == (0.8, 0.8, 2.5)

    def test_unlabelled(self):
        decoded = decode_volume(encode_volume(VolumeSample(image=self.sample.image)))
        assert decoded.label is None

    def test_truncated(self):
        raw = encode_volume(self.sample)
        with pytest.raises(FormatError, match='truncated'):
            decode_volume(raw[:-1])

    def test_trailing_bytes(self):
        with pytest.raises(FormatError, match='trailing'):
            decode_volume(encode_volume(self.sample) + b'\0')

    def test_bad_magic(self):
        raw = encode_volume(self.sample)
        with pytest.raises(FormatError, match='magic'):
            decode_volume(b'X' + raw[1:])
        assert raw.startswith(MAGIC)

    def test_label_range(self):
        sample = VolumeSample(image=np.zeros((2, 2, 2)), label=np.full((2, 2, 2), 300))
        with pytest.raises(FormatError):
            encode_volume(sample)

    def test_label_shape(self):
        with pytest.raises(ShapeError):
            VolumeSample(image=np.zeros((4, 4, 4)), label=np.zeros((4, 4, 3)))

    def test_directory(self):
        with tempfile.TemporaryDirectory() as tmp:
            for name in ('b', 'a'):
                write_volume(self.sample, Path(tmp) / f'{name}.vol')
            (Path(tmp) / 'notes.txt').write_text('ignored')
            assert [p.name for p in list_volumes(tmp)] == ['a.vol', 'b.vol']
            assert [s.name for s in read_dataset(tmp)] == ['a', 'b']
            assert read_volume(Path(tmp) / 'a.vol').dims == (16, 16, 16)

    def test_empty_directory(self):
        with tempfile.TemporaryDirectory() as tmp:
            with pytest.raises(FileNotFoundError):
                read_dataset(tmp)


class TestCheckpoint(TestCase):

    def setUp(self) -> None:
        self.model = tiny_model(seed=1, dtype='float32')
        rng = np.random.default_rng(2)
        arrays = self.model.arrays()
        self.optimizer = OptimizerState(
            step=7,
            m={name: rng.normal(size=a.shape).astype(np.float32) for name, a in arrays.items()},
            v={name: rng.uniform(size=a.shape).astype(np.float32) for name, a in arrays.items()},
        )
        self.raw = encode_checkpoint(self.model, self.optimizer, iteration=70)
        return super().setUp()

    def test_round_trip(self):
        checkpoint = decode_checkpoint(self.raw)
        volume = np.random.default_rng(3).normal(size=(16, 16, 16, 1))
        np.testing.assert_array_equal(checkpoint.model.forward(volume).data, self.model.forward(volume).data)
        assert checkpoint.iteration == 70
        assert checkpoint.optimizer.step == 7
        np.testing.assert_array_equal(checkpoint.optimizer.v['head.weight'], self.optimizer.v['head.weight'])
        assert encode_checkpoint(checkpoint.model, checkpoint.optimizer, checkpoint.iteration) == self.raw

    def test_weights_only(self):
        checkpoint = decode_checkpoint(encode_checkpoint(self.model))
        assert checkpoint.optimizer is None and checkpoint.iteration is None

    def test_corrupted_byte(self):
        raw = bytearray(self.raw)
        raw[len(raw) // 2] ^= 0x01
        with pytest.raises(ChecksumError):
            decode_checkpoint(bytes(raw))

    def test_version(self):
        raw = bytearray(self.raw)
        struct.pack_into('<H', raw, len(CHECKPOINT_MAGIC), 2)
        with pytest.raises(FormatError, match='version 2'):
            decode_checkpoint(bytes(raw))

    def test_truncated(self):
        with pytest.raises(FormatError):
            decode_checkpoint(self.raw[:20])

    def test_expected_config_mismatch(self):
        with pytest.raises(ShapeError, match="'embedding.projection'"):
            decode_checkpoint(self.raw, expected=tiny_config(hidden_size=8, dtype='float32'))

    def test_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            a = save_checkpoint(Path(tmp) / 'a.ckpt', self.model, self.optimizer, 70)
            b = save_checkpoint(Path(tmp) / 'b.ckpt', load_checkpoint(a).model, self.optimizer, 70)
            assert file_digest(a) == file_digest(b)
            assert sorted(p.name for p in Path(tmp).iterdir()) == ['a.ckpt', 'b.ckpt']

    def test_preprocessing_is_recorded(self):
        raw = encode_checkpoint(self.model, intensity='zscore', spacing=(1.0, 1.0, 1.5))
        checkpoint = decode_checkpoint(raw)
        assert checkpoint.intensity == 'zscore'
        assert checkpoint.spacing == (1.0, 1.0, 1.5)
        plain = decode_checkpoint(self.raw)
        assert plain.intensity == 'none' and plain.spacing is None


class TestPhantoms(TestCase):

    def setUp(self) -> None:
        self.spec = PhantomSpec(dims=(24, 24, 24), classes=3, volumes=4, seed=11, noise_std=0.05)
        return super().setUp()

    def test_seeded(self):
        a, b = generate_phantoms(self.spec), generate_phantoms(self.spec)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.image, y.image)
            np.testing.assert_array_equal(x.label, y.label)
        other = generate_phantoms(self.spec.model_copy(update={'seed': 12}))
        assert not np.array_equal(a[0].label, other[0].label)

    def test_volume_depends_only_on_its_index(self):
        more = generate_phantoms(self.spec.model_copy(update={'volumes': 6}))
        np.testing.assert_array_equal(more[2].label, generate_phantoms(self.spec)[2].label)

    def test_labels_and_fractions(self):
        lo, hi = self.spec.foreground_fraction
        for sample in iter_phantoms(self.spec):
            assert sample.name.startswith('phantom_')
            assert sample.image.shape == (24, 24, 24, 1)
            assert set(np.unique(sample.label)) == {0, 1, 2}
            assert lo <= (sample.label > 0).mean() <= hi

    def test_image_follows_labels(self):
        sample = generate_phantoms(self.spec)[0]
        means = [sample.image[sample.label == j].mean() for j in range(3)]
        np.testing.assert_allclose(means, [0.0, 0.5, 1.0], atol=0.02)

    def test_shape_families(self):
        spec = self.spec.model_copy(update={'shapes': ['box', 'ellipsoid']})
        assert generate_phantoms(spec)[0].label.max() <= 2

    def test_oversized_shapes(self):
        with pytest.raises(ValidationError):
            PhantomSpec(radius_range=(0.2, 0.5))

    def test_family_count(self):
        with pytest.raises(ValidationError):
            PhantomSpec(classes=3, shapes=['box'])

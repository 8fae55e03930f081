"""Long-running checks; enabled with UNETR_SLOW=1."""
from unittest import TestCase

import numpy as np
import pytest
import yaml

from unetr.models import ModelConfig, PhantomSpec, TrainConfig
from unetr.network import UnetrModel
from unetr.phantoms import generate_phantoms
from unetr.training import foreground_dice, moving_average, rises_after, train
from unetr.transforms import split_dataset

from tests.common import DATA_DIR


# allowed rise of the smoothed loss over its running minimum, in loss units
CURVE_TOLERANCE = 0.05


@pytest.mark.slow
class TestToyConvergence(TestCase):

    def test_phantom_segmentation(self):
        cfg = TrainConfig(**yaml.safe_load((DATA_DIR / 'toy-train.yaml').read_text()))
        assert cfg.optimizer.lr == 1e-4 and cfg.augment.enabled
        assert cfg.batch_size == 2 and cfg.iterations <= 2000
        samples = generate_phantoms(PhantomSpec(dims=(32, 32, 32), classes=2, volumes=40, seed=0))
        train_set, val_set, _ = split_dataset(samples, cfg.split, cfg.seed)
        result = train(UnetrModel.initialize(cfg.model, seed=cfg.seed), train_set, cfg, validation=val_set)
        assert foreground_dice(result.model, val_set) >= 0.90

        losses = [r.loss for r in result.curve]
        assert rises_after(losses, window=100, start=200, tolerance=CURVE_TOLERANCE) == []
        averaged = moving_average(losses, window=100)
        assert averaged[-1] < averaged[200 - 100]


@pytest.mark.slow
class TestFullSize(TestCase):

    def test_vit_b16_forward(self):
        model = UnetrModel.initialize(ModelConfig.vit_b16(), seed=0)
        volume = np.random.default_rng(0).normal(size=(96, 96, 96, 1)).astype(np.float32)
        attention = []
        _, states = model.encode(volume, attention)
        assert sorted(states) == [3, 6, 9, 12]
        assert all(z.shape == (216, 768) for z in states.values())
        assert attention[0].shape == (12, 216, 216)
        probs = model.predict(volume)
        assert probs.shape == (96, 96, 96, 14)
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-4)

    def test_coarse_patches(self):
        model = UnetrModel.initialize(ModelConfig.vit_b16(patch_size=32, decoder_widths=None), seed=0)
        volume = np.random.default_rng(1).normal(size=(96, 96, 96, 1)).astype(np.float32)
        _, states = model.encode(volume)
        assert states[12].shape == (27, 768)
        assert model.predict(volume).shape == (96, 96, 96, 14)

import os
import tempfile
from pathlib import Path

import numpy as np

from unetr.gradcheck import analytic_gradients, grad_check, largest_components
from unetr.models import ModelConfig
from unetr.network import UnetrModel

DATA_DIR = Path(__file__).parent / 'data'


def tiny_config(**overrides) -> ModelConfig:
    """P=4, K=16, L=4, n=2 on a 16³ single-channel input."""
    params = dict(
        in_channels=1, classes=3, img_size=(16, 16, 16), patch_size=4,
        hidden_size=16, layers=4, heads=2, base_width=4, dtype='float64',
    )
    return ModelConfig(**(params | overrides))


def tiny_model(seed: int = 0, **overrides) -> UnetrModel:
    return UnetrModel.initialize(tiny_config(**overrides), seed=seed)


def random_labels(shape, classes: int, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, classes, shape).astype(np.uint8)


def sampled_grad_check(f, inputs, samples=8, eps=1e-6):
    """Finite-difference check on the largest-magnitude gradient entries of each input."""
    grads = analytic_gradients(f, inputs)
    return grad_check(f, inputs, eps=eps, indices=[largest_components(g, samples) for g in grads])


def scratch_dir(test) -> Path:
    """A temporary directory under the session scratch area, removed after ``test``."""
    tmp = tempfile.TemporaryDirectory(dir=os.environ.get('UNETR_TEST_TMP'))
    test.addCleanup(tmp.cleanup)
    return Path(tmp.name)

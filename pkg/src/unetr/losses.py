"""Soft Dice plus cross-entropy training objective."""
from __future__ import annotations

import numpy as np

from . import ops
from .errors import ShapeError
from .tensor import Tensor


def one_hot(labels: np.ndarray, classes: int, dtype='float32') -> np.ndarray:
    """Integer labels of any shape -> indicator array with a trailing class axis."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ShapeError(f'labels span {labels.min()}..{labels.max()}, outside 0..{classes - 1}')
    return np.eye(classes, dtype=dtype)[labels.astype(np.intp)]


def dice_ce_terms(logits: Tensor, target: np.ndarray, smooth: float = 1e-5) -> tuple[Tensor, Tensor]:
    """Return the (soft Dice, cross-entropy) terms for ``[I, J]`` logits and one-hot targets.

    Probabilities and log-probabilities are both taken from the logits, so a
    vanishing probability on the true class never produces log(0).
    """
    if logits.ndim != 2 or tuple(target.shape) != logits.shape:
        raise ShapeError(f'logits {logits.shape} and one-hot target {tuple(target.shape)} must both be [I, J]')
    I, J = logits.shape
    G = Tensor(np.asarray(target, dtype=logits.dtype))
    Y = ops.softmax(logits, axis=-1)
    intersection = ops.sum(ops.mul(Y, G), axis=0)
    denominator = ops.add(ops.sum(ops.mul(G, G), axis=0), ops.sum(ops.mul(Y, Y), axis=0))
    ratio = ops.div(ops.add(intersection, smooth), ops.add(denominator, smooth))
    dice = ops.sub(1.0, ops.mul(ops.sum(ratio), 2.0 / J))
    ce = ops.mul(ops.sum(ops.mul(G, ops.log_softmax(logits, axis=-1))), -1.0 / I)
    return dice, ce


def dice_ce_loss(logits: Tensor, target: np.ndarray, smooth: float = 1e-5) -> Tensor:
    dice, ce = dice_ce_terms(logits, target, smooth)
    return ops.add(dice, ce)


def volume_loss(logits: list[Tensor], labels: list[np.ndarray], classes: int, smooth: float = 1e-5) -> Tensor:
    """Loss over a batch of ``[H, W, D, J]`` logit volumes; voxels of all samples are pooled."""
    flat = [ops.reshape(x, (-1, classes)) for x in logits]
    stacked = flat[0] if len(flat) == 1 else ops.concat(flat, axis=0)
    target = np.concatenate([one_hot(label.reshape(-1), classes, stacked.dtype) for label in labels], axis=0)
    return dice_ce_loss(stacked, target, smooth)

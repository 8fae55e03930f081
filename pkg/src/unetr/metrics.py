"""Evaluation metrics: Dice overlap and the 95th-percentile Hausdorff distance."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import ShapeError
from .models import ClassMetric, MetricReport

# 6-connectivity
_FACE_NEIGHBOURS = ndimage.generate_binary_structure(3, 1)


def _check_pair(g: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    g, p = np.asarray(g, dtype=bool), np.asarray(p, dtype=bool)
    if g.shape != p.shape:
        raise ShapeError(f'mask shapes differ: {g.shape} vs {p.shape}')
    return g, p


def dice_score(g: np.ndarray, p: np.ndarray) -> float:
    """2|G∩P| / (|G| + |P|); two empty masks score 1.0."""
    g, p = _check_pair(g, p)
    total = int(g.sum()) + int(p.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(g, p).sum()) / total


def extract_surface(mask: np.ndarray, spacing: Sequence[float] = (1.0, 1.0, 1.0)) -> np.ndarray:
    """Physical coordinates ``[M, 3]`` of mask voxels with a face neighbour outside the mask.

    Voxels on the volume border count as surface.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 3:
        raise ShapeError(f'extract_surface expects a 3D mask, got shape {mask.shape}')
    interior = ndimage.binary_erosion(mask, structure=_FACE_NEIGHBOURS, border_value=0)
    surface = np.argwhere(mask & ~interior)
    return surface.astype(np.float64) * np.asarray(spacing, dtype=np.float64)


def _nearest_rank(distances: np.ndarray, percentile: float) -> float:
    ordered = np.sort(distances)
    rank = max(1, math.ceil(percentile / 100.0 * ordered.size))
    return float(ordered[rank - 1])


def hausdorff(g_points: np.ndarray, p_points: np.ndarray, percentile: float = 100.0) -> Optional[float]:
    """Symmetric Hausdorff distance at a nearest-rank percentile of the directed distances.

    Returns None when either point set is empty.
    """
    if len(g_points) == 0 or len(p_points) == 0:
        return None
    to_p, _ = cKDTree(p_points).query(g_points)
    to_g, _ = cKDTree(g_points).query(p_points)
    return max(_nearest_rank(to_p, percentile), _nearest_rank(to_g, percentile))


def hd95(g_points: np.ndarray, p_points: np.ndarray) -> Optional[float]:
    return hausdorff(g_points, p_points, 95.0)


def evaluate(prediction: np.ndarray, truth: np.ndarray, classes: int,
             spacing: Sequence[float] = (1.0, 1.0, 1.0)) -> MetricReport:
    """Per-class Dice and HD95 for foreground classes 1..J-1 of two label volumes."""
    prediction, truth = np.asarray(prediction), np.asarray(truth)
    if prediction.shape != truth.shape:
        raise ShapeError(f'prediction {prediction.shape} and ground truth {truth.shape} differ in shape')
    rows = []
    for j in range(1, classes):
        g, p = truth == j, prediction == j
        flag = None
        if not g.any() and not p.any():
            flag = 'empty'
        elif not g.any():
            flag = 'missing_truth'
        elif not p.any():
            flag = 'missing_prediction'
        distance = None if flag else hd95(extract_surface(g, spacing), extract_surface(p, spacing))
        rows.append(ClassMetric(class_id=j, dice=dice_score(g, p), hd95=distance, flag=flag))
    return summarize(rows)


def summarize(rows: list[ClassMetric]) -> MetricReport:
    distances = [r.hd95 for r in rows if r.hd95 is not None]
    return MetricReport(
        classes=rows,
        mean_dice=float(np.mean([r.dice for r in rows])) if rows else 0.0,
        mean_hd95=float(np.mean(distances)) if distances else None,
    )


def evaluate_cases(cases: Sequence[tuple], classes: int,
                   spacing: Sequence[float] = (1.0, 1.0, 1.0), threads: int = 1) -> MetricReport:
    """Evaluate several cases and average per class in case order.

    Each case is ``(prediction, truth)`` scored at ``spacing``, or
    ``(prediction, truth, spacing)`` carrying its own.
    """
    def score(case: tuple) -> MetricReport:
        prediction, truth, *rest = case
        return evaluate(prediction, truth, classes, rest[0] if rest else spacing)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        reports = list(pool.map(score, cases))
    rows = []
    for j in range(1, classes):
        per_case = [r.classes[j - 1] for r in reports]
        distances = [c.hd95 for c in per_case if c.hd95 is not None]
        flags = sorted({c.flag for c in per_case if c.flag})
        rows.append(ClassMetric(
            class_id=j,
            dice=float(np.mean([c.dice for c in per_case])),
            hd95=float(np.mean(distances)) if distances else None,
            flag=','.join(flags) or None,
        ))
    return summarize(rows)

import math
from unittest import TestCase

import numpy as np
import pytest

from unetr.errors import ShapeError
from unetr.metrics import dice_score, evaluate, evaluate_cases, extract_surface, hausdorff, hd95


def brute_force_hd95(a: np.ndarray, b: np.ndarray) -> float:
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))

    def directed(m):
        nearest = np.sort(m.min(axis=1))
        return nearest[max(1, math.ceil(0.95 * nearest.size)) - 1]
    return float(max(directed(d), directed(d.T)))


class TestDice(TestCase):

    def test_identical(self):
        mask = np.zeros((4, 4, 4), dtype=bool)
        mask[1:3, 1:3, 1:3] = True
        assert dice_score(mask, mask) == 1.0

    def test_disjoint(self):
        g, p = np.zeros((4, 4, 4), dtype=bool), np.zeros((4, 4, 4), dtype=bool)
        g[0], p[3] = True, True
        assert dice_score(g, p) == 0.0

    def test_half_overlap(self):
        g, p = np.zeros(8, dtype=bool), np.zeros(8, dtype=bool)
        g[:4], p[2:6] = True, True
        assert dice_score(g, p) == 0.5

    def test_both_empty(self):
        assert dice_score(np.zeros((2, 2, 2)), np.zeros((2, 2, 2))) == 1.0

    def test_against_counting(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            g, p = rng.random((8, 8, 8)) < 0.3, rng.random((8, 8, 8)) < 0.3
            both = sum(1 for i in np.ndindex(8, 8, 8) if g[i] and p[i])
            expected = 2.0 * both / (g.sum() + p.sum())
            assert dice_score(g, p) == pytest.approx(expected, abs=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            dice_score(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))


class TestSurface(TestCase):

    def test_single_voxel(self):
        mask = np.zeros((5, 5, 5), dtype=bool)
        mask[2, 3, 1] = True
        np.testing.assert_array_equal(extract_surface(mask), [[2.0, 3.0, 1.0]])

    def test_cube_interior_is_excluded(self):
        mask = np.zeros((5, 5, 5), dtype=bool)
        mask[1:4, 1:4, 1:4] = True
        surface = extract_surface(mask)
        assert len(surface) == 26
        assert [2.0, 2.0, 2.0] not in surface.tolist()

    def test_volume_border_counts_as_surface(self):
        assert len(extract_surface(np.ones((4, 4, 4), dtype=bool))) == 64 - 8

    def test_spacing_scales_coordinates(self):
        mask = np.zeros((3, 3, 3), dtype=bool)
        mask[1, 2, 1] = True
        np.testing.assert_array_equal(extract_surface(mask, (2.0, 0.5, 3.0)), [[2.0, 1.0, 3.0]])

    def test_rejects_2d(self):
        with pytest.raises(ShapeError):
            extract_surface(np.ones((4, 4), dtype=bool))


class TestHausdorff(TestCase):

    def test_identical_sets(self):
        points = np.random.default_rng(0).normal(size=(50, 3))
        assert hd95(points, points) == 0.0

    def test_single_points(self):
        assert hd95(np.array([[0.0, 0.0, 0.0]]), np.array([[3.0, 0.0, 0.0]])) == pytest.approx(3.0)

    def test_empty_set(self):
        assert hd95(np.zeros((0, 3)), np.ones((4, 3))) is None
        assert hausdorff(np.ones((4, 3)), np.zeros((0, 3))) is None

    def test_against_pairwise_distances(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a, b = rng.normal(size=(100, 3)) * 5, rng.normal(size=(100, 3)) * 5 + 1
            assert hd95(a, b) == pytest.approx(brute_force_hd95(a, b), abs=1e-9)

    def test_against_pairwise_distances_on_mask_surfaces(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            g, p = rng.random((8, 8, 8)) < 0.3, rng.random((8, 8, 8)) < 0.3
            g[0, 0, 0] = p[7, 7, 7] = True
            a, b = extract_surface(g), extract_surface(p)
            assert hd95(a, b) == pytest.approx(brute_force_hd95(a, b), abs=1e-9)

    def test_bounded_by_the_full_hausdorff_distance(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            a = rng.normal(size=(int(rng.integers(1, 60)), 3)) * 4
            b = rng.normal(size=(int(rng.integers(1, 60)), 3)) * 4 + rng.normal(size=3)
            assert 0.0 <= hd95(a, b) <= hausdorff(a, b)

    def test_scales_with_spacing(self):
        rng = np.random.default_rng(6)
        spacing = np.array([1.0, 0.5, 2.0])
        for scale in (0.5, 3.0):
            g, p = rng.random((8, 8, 8)) < 0.2, rng.random((8, 8, 8)) < 0.2
            g[1, 1, 1] = p[6, 6, 6] = True
            base = hd95(extract_surface(g, spacing), extract_surface(p, spacing))
            scaled = hd95(extract_surface(g, scale * spacing), extract_surface(p, scale * spacing))
            assert scaled == pytest.approx(scale * base, rel=1e-12)

    def test_symmetric(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=(30, 3)), rng.normal(size=(70, 3))
        assert hd95(a, b) == hd95(b, a)

    def test_outlier_is_ignored_at_95th_percentile(self):
        a = np.stack([np.arange(40.0), np.zeros(40), np.zeros(40)], axis=1)
        b = a.copy()
        b[0] = [0.0, 100.0, 0.0]
        assert hd95(a, b) == 0.0
        assert hausdorff(a, b) == pytest.approx(100.0)


class TestEvaluate(TestCase):

    def setUp(self) -> None:
        self.truth = np.zeros((8, 8, 8), dtype=np.uint8)
        self.truth[1:4, 1:4, 1:4] = 1
        self.truth[5:7, 5:7, 5:7] = 2
        return super().setUp()

    def test_perfect_prediction(self):
        report = evaluate(self.truth, self.truth, classes=3)
        assert [c.class_id for c in report.classes] == [1, 2]
        assert report.mean_dice == 1.0
        assert report.mean_hd95 == 0.0
        assert all(c.flag is None for c in report.classes)

    def test_flags(self):
        prediction = self.truth.copy()
        prediction[prediction == 2] = 0
        report = evaluate(prediction, self.truth, classes=4)
        by_class = {c.class_id: c for c in report.classes}
        assert by_class[2].flag == 'missing_prediction' and by_class[2].dice == 0.0
        assert by_class[2].hd95 is None
        assert by_class[3].flag == 'empty' and by_class[3].dice == 1.0
        # unavailable distances stay out of the mean
        assert report.mean_hd95 == 0.0
        assert report.mean_dice == pytest.approx(2.0 / 3.0)

    def test_missing_truth(self):
        prediction = self.truth.copy()
        prediction[0, 0, 0] = 3
        report = evaluate(prediction, self.truth, classes=4)
        assert report.classes[2].flag == 'missing_truth'

    def test_shifted_prediction(self):
        prediction = np.roll(self.truth, 1, axis=0)
        report = evaluate(prediction, self.truth, classes=3, spacing=(2.0, 1.0, 1.0))
        assert report.classes[0].hd95 == pytest.approx(2.0)

    def test_cases_average_in_order(self):
        prediction = self.truth.copy()
        prediction[prediction == 2] = 0
        pairs = [(self.truth, self.truth), (prediction, self.truth)]
        report = evaluate_cases(pairs, classes=3, threads=2)
        assert report.classes[0].dice == 1.0
        assert report.classes[1].dice == 0.5
        assert report.classes[1].hd95 == 0.0
        assert report.classes[1].flag == 'missing_prediction'
        assert evaluate_cases(pairs, classes=3, threads=1) == report

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            evaluate(np.zeros((4, 4, 4)), np.zeros((4, 4, 5)), classes=2)

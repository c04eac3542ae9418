#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""Tests for segmentation and pseudo-label metrics."""

import math
import unittest
import warnings

import numpy as np

from tdodif.core import LabelMap
from tdodif.evaluation import (
    ConfusionMatrix,
    confusion,
    miou,
    pseudo_stats,
    get_confusion_table,
    get_iou_table,
    get_stats_table,
)
from tests.utils import get_random_labels


class TestConfusion(unittest.TestCase):

    def test_perfect(self):
        labels = LabelMap(np.array([[1, 2], [3, 3]]), 3)
        matrix = confusion(labels, labels)
        np.testing.assert_array_equal(matrix.counts, np.diag([1, 1, 2]))
        ious, mean = miou(matrix)
        np.testing.assert_array_equal(ious, [1, 1, 1])
        self.assertEqual(mean, 1)

    def test_ignored(self):
        gt = LabelMap(np.zeros((2, 3)), 2)
        pred = LabelMap(np.ones((2, 3)), 2)
        matrix = confusion(gt, pred)
        self.assertEqual(matrix.total, 0)
        self.assertEqual(matrix.ignored, 6)

    def test_hand_count(self):
        gt = LabelMap(np.array([[1, 1], [2, 2]]), 2)
        pred = LabelMap(np.array([[1, 2], [2, 0]]), 2)
        matrix = confusion(gt, pred)
        np.testing.assert_array_equal(matrix.counts, [[1, 1], [0, 1]])
        np.testing.assert_array_equal(matrix.unlabeled, [0, 1])
        ious, _ = miou(matrix)
        np.testing.assert_allclose(ious, [1 / 2, 1 / 3])

    def test_totals(self):
        rng = np.random.default_rng(0)
        gt = get_random_labels(rng, 4, 7, 9, fraction=0.8)
        pred = get_random_labels(rng, 4, 7, 9, fraction=0.9)
        matrix = confusion(gt, pred)
        self.assertEqual(matrix.total + matrix.ignored, 63)

    def test_sum(self):
        rng = np.random.default_rng(1)
        pairs = [
            (get_random_labels(rng, 3, 4, 4), get_random_labels(rng, 3, 4, 4))
            for _ in range(3)
        ]
        total = ConfusionMatrix.empty(3)
        for gt, pred in pairs:
            total = total + confusion(gt, pred)
        stacked_gt = LabelMap(np.concatenate([gt.array for gt, _ in pairs]), 3)
        stacked_pred = LabelMap(np.concatenate([pred.array for _, pred in pairs]), 3)
        np.testing.assert_array_equal(total.counts, confusion(stacked_gt, stacked_pred).counts)

    def test_dimension_mismatch(self):
        with self.assertRaises(ValueError):
            confusion(LabelMap(np.ones((2, 2)), 1), LabelMap(np.ones((2, 3)), 1))


class TestMeanIoU(unittest.TestCase):

    def test_one_third(self):
        matrix = ConfusionMatrix.empty(2)
        matrix.counts[0, 0] = 50
        matrix.counts[1, 0] = 50
        matrix.counts[0, 1] = 50
        ious, _ = miou(matrix)
        self.assertAlmostEqual(ious[0], 1 / 3)

    def test_absent_class_excluded(self):
        gt = LabelMap(np.array([[1, 2]]), 3)
        ious, mean = miou(confusion(gt, gt))
        self.assertTrue(math.isnan(ious[2]))
        self.assertEqual(mean, 1)

    def test_never_predicted_included(self):
        gt = LabelMap(np.array([[1, 2]]), 2)
        pred = LabelMap(np.array([[1, 1]]), 2)
        ious, mean = miou(confusion(gt, pred))
        self.assertEqual(ious[1], 0)
        self.assertAlmostEqual(mean, 0.25)

    def test_undefined(self):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter('always')
            _, mean = miou(ConfusionMatrix.empty(3))
        self.assertTrue(math.isnan(mean))
        self.assertEqual(len(caught), 1)

    def test_relabeling(self):
        rng = np.random.default_rng(2)
        gt = get_random_labels(rng, 4, 10, 10, fraction=0.9)
        pred = get_random_labels(rng, 4, 10, 10, fraction=0.9)
        permutation = np.array([0, 3, 1, 4, 2])
        _, mean = miou(confusion(gt, pred))
        _, permuted = miou(confusion(
            gt.with_array(permutation[gt.array]),
            pred.with_array(permutation[pred.array]),
        ))
        self.assertAlmostEqual(mean, permuted)

    def test_table(self):
        gt = LabelMap(np.array([[1, 2]]), 2)
        table = get_iou_table(confusion(gt, gt), ['road', 'sky'])
        self.assertEqual(list(table['class']), ['road', 'sky'])
        self.assertEqual(list(table['iou']), [1, 1])

    def test_confusion_table(self):
        gt = LabelMap(np.array([[1, 1], [2, 2]]), 2)
        pred = LabelMap(np.array([[1, 2], [2, 0]]), 2)
        table = get_confusion_table(confusion(gt, pred), ['road', 'sky'])
        self.assertEqual(list(table.index), ['road', 'sky'])
        self.assertEqual(list(table.columns), ['road', 'sky', 'unlabeled'])
        self.assertEqual(table.loc['road', 'sky'], 1)
        self.assertEqual(table.loc['sky', 'sky'], 1)
        self.assertEqual(table.loc['sky', 'unlabeled'], 1)
        default = get_confusion_table(confusion(gt, pred))
        self.assertEqual(list(default.index), ['1', '2'])


class TestPseudoStats(unittest.TestCase):

    def test_empty(self):
        gt = LabelMap(np.ones((2, 2)), 2)
        stats = pseudo_stats(LabelMap(np.zeros((2, 2)), 2), gt)
        self.assertEqual(stats.labeled_fraction, 0)
        self.assertTrue(stats.empty)
        self.assertEqual(stats.pseudo_miou, 0)

    def test_full(self):
        gt = LabelMap(np.array([[1, 2], [2, 1]]), 2)
        stats = pseudo_stats(gt, gt)
        self.assertEqual(stats.labeled_fraction, 1)
        self.assertEqual(stats.pseudo_miou, 1)

    def test_half_labeled(self):
        gt = LabelMap(np.array([[1, 2], [2, 1]]), 2)
        pseudo = gt.with_array(np.array([[1, 0], [2, 0]]))
        stats = pseudo_stats(pseudo, gt)
        self.assertEqual(stats.labeled_fraction, 0.5)
        self.assertEqual(stats.pseudo_miou, 1)
        np.testing.assert_array_equal(stats.class_counts, [1, 1])

    def test_sum(self):
        gt = LabelMap(np.array([[1, 2]]), 2)
        first = pseudo_stats(gt.with_array(np.array([[1, 0]])), gt)
        second = pseudo_stats(gt, gt)
        total = first + second
        self.assertEqual(total.labeled_fraction, 0.75)

    def test_table(self):
        gt = LabelMap(np.array([[1, 2]]), 2)
        table = get_stats_table({'init': pseudo_stats(gt.with_array(np.array([[1, 0]])), gt)})
        self.assertEqual(table.loc[0, 'stage'], 'init')
        self.assertEqual(table.loc[0, 'labeled_fraction'], 0.5)


if __name__ == '__main__':
    unittest.main()

#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""Tests for class-balanced pseudo-label selection."""

import unittest

import numpy as np

from tdodif.core import ProbMap
from tdodif.pseudo import (
    ClassThresholds,
    ClassConfidenceAccumulator,
    accumulate,
    compute_thresholds,
    select_pseudo_labels,
)
from tests.utils import get_random_probs


def get_two_class_probs(first_class_probs):
    """(2, 1, N) map from the probabilities of class 1."""
    first = np.asarray(first_class_probs, dtype=np.float64)[np.newaxis, np.newaxis]
    return ProbMap(np.concatenate((first, 1 - first)))


class TestAccumulator(unittest.TestCase):

    def test_single_pixel(self):
        accumulator = ClassConfidenceAccumulator.from_probs(get_two_class_probs([0.9]))
        np.testing.assert_array_equal(accumulator.counts, [1, 0])

    def test_histogram_mass(self):
        accumulator = ClassConfidenceAccumulator.from_probs(get_two_class_probs([0.4, 0.2]))
        np.testing.assert_array_equal(accumulator.counts, [0, 2])

    def test_merge_associative(self):
        rng = np.random.default_rng(0)
        maps = [get_random_probs(rng, 3, 5, 6) for _ in range(3)]
        a, b, c = (ClassConfidenceAccumulator.from_probs(m) for m in maps)
        left = a.merge(b).merge(c)
        right = a.merge(b.merge(c))
        np.testing.assert_array_equal(left.histogram, right.histogram)
        for class_index in range(3):
            np.testing.assert_array_equal(
                np.sort(left.class_values(class_index)),
                np.sort(right.class_values(class_index)),
            )

    def test_class_mismatch(self):
        accumulator = ClassConfidenceAccumulator(3)
        with self.assertRaises(ValueError):
            accumulate(get_two_class_probs([0.5]), accumulator)


class TestThresholds(unittest.TestCase):

    def test_top_fraction(self):
        probs = get_two_class_probs([0.9, 0.8, 0.7, 0.6, 0.5])
        thresholds = compute_thresholds([probs], 0.2)
        self.assertAlmostEqual(thresholds.values[0], 0.9, places=6)
        labels, _ = select_pseudo_labels(probs, thresholds)
        np.testing.assert_array_equal(labels.array, [[1, 0, 0, 0, 0]])

    def test_whole_class(self):
        probs = get_two_class_probs([0.9, 0.8, 0.7])
        thresholds = compute_thresholds([probs], 1)
        self.assertAlmostEqual(thresholds.values[0], 0.7, places=6)
        labels, _ = select_pseudo_labels(probs, thresholds)
        self.assertEqual(labels.num_labeled, 3)

    def test_empty_class(self):
        probs = get_two_class_probs([0.9, 0.8])
        thresholds = compute_thresholds([probs], 0.5)
        self.assertEqual(thresholds.values[1], 1)

    def test_bad_fraction(self):
        probs = get_two_class_probs([0.9])
        for p in 0, -0.1, 1.5:
            with self.assertRaises(ValueError):
                compute_thresholds([probs], p)

    def test_no_maps(self):
        with self.assertRaises(ValueError):
            compute_thresholds([], 0.2)

    def test_histogram_close_to_exact(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            num_classes = int(rng.integers(2, 7))
            maps = []
            for _ in range(int(rng.integers(1, 5))):
                height, width = (int(n) for n in rng.integers(1, 65, size=2))
                maps.append(get_random_probs(rng, num_classes, height, width))
            p = rng.uniform(0.05, 1)
            exact = compute_thresholds(maps, p, exact=True)
            approximate = compute_thresholds(maps, p, exact=False)
            self.assertEqual(exact.source, 'exact')
            self.assertEqual(approximate.source, 'histogram')
            difference = np.abs(exact.values - approximate.values)
            self.assertTrue((difference <= 1 / 4096 + 1e-7).all(), difference.max())

    def test_histogram_selection_within_one_bin(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            num_classes = int(rng.integers(2, 7))
            maps = []
            for _ in range(int(rng.integers(1, 5))):
                height, width = (int(n) for n in rng.integers(1, 65, size=2))
                maps.append(get_random_probs(rng, num_classes, height, width))
            p = rng.uniform(0.05, 1)
            accumulator = ClassConfidenceAccumulator(num_classes, keep_values=False)
            for probs in maps:
                accumulator = accumulate(probs, accumulator)
            thresholds = compute_thresholds(maps, p, exact=False)
            selected = np.zeros(num_classes, dtype=np.int64)
            for probs in maps:
                labels, _ = select_pseudo_labels(probs, thresholds)
                counts = np.bincount(labels.array.ravel(), minlength=num_classes + 1)
                selected += counts[1:]
            for class_index, count in enumerate(accumulator.counts):
                if not count:
                    continue
                index = int(round(thresholds.values[class_index] * 4096))
                slack = accumulator.histogram[class_index, index]
                self.assertLessEqual(abs(selected[class_index] - p * count), slack)

    def test_fraction_selected(self):
        rng = np.random.default_rng(2)
        probs = get_random_probs(rng, 3, 40, 40)
        thresholds = compute_thresholds([probs], 0.2)
        labels, prediction = select_pseudo_labels(probs, thresholds)
        for class_id in range(1, 4):
            predicted = (prediction.array == class_id).sum()
            selected = (labels.array == class_id).sum()
            self.assertGreaterEqual(selected, np.ceil(0.2 * predicted - 1e-9))


class TestSelection(unittest.TestCase):

    def test_above_threshold(self):
        probs = get_two_class_probs([0.95])
        labels, _ = select_pseudo_labels(probs, ClassThresholds(np.array([0.9, 0.9])))
        self.assertEqual(labels.array[0, 0], 1)

    def test_below_threshold(self):
        probs = get_two_class_probs([0.6])
        labels, prediction = select_pseudo_labels(probs, ClassThresholds(np.array([0.9, 0.9])))
        self.assertEqual(labels.array[0, 0], 0)
        self.assertEqual(prediction.array[0, 0], 1)

    def test_zero_thresholds(self):
        rng = np.random.default_rng(3)
        probs = get_random_probs(rng, 5, 8, 9)
        labels, prediction = select_pseudo_labels(probs, ClassThresholds.constant(0, 5))
        np.testing.assert_array_equal(labels.array, prediction.array)

    def test_consistency(self):
        rng = np.random.default_rng(4)
        probs = get_random_probs(rng, 4, 10, 10)
        thresholds = compute_thresholds([probs], 0.3)
        labels, prediction = select_pseudo_labels(probs, thresholds)
        labeled = labels.array != 0
        np.testing.assert_array_equal(labels.array[labeled], prediction.array[labeled])

    def test_class_mismatch(self):
        with self.assertRaises(ValueError):
            select_pseudo_labels(get_two_class_probs([0.5]), ClassThresholds.constant(0.5, 3))


if __name__ == '__main__':
    unittest.main()

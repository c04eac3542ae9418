#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""Tests for flow-based temporal diffusion."""

import unittest

import numpy as np

from tdodif.core import LabelMap, ProbMap, FlowField, ConfidenceMap
from tdodif.temporal import (
    flow_mask,
    warp_reference,
    temporal_fuse,
    get_fused_prediction,
)
from tests.utils import get_random_probs, get_random_labels


def get_warp(labels, probs, flow=None, confidence=None, threshold=0.5):
    if flow is None:
        flow = FlowField.zeros(labels.shape)
    if confidence is None:
        confidence = ConfidenceMap.ones(labels.shape)
    mask = flow_mask(confidence, threshold)
    return warp_reference(labels, probs, flow, mask, confidence=confidence)


class TestFlowMask(unittest.TestCase):

    def test_strict(self):
        confidence = ConfidenceMap(np.array([[0.7, 0.5, 0.2]]))
        mask = flow_mask(confidence, 0.5)
        np.testing.assert_array_equal(mask.array, [[1, 0, 0]])

    def test_threshold_range(self):
        with self.assertRaises(ValueError):
            flow_mask(ConfidenceMap.ones((1, 1)), 1.5)


class TestWarp(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(0)
        self.probs = get_random_probs(rng, 3, 6, 7)
        self.labels = get_random_labels(rng, 3, 6, 7, fraction=0.5)

    def test_identity(self):
        warped = get_warp(self.labels, self.probs)
        self.assertTrue(warped.hit.all())
        np.testing.assert_array_equal(warped.labels.array, self.labels.array)
        np.testing.assert_array_equal(warped.probs.data, self.probs.data)
        np.testing.assert_array_equal(warped.sources.ravel(), np.arange(42))

    def test_fully_masked(self):
        confidence = ConfidenceMap(np.zeros(self.labels.shape))
        warped = get_warp(self.labels, self.probs, confidence=confidence)
        self.assertFalse(warped.hit.any())
        self.assertEqual(warped.labels.num_labeled, 0)
        self.assertTrue((warped.sources == -1).all())

    def test_translation(self):
        u = np.ones(self.labels.shape)
        flow = FlowField(u, np.zeros_like(u))
        warped = get_warp(self.labels, self.probs, flow=flow)
        self.assertFalse(warped.hit[:, 0].any())
        self.assertTrue(warped.hit[:, 1:].all())
        np.testing.assert_array_equal(warped.labels.array[:, 1:], self.labels.array[:, :-1])

    def test_rounding(self):
        u = np.full(self.labels.shape, 0.5)
        flow = FlowField(u, np.full_like(u, 0.49))
        warped = get_warp(self.labels, self.probs, flow=flow)
        self.assertEqual(warped.sources[0, 1], 0)

    def test_collision_confidence(self):
        labels = LabelMap(np.array([[1, 2]]), 2)
        probs = ProbMap(np.array([[[0.9, 0.2]], [[0.1, 0.8]]]))
        flow = FlowField(np.array([[1.0, 0.0]]), np.zeros((1, 2)))
        for confidences, winner in ((0.9, 0.6), 1), ((0.6, 0.9), 2):
            confidence = ConfidenceMap(np.array([confidences]))
            warped = get_warp(labels, probs, flow=flow, confidence=confidence)
            self.assertEqual(warped.labels.array[0, 1], winner)
            self.assertFalse(warped.hit[0, 0])

    def test_collision_tie(self):
        labels = LabelMap(np.array([[1, 2]]), 2)
        probs = ProbMap(np.full((2, 1, 2), 0.5))
        flow = FlowField(np.array([[1.0, 0.0]]), np.zeros((1, 2)))
        warped = get_warp(labels, probs, flow=flow)
        self.assertEqual(warped.sources[0, 1], 1)

    def test_dimension_mismatch(self):
        flow = FlowField.zeros((3, 3))
        with self.assertRaises(ValueError):
            get_warp(self.labels, self.probs, flow=flow)


class TestFusion(unittest.TestCase):

    def fuse(self, own, target_probs, reference_label, reference_probs):
        initial = LabelMap(np.array([[own]]), 4)
        probs = ProbMap(np.array(target_probs).reshape(-1, 1, 1))
        labels = LabelMap(np.array([[reference_label]]), 4)
        reference = ProbMap(np.array(reference_probs).reshape(-1, 1, 1))
        warped = get_warp(labels, reference)
        return temporal_fuse(initial, probs, warped)

    def test_copy(self):
        fusion = self.fuse(0, (0.25,) * 4, 4, (0.1, 0.1, 0.1, 0.7))
        self.assertEqual(fusion.labels.array[0, 0], 4)
        self.assertTrue(fusion.copied[0, 0])
        self.assertFalse(fusion.fused[0, 0])

    def test_summed_argmax(self):
        fusion = self.fuse(1, (0.6, 0.3, 0.1, 0), 2, (0.1, 0.5, 0.2, 0.2))
        self.assertEqual(fusion.labels.array[0, 0], 2)
        self.assertTrue(fusion.fused[0, 0])
        np.testing.assert_allclose(fusion.sums[:2, 0, 0], (0.7, 0.8), rtol=1e-6)

    def test_no_hit(self):
        rng = np.random.default_rng(1)
        probs = get_random_probs(rng, 3, 4, 4)
        initial = get_random_labels(rng, 3, 4, 4, fraction=0.5)
        reference = get_random_labels(rng, 3, 4, 4)
        warped = get_warp(
            reference,
            probs,
            confidence=ConfidenceMap(np.zeros((4, 4))),
        )
        fusion = temporal_fuse(initial, probs, warped)
        np.testing.assert_array_equal(fusion.labels.array, initial.array)
        self.assertFalse(fusion.fused.any() or fusion.copied.any())

    def test_never_removes_labels(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            probs = get_random_probs(rng, 4, 8, 8)
            initial = get_random_labels(rng, 4, 8, 8, fraction=0.3)
            reference = get_random_labels(rng, 4, 8, 8, fraction=0.3)
            flow = FlowField(rng.normal(size=(8, 8)), rng.normal(size=(8, 8)))
            confidence = ConfidenceMap(rng.random((8, 8)))
            warped = get_warp(reference, get_random_probs(rng, 4, 8, 8), flow, confidence)
            fusion = temporal_fuse(initial, probs, warped)
            kept = initial.array != 0
            self.assertTrue((fusion.labels.array[kept] != 0).all())
            self.assertGreaterEqual(fusion.labels.num_labeled, initial.num_labeled)

    def test_idempotent_on_identical_frames(self):
        rng = np.random.default_rng(3)
        probs = get_random_probs(rng, 3, 5, 5)
        initial = probs.argmax().with_array(
            np.where(rng.random((5, 5)) < 0.5, probs.argmax().array, 0))
        warped = get_warp(initial, probs)
        fusion = temporal_fuse(initial, probs, warped)
        np.testing.assert_array_equal(fusion.labels.array, initial.array)

    def test_fused_prediction(self):
        prediction = LabelMap(np.array([[1, 1, 1]]), 3)
        initial = LabelMap(np.array([[1, 0, 0]]), 3)
        probs = ProbMap(np.array([[[0.5, 0.5, 0.5]], [[0.3, 0.3, 0.3]], [[0.2, 0.2, 0.2]]]))
        reference = LabelMap(np.array([[2, 3, 0]]), 3)
        reference_probs = ProbMap(np.array([[[0, 0, 1]], [[0.9, 0, 0]], [[0.1, 1, 0]]]))
        fusion = temporal_fuse(initial, probs, get_warp(reference, reference_probs))
        np.testing.assert_array_equal(fusion.labels.array, [[2, 3, 0]])
        fused = get_fused_prediction(prediction, fusion)
        np.testing.assert_array_equal(fused.array, [[2, 3, 1]])


if __name__ == '__main__':
    unittest.main()

#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""Tests for the toy segmentation model and its training loop."""

import unittest

import numpy as np
import torch

from tdodif.config import PipelineConfig
from tdodif.core import LabelMap
from tdodif.evaluation import confusion, miou
from tdodif.losses import CorrespondenceSample
from tdodif.toymodel import (
    ToyModel,
    OptimizerState,
    TrainingImage,
    image_features,
    pixel_features,
    forward,
    objective,
    adam_step,
    train_epoch,
    predict,
    zero_gradients,
)
from tests.utils import (
    get_block_superpixels,
    get_numerical_gradient,
    get_random_labels,
    get_random_sample,
    get_random_superpixels,
    get_relative_error,
)


def get_two_tone_scene(height=16, width=16):
    """Dark left half labelled 1, bright right half labelled 2."""
    image = np.zeros((height, width, 3), dtype=np.uint8)
    image[:, width // 2:] = 220
    image[:, :width // 2] = 30
    labels = np.ones((height, width), dtype=np.uint8)
    labels[:, width // 2:] = 2
    return image, LabelMap(labels, 2)


class TestFeatures(unittest.TestCase):

    def test_uniform_gray(self):
        features = image_features(np.full((5, 6, 3), 90, dtype=np.uint8))
        self.assertEqual(features.shape, (5, 6, 9))
        np.testing.assert_allclose(features[..., 6:], 0, atol=1e-7)
        np.testing.assert_allclose(features[..., 0], 90 / 255)

    def test_position(self):
        image = np.zeros((4, 8, 3), dtype=np.uint8)
        np.testing.assert_array_equal(pixel_features(image, (0, 0))[3:5], (0, 0))
        np.testing.assert_allclose(pixel_features(image, (2, 4))[3:5], (0.5, 0.5))

    def test_vertical_edge(self):
        image, _ = get_two_tone_scene()
        features = pixel_features(image, (8, 7))
        self.assertGreater(features[7], 0)
        self.assertEqual(features[8], 0)

    def test_outside(self):
        with self.assertRaises(ValueError):
            pixel_features(np.zeros((4, 4, 3), dtype=np.uint8), (4, 0))


class TestModel(unittest.TestCase):

    def test_zero_model(self):
        model = ToyModel.zeros(4)
        image, _ = get_two_tone_scene()
        hidden, logits = forward(model, image_features(image))
        self.assertFalse(hidden.any())
        self.assertFalse(logits.any())
        probs = predict(model, image)
        np.testing.assert_allclose(probs.data, 0.25)

    def test_identity_output_layer(self):
        model = ToyModel.zeros(3, hidden=3)
        model = model.with_parameters((
            model.w1,
            np.array([0.1, -0.2, 0.3]),
            np.eye(3),
            model.b2,
        ))
        hidden, logits = forward(model, np.zeros(9))
        np.testing.assert_allclose(logits, hidden)
        np.testing.assert_allclose(hidden, np.tanh([0.1, -0.2, 0.3]))

    def test_initialize_deterministic(self):
        first = ToyModel.initialize(5, seed=3)
        second = ToyModel.initialize(5, seed=3)
        for a, b in zip(first.parameters(), second.parameters()):
            np.testing.assert_array_equal(a, b)
        self.assertTrue(np.abs(first.w1).max() <= 1 / 3)

    def test_bad_shapes(self):
        with self.assertRaises(ValueError):
            ToyModel(np.zeros((9, 4)), np.zeros(3), np.zeros((4, 2)), np.zeros(2))
        with self.assertRaises(ValueError):
            forward(ToyModel.zeros(2), np.zeros(5))


class TestObjective(unittest.TestCase):

    def get_batch(self):
        rng = np.random.default_rng(0)
        image, labels = get_two_tone_scene()
        noisy = np.clip(image + rng.integers(0, 20, size=image.shape), 0, 255).astype(np.uint8)
        hit = np.ones(labels.shape, dtype=bool)
        sources = np.arange(labels.array.size).reshape(labels.shape)
        target_labels = labels.with_array(np.where(rng.random(labels.shape) < 0.3, labels.array, 0))
        return [
            TrainingImage(image, labels, 'source', name='source'),
            TrainingImage(
                noisy,
                target_labels,
                'target',
                superpixels=get_block_superpixels(16, 16, 8),
                reference_image=image,
                hit=hit,
                sources=sources,
                name='target',
            ),
        ]

    def test_gradient(self):
        model = ToyModel.initialize(2, hidden=5, seed=1)
        batch = self.get_batch()
        cfg = PipelineConfig(alpha_t=0.7, alpha_spa=0.5, alpha_tem=2, n_pos=6, n_neg=2)
        # Indices on the 4 x 4 feature grid
        samples = {1: CorrespondenceSample([0, 5, 10], [0, 5, 11], [[3, 12], [15, 2], [1, 4]])}
        result = objective(model, batch, cfg, samples=samples)
        self.assertGreater(result.report.l_spa, 0)
        self.assertGreater(result.report.l_tem, 0)

        def function():
            report = objective(model, batch, cfg, samples=result.samples).report
            return report.l_final

        for parameter, gradient in zip(model.parameters(), result.gradients):
            numerical = get_numerical_gradient(function, parameter, epsilon=1e-6)
            self.assertLess(get_relative_error(gradient, numerical), 1e-5)

    def get_random_batch(self, rng, num_classes=3, size=8):
        source_image = rng.integers(0, 256, size=(size, size, 3)).astype(np.uint8)
        target_image = rng.integers(0, 256, size=(size, size, 3)).astype(np.uint8)
        reference_image = rng.integers(0, 256, size=(size, size, 3)).astype(np.uint8)
        hit = np.ones((size, size), dtype=bool)
        sources = np.arange(size * size).reshape(size, size)
        return [
            TrainingImage(source_image, get_random_labels(rng, num_classes, size, size), 'source'),
            TrainingImage(
                target_image,
                get_random_labels(rng, num_classes, size, size, fraction=0.4),
                'target',
                superpixels=get_random_superpixels(rng, size, size, 4),
                reference_image=reference_image,
                hit=hit,
                sources=sources,
            ),
        ]

    def test_gradient_random_instances(self):
        cfg = PipelineConfig(alpha_t=0.7, alpha_spa=0.5, alpha_tem=2, feature_stride=2)
        for seed in range(20):
            rng = np.random.default_rng(seed)
            model = ToyModel.initialize(3, hidden=5, seed=seed)
            batch = self.get_random_batch(rng)
            # 4 x 4 feature grid at stride 2
            samples = {1: get_random_sample(rng, 16, 6, n_neg=2)}
            result = objective(model, batch, cfg, samples=samples)

            def function():
                return objective(model, batch, cfg, samples=result.samples).report.l_final

            for parameter, gradient in zip(model.parameters(), result.gradients):
                numerical = get_numerical_gradient(function, parameter)
                self.assertLess(get_relative_error(gradient, numerical), 1e-4)

    def test_no_target(self):
        model = ToyModel.initialize(2, hidden=5)
        batch = self.get_batch()[:1]
        result = objective(model, batch, PipelineConfig())
        self.assertEqual(result.report.l_spa, 0)
        self.assertEqual(result.report.l_tem, 0)
        self.assertAlmostEqual(result.report.l_final, result.report.l_seg_source)


class TestOptimizer(unittest.TestCase):

    def test_zero_learning_rate(self):
        model = ToyModel.initialize(3)
        state = OptimizerState.for_model(model, learning_rate=0)
        gradients = tuple(np.ones_like(p) for p in model.parameters())
        updated, state = adam_step(model, gradients, state)
        for a, b in zip(model.parameters(), updated.parameters()):
            np.testing.assert_array_equal(a, b)
        self.assertEqual(state.step, 1)

    def test_zero_gradient(self):
        model = ToyModel.initialize(3)
        state = OptimizerState.for_model(model, learning_rate=0.1)
        updated, _ = adam_step(model, zero_gradients(model), state)
        for a, b in zip(model.parameters(), updated.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_first_step_size(self):
        model = ToyModel.zeros(2)
        state = OptimizerState.for_model(model, learning_rate=0.01)
        gradients = tuple(np.full_like(p, 3) for p in model.parameters())
        updated, _ = adam_step(model, gradients, state)
        np.testing.assert_allclose(updated.b2, -0.01, rtol=1e-6)


class TestTraining(unittest.TestCase):

    def setUp(self):
        image, labels = get_two_tone_scene()
        self.items = [TrainingImage(image, labels, 'source')]
        self.cfg = PipelineConfig(alpha_spa=0, alpha_tem=0, batch_size=1)

    def train(self, seed, epochs=10, learning_rate=0.01):
        model = ToyModel.initialize(2, seed=seed)
        optimizer = OptimizerState.for_model(model, learning_rate=learning_rate, beta1=0.9)
        generator = torch.Generator().manual_seed(seed)
        losses = []
        for _ in range(epochs):
            model, optimizer, report = train_epoch(
                model, optimizer, self.items, self.cfg, generator)
            losses.append(report.l_final)
        return model, losses

    def test_loss_decreases(self):
        _, losses = self.train(0)
        self.assertTrue((np.diff(losses) < 0).all())

    def test_deterministic(self):
        first, _ = self.train(4, epochs=3)
        second, _ = self.train(4, epochs=3)
        for a, b in zip(first.parameters(), second.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_separable_scene(self):
        model, _ = self.train(0, epochs=60, learning_rate=0.05)
        image, labels = get_two_tone_scene()
        prediction = predict(model, image).argmax()
        _, mean_iou = miou(confusion(labels, prediction))
        self.assertGreater(mean_iou, 0.9)

    def test_empty(self):
        model = ToyModel.initialize(2)
        optimizer = OptimizerState.for_model(model)
        generator = torch.Generator()
        with self.assertRaises(ValueError):
            train_epoch(model, optimizer, [], self.cfg, generator)


if __name__ == '__main__':
    unittest.main()

import numpy as np

from tdodif.core import LabelMap, ProbMap, softmax
from tdodif.losses import CorrespondenceSample
from tdodif.slic import SuperpixelMap


def get_random_probs(rng, num_classes, height, width, scale=3):
    logits = scale * rng.standard_normal((num_classes, height, width))
    return ProbMap(softmax(logits, axis=0))


def get_random_labels(rng, num_classes, height, width, fraction=1):
    labels = rng.integers(1, num_classes + 1, size=(height, width))
    labels[rng.random((height, width)) >= fraction] = 0
    return LabelMap(labels, num_classes)


def get_random_superpixels(rng, height, width, num_superpixels):
    assignment = rng.integers(0, num_superpixels, size=(height, width))
    return SuperpixelMap.from_assignment(assignment, num_superpixels=num_superpixels)


def get_block_superpixels(height, width, block):
    rows, cols = np.indices((height, width))
    blocks_per_row = -(-width // block)
    assignment = rows // block * blocks_per_row + cols // block
    return SuperpixelMap.from_assignment(assignment)


def get_numerical_gradient(function, array, epsilon=1e-4):
    """
    Central differences of ``function()`` with respect to every entry of
    ``array``, which is modified in place and restored.
    """
    gradient = np.zeros_like(array, dtype=np.float64)
    flat = array.reshape(-1)
    for index in range(flat.size):
        original = flat[index]
        flat[index] = original + epsilon
        plus = function()
        flat[index] = original - epsilon
        minus = function()
        flat[index] = original
        gradient.flat[index] = (plus - minus) / (2 * epsilon)
    return gradient


def get_relative_error(analytic, numerical):
    analytic = np.asarray(analytic, dtype=np.float64)
    numerical = np.asarray(numerical, dtype=np.float64)
    scale = np.linalg.norm(analytic) + np.linalg.norm(numerical)
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(analytic - numerical) / scale)


def get_random_sample(rng, num_pixels, num_positives, n_neg=1):
    """Random correspondences whose negatives never repeat their target."""
    targets = rng.integers(0, num_pixels, size=num_positives)
    references = rng.integers(0, num_pixels, size=num_positives)
    offsets = rng.integers(1, num_pixels, size=(num_positives, n_neg))
    negatives = (targets[:, np.newaxis] + offsets) % num_pixels
    return CorrespondenceSample(targets, references, negatives)

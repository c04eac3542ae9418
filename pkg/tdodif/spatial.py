"""
Superpixel-based spatial diffusion of pseudo labels.

Inside each superpixel, every class that already has at least one pseudo
label is copied to all the pixels of the superpixel predicted as that class.
"""

import warnings

import numpy as np

from .core import LabelMap, check_same_shape


def get_class_presence(superpixel_ids, labels, num_superpixels, num_classes):
    """Boolean (S, C + 1) table of the seed classes present in each superpixel."""
    presence = np.zeros((num_superpixels, num_classes + 1), dtype=bool)
    seeds = labels != 0
    presence[superpixel_ids[seeds], labels[seeds]] = True
    return presence


def spatial_diffuse(prediction, initial, superpixels, return_conflicts=False):
    check_same_shape(prediction.shape, initial.shape, superpixels.shape)
    num_classes = max(prediction.num_classes, initial.num_classes)
    superpixel_ids = superpixels.assignment.ravel()
    predicted = prediction.array.ravel().astype(np.int64)
    seeds = initial.array.ravel().astype(np.int64)

    presence = get_class_presence(
        superpixel_ids,
        seeds,
        superpixels.num_superpixels,
        num_classes,
    )
    diffused = np.where(presence[superpixel_ids, predicted], predicted, 0)

    # Seeds always survive, even where they disagree with the prediction
    conflicts = (seeds != 0) & (seeds != predicted)
    diffused[conflicts] = seeds[conflicts]
    num_conflicts = int(conflicts.sum())
    if num_conflicts:
        warnings.warn(f'{num_conflicts} seed labels disagree with the prediction; seeds kept')

    result = LabelMap(diffused.reshape(initial.shape), num_classes)
    if return_conflicts:
        return result, num_conflicts
    return result

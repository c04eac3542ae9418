"""
Optical-flow-based temporal diffusion.

Pseudo labels of a near-view reference frame are forward-splatted onto the
far-view target frame through confident flow, then fused with the target's
own pseudo labels.
"""

from collections import namedtuple
from dataclasses import dataclass

import numpy as np

from .core import LabelMap, ProbMap, ConfidenceMap, check_same_shape


TemporalFusion = namedtuple('TemporalFusion', 'labels sums fused copied')


@dataclass(eq=False)
class WarpedReference:
    labels: LabelMap
    probs: ProbMap
    hit: np.ndarray
    sources: np.ndarray  # flat reference index splatted at each target pixel, -1 if none

    @property
    def shape(self):
        return self.hit.shape


def flow_mask(confidence, threshold):
    """Binary map of pixels whose flow confidence is strictly above threshold."""
    if not 0 <= threshold <= 1:
        raise ValueError(f'Threshold must be in [0, 1], got {threshold}')
    return ConfidenceMap((confidence.array > threshold).astype(np.float32))


def warp_reference(
        labels,
        probs,
        flow,
        mask,
        confidence=None,
        target_shape=None,
        ):
    """
    Forward-splat reference labels and probability columns onto the target.

    Each confident reference pixel q lands on round(q + F(q)). When several
    pixels land on the same target pixel, the one with the highest flow
    confidence wins, then the last one in row-major order.
    """
    check_same_shape(labels.shape, probs.shape, flow.shape, mask.shape)
    if confidence is not None:
        check_same_shape(confidence.shape, flow.shape)
    height, width = flow.shape
    target_height, target_width = labels.shape if target_shape is None else target_shape
    num_classes = probs.num_classes

    rows, cols = np.nonzero(mask.array > 0)
    sources = rows * width + cols
    target_x = np.floor(cols + flow.u[rows, cols].astype(np.float64) + 0.5).astype(np.int64)
    target_y = np.floor(rows + flow.v[rows, cols].astype(np.float64) + 0.5).astype(np.int64)
    inside = (
        (target_x >= 0) & (target_x < target_width)
        & (target_y >= 0) & (target_y < target_height)
    )
    sources = sources[inside]
    targets = target_y[inside] * target_width + target_x[inside]
    if confidence is None:
        priority = np.zeros(len(sources))
    else:
        priority = confidence.array.ravel()[sources]

    order = np.lexsort((sources, priority, targets))
    sorted_targets = targets[order]
    last = np.ones(len(order), dtype=bool)
    last[:-1] = sorted_targets[1:] != sorted_targets[:-1]
    winners = order[last]
    won_targets = targets[winners]
    won_sources = sources[winners]

    num_target_pixels = target_height * target_width
    warped_labels = np.zeros(num_target_pixels, dtype=np.uint8)
    warped_labels[won_targets] = labels.array.ravel()[won_sources]
    warped_probs = np.zeros((num_classes, num_target_pixels), dtype=np.float32)
    warped_probs[:, won_targets] = probs.data.reshape(num_classes, -1)[:, won_sources]
    hit = np.zeros(num_target_pixels, dtype=bool)
    hit[won_targets] = True
    source_map = np.full(num_target_pixels, -1, dtype=np.int64)
    source_map[won_targets] = won_sources

    shape = target_height, target_width
    return WarpedReference(
        LabelMap(warped_labels.reshape(shape), labels.num_classes),
        ProbMap(warped_probs.reshape(num_classes, *shape)),
        hit.reshape(shape),
        source_map.reshape(shape),
    )


def temporal_fuse(initial, probs, warped):
    """
    Fuse the target pseudo labels with the warped reference.

    Where both frames have a label, the class with the highest summed
    probability wins; where only the reference has one, it is copied; all
    other pixels keep the target label.
    """
    check_same_shape(initial.shape, probs.shape, warped.shape)
    own = initial.array
    arrived_labels = warped.labels.array
    arrived = warped.hit & (arrived_labels != 0)
    fused = arrived & (own != 0)
    copied = arrived & (own == 0)

    summed = probs.data.astype(np.float64) + warped.probs.data.astype(np.float64)
    fused_labels = summed.argmax(axis=0) + 1
    labels = np.where(fused, fused_labels, np.where(copied, arrived_labels, own))
    sums = np.where(fused[np.newaxis], summed, 0)
    num_classes = max(initial.num_classes, warped.labels.num_classes)
    return TemporalFusion(LabelMap(labels, num_classes), sums, fused, copied)


def get_fused_prediction(prediction, fusion):
    """
    Prediction to pair with temporally diffused labels before spatial
    diffusion: fused argmax where fused, copied label where copied.
    """
    labels = np.where(
        fusion.fused | fusion.copied,
        fusion.labels.array,
        prediction.array,
    )
    return prediction.with_array(labels)

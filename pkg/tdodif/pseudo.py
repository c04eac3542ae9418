"""
Class-balanced selection of initial pseudo labels.

For every class c, the threshold lambda_c keeps the most confident fraction p
of the pixels predicted as c over the whole target set. A pixel becomes a
pseudo label when its top probability reaches the threshold of its class.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .core import LabelMap


DEFAULT_BINS = 4096
EXACT_LIMIT = 10_000_000


@dataclass(eq=False)
class ClassThresholds:
    values: np.ndarray
    p: Optional[float] = None
    source: str = 'exact'

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or not len(values):
            raise ValueError(f'Expected one threshold per class, got shape {values.shape}')
        if values.min() < 0 or values.max() > 1:
            raise ValueError(f'Thresholds must be in [0, 1], got {values}')
        self.values = values

    @property
    def num_classes(self):
        return len(self.values)

    @classmethod
    def constant(cls, value, num_classes):
        return cls(np.full(num_classes, float(value)), source='constant')


@dataclass(eq=False)
class ClassConfidenceAccumulator:
    """
    Per-class histogram of top-1 confidences, optionally keeping the raw
    values so that thresholds can be computed exactly.
    """
    num_classes: int
    bins: int = DEFAULT_BINS
    keep_values: bool = True
    histogram: np.ndarray = None
    values: List[List[np.ndarray]] = field(default=None, repr=False)

    def __post_init__(self):
        if self.histogram is None:
            self.histogram = np.zeros((self.num_classes, self.bins), dtype=np.int64)
        if self.values is None:
            self.values = [[] for _ in range(self.num_classes)]

    @property
    def counts(self):
        return self.histogram.sum(axis=1)

    @property
    def total(self):
        return int(self.histogram.sum())

    @classmethod
    def from_probs(cls, probs, bins=DEFAULT_BINS, keep_values=True):
        accumulator = cls(probs.num_classes, bins=bins, keep_values=keep_values)
        prediction = probs.data.argmax(axis=0).ravel()
        confidence = probs.data.max(axis=0).ravel()
        indices = np.minimum((confidence.astype(np.float64) * bins).astype(np.int64), bins - 1)
        keys = prediction * bins + indices
        counts = np.bincount(keys, minlength=probs.num_classes * bins)
        accumulator.histogram = counts.reshape(probs.num_classes, bins)
        if keep_values:
            for class_index in range(probs.num_classes):
                accumulator.values[class_index].append(confidence[prediction == class_index])
        return accumulator

    def merge(self, other):
        if (self.num_classes, self.bins) != (other.num_classes, other.bins):
            message = (
                f'Cannot merge accumulators with {self.num_classes} classes/{self.bins} bins'
                f' and {other.num_classes} classes/{other.bins} bins'
            )
            raise ValueError(message)
        keep_values = self.keep_values and other.keep_values
        values = None
        if keep_values:
            values = [a + b for a, b in zip(self.values, other.values)]
        return ClassConfidenceAccumulator(
            self.num_classes,
            bins=self.bins,
            keep_values=keep_values,
            histogram=self.histogram + other.histogram,
            values=values,
        )

    def class_values(self, class_index):
        chunks = self.values[class_index]
        if not chunks:
            return np.empty(0, dtype=np.float32)
        return np.concatenate(chunks)


def accumulate(probs, accumulator):
    if probs.num_classes != accumulator.num_classes:
        message = (
            f'Probability map has {probs.num_classes} channels,'
            f' accumulator expects {accumulator.num_classes}'
        )
        raise ValueError(message)
    image_accumulator = ClassConfidenceAccumulator.from_probs(
        probs,
        bins=accumulator.bins,
        keep_values=accumulator.keep_values,
    )
    return accumulator.merge(image_accumulator)


def get_num_selected(p, count):
    """Number of top values that make up the fraction p of ``count``."""
    return max(1, math.ceil(p * count - 1e-9))


def get_exact_threshold(values, p):
    if not len(values):
        return 1.0
    num_selected = get_num_selected(p, len(values))
    ordered = np.sort(values.astype(np.float64))[::-1]
    return float(ordered[num_selected - 1])


def get_histogram_threshold(histogram, p):
    count = int(histogram.sum())
    if not count:
        return 1.0
    num_selected = get_num_selected(p, count)
    tail = np.cumsum(histogram[::-1])[::-1]
    index = int(np.flatnonzero(tail >= num_selected).max())
    return index / len(histogram)


def thresholds_from_acc(accumulator, p, exact=None, exact_limit=EXACT_LIMIT):
    """
    Compute lambda_c from an accumulator.

    The exact path sorts the stored confidences; it is used by default when
    the values were kept and the dataset has at most ``exact_limit`` pixels.
    """
    if not 0 < p <= 1:
        raise ValueError(f'p must be in (0, 1], got {p}')
    if exact is None:
        exact = accumulator.keep_values and accumulator.total <= exact_limit
    if exact and not accumulator.keep_values:
        raise ValueError('Exact thresholds need an accumulator that keeps values')
    values = []
    for class_index in range(accumulator.num_classes):
        if exact:
            threshold = get_exact_threshold(accumulator.class_values(class_index), p)
        else:
            threshold = get_histogram_threshold(accumulator.histogram[class_index], p)
        values.append(threshold)
    source = 'exact' if exact else 'histogram'
    return ClassThresholds(np.array(values), p, source)


def compute_thresholds(prob_maps, p, bins=DEFAULT_BINS, exact=None, exact_limit=EXACT_LIMIT):
    accumulator = None
    for probs in prob_maps:
        if accumulator is None:
            keep_values = exact is not False
            accumulator = ClassConfidenceAccumulator(
                probs.num_classes,
                bins=bins,
                keep_values=keep_values,
            )
        accumulator = accumulate(probs, accumulator)
    if accumulator is None:
        raise ValueError('At least one probability map is needed to compute thresholds')
    return thresholds_from_acc(accumulator, p, exact=exact, exact_limit=exact_limit)


def select_pseudo_labels(probs, thresholds):
    """
    Return the selected pseudo labels and the full prediction.
    """
    if probs.num_classes != thresholds.num_classes:
        message = (
            f'Probability map has {probs.num_classes} channels,'
            f' thresholds cover {thresholds.num_classes} classes'
        )
        raise ValueError(message)
    prediction = probs.argmax()
    confidence = probs.confidence().astype(np.float64)
    lambdas = thresholds.values[prediction.array.astype(np.int64) - 1]
    selected = np.where(confidence >= lambdas, prediction.array, 0)
    return LabelMap(selected, probs.num_classes), prediction

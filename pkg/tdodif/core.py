"""
Raster data model shared by every stage of the pipeline.

All per-pixel maps are NumPy arrays in row-major ``(height, width)`` order;
multi-channel maps are planar, ``(channels, height, width)``. Class IDs run
from 1 to ``num_classes`` and 0 always means unlabeled or ignored.
"""

from dataclasses import dataclass, field

import numpy as np


IGNORE = 0

# A Raster2D is a 2-D NumPy array indexed as [row, column]
Raster2D = np.ndarray


def _frozen(array, dtype=None):
    array = np.array(array, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


def check_same_shape(*shapes):
    shapes = [tuple(shape) for shape in shapes]
    if len(set(shapes)) > 1:
        message = f'Dimensions do not match: {shapes}'
        raise ValueError(message)


@dataclass(eq=False)
class LabelMap:
    """Per-pixel class IDs (pseudo labels, predictions or ground truth)."""
    array: np.ndarray
    num_classes: int

    def __post_init__(self):
        array = np.asarray(self.array)
        if array.ndim != 2 or 0 in array.shape:
            raise ValueError(f'Label map must be 2-D and non-empty, got {array.shape}')
        if not 1 <= self.num_classes <= 255:
            raise ValueError(f'Number of classes must be in [1, 255], got {self.num_classes}')
        if array.size and (array.min() < 0 or array.max() > self.num_classes):
            message = (
                f'Label values must be in [0, {self.num_classes}],'
                f' found range [{array.min()}, {array.max()}]'
            )
            raise ValueError(message)
        self.array = _frozen(array, np.uint8)
        self.num_classes = int(self.num_classes)

    @property
    def shape(self):
        return self.array.shape

    @property
    def height(self):
        return self.array.shape[0]

    @property
    def width(self):
        return self.array.shape[1]

    @property
    def num_labeled(self):
        return int(np.count_nonzero(self.array))

    def with_array(self, array):
        return LabelMap(array, self.num_classes)


@dataclass(eq=False)
class ProbMap:
    """Planar per-class probabilities p(c|x), shape (C, H, W)."""
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or 0 in data.shape:
            raise ValueError(f'Probability map must be (C, H, W), got {data.shape}')
        if not np.all(np.isfinite(data)):
            raise ValueError('Probability map contains NaN or Inf')
        if data.min() < 0 or data.max() > 1:
            message = (
                'Probabilities must be in [0, 1],'
                f' found range [{data.min()}, {data.max()}]'
            )
            raise ValueError(message)
        self.data = _frozen(data, np.float32)

    @property
    def num_classes(self):
        return self.data.shape[0]

    @property
    def shape(self):
        return self.data.shape[1:]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    def channel_sums(self):
        return self.data.sum(axis=0, dtype=np.float64)

    def softmax_deviation(self):
        return float(np.abs(self.channel_sums() - 1).max())

    def confidence(self):
        return self.data.max(axis=0)

    def argmax(self):
        """Full prediction: 1-based argmax class, ties to the lowest index."""
        return LabelMap(self.data.argmax(axis=0) + 1, self.num_classes)


@dataclass(eq=False)
class FlowField:
    """Dense displacement (u, v) in pixels from the reference to the target."""
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u)
        v = np.asarray(self.v)
        check_same_shape(u.shape, v.shape)
        if u.ndim != 2 or 0 in u.shape:
            raise ValueError(f'Flow components must be 2-D and non-empty, got {u.shape}')
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError('Flow field contains NaN or Inf')
        self.u = _frozen(u, np.float32)
        self.v = _frozen(v, np.float32)

    @property
    def shape(self):
        return self.u.shape

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape, np.float32), np.zeros(shape, np.float32))


@dataclass(eq=False)
class ConfidenceMap:
    """Per-pixel flow reliability, clamped to [0, 1] on construction."""
    array: np.ndarray
    num_clamped: int = field(default=0, init=False)

    def __post_init__(self):
        array = np.asarray(self.array, dtype=np.float32)
        if array.ndim != 2 or 0 in array.shape:
            raise ValueError(f'Confidence map must be 2-D and non-empty, got {array.shape}')
        if np.isnan(array).any():
            raise ValueError('Confidence map contains NaN')
        outside = (array < 0) | (array > 1)
        self.num_clamped = int(outside.sum())
        self.array = _frozen(np.clip(array, 0, 1), np.float32)

    @property
    def shape(self):
        return self.array.shape

    @classmethod
    def ones(cls, shape):
        return cls(np.ones(shape, np.float32))


@dataclass(eq=False)
class FeatureMap:
    """Planar pixel features f(x), shape (D, H, W), possibly downsampled."""
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or 0 in data.shape:
            raise ValueError(f'Feature map must be (D, H, W), got {data.shape}')
        if not np.all(np.isfinite(data)):
            raise ValueError('Feature map contains NaN or Inf')
        self.data = _frozen(data, np.float64)

    @property
    def dim(self):
        return self.data.shape[0]

    @property
    def shape(self):
        return self.data.shape[1:]

    def vectors(self):
        """Features as a (D, H * W) matrix, row-major over pixels."""
        return self.data.reshape(self.dim, -1)


def cosine_similarity(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    check_same_shape(a.shape, b.shape)
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0 or norm_b == 0:
        return 0.0
    similarity = np.dot(a, b) / (norm_a * norm_b)
    return float(np.clip(similarity, -1, 1))


def argmax_channel(probs, pixel):
    """Return the 1-based class of the most probable channel at (row, col)."""
    row, col = pixel
    return int(np.argmax(probs.data[:, row, col])) + 1


def softmax(logits, axis=0):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis=0):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

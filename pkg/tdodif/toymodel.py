"""
Small per-pixel segmentation model used to run self-training end to end.

Handcrafted pixel features go through a tanh hidden layer, whose
activations are the features seen by the spatial and temporal losses, and
a linear layer producing class logits.
"""

from collections import namedtuple
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import torch

from .core import LabelMap, ProbMap, FeatureMap, softmax
from .image import (
    to_float_rgb,
    rgb_to_gray,
    get_local_mean_std,
    get_central_differences,
    get_sample_coordinates,
)
from .losses import (
    LossReport,
    cross_entropy,
    spatial_loss,
    temporal_loss,
    sample_correspondences,
)
from .slic import downsample_superpixels


INPUT_DIM = 9
HIDDEN_DIM = 16

ObjectiveResult = namedtuple('ObjectiveResult', 'report gradients samples')


@dataclass(eq=False)
class ToyModel:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        self.w1, self.b1, self.w2, self.b2 = (
            np.array(p, dtype=np.float64) for p in self.parameters()
        )
        input_dim, hidden = self.w1.shape
        if self.b1.shape != (hidden,):
            raise ValueError(f'Expected b1 of shape ({hidden},), got {self.b1.shape}')
        if self.w2.ndim != 2 or self.w2.shape[0] != hidden:
            raise ValueError(f'Expected w2 of shape ({hidden}, C), got {self.w2.shape}')
        if self.b2.shape != (self.w2.shape[1],):
            raise ValueError(f'Expected b2 of shape ({self.w2.shape[1]},), got {self.b2.shape}')
        if not all(np.all(np.isfinite(p)) for p in self.parameters()):
            raise ValueError('Model parameters contain NaN or Inf')

    @property
    def input_dim(self):
        return self.w1.shape[0]

    @property
    def hidden_dim(self):
        return self.w1.shape[1]

    @property
    def num_classes(self):
        return self.w2.shape[1]

    def parameters(self):
        return self.w1, self.b1, self.w2, self.b2

    def with_parameters(self, parameters):
        return ToyModel(*parameters)

    @classmethod
    def initialize(cls, num_classes, hidden=HIDDEN_DIM, input_dim=INPUT_DIM, seed=0):
        """Uniform weights and biases in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
        generator = torch.Generator().manual_seed(int(seed))

        def uniform(shape, fan_in):
            bound = 1 / np.sqrt(fan_in)
            tensor = torch.empty(shape, dtype=torch.float64)
            return tensor.uniform_(-bound, bound, generator=generator).numpy()

        return cls(
            uniform((input_dim, hidden), input_dim),
            uniform((hidden,), input_dim),
            uniform((hidden, num_classes), hidden),
            uniform((num_classes,), hidden),
        )

    @classmethod
    def zeros(cls, num_classes, hidden=HIDDEN_DIM, input_dim=INPUT_DIM):
        return cls(
            np.zeros((input_dim, hidden)),
            np.zeros(hidden),
            np.zeros((hidden, num_classes)),
            np.zeros(num_classes),
        )


def image_features(image):
    """
    Per-pixel input features of shape (H, W, 9): RGB, normalized position,
    3x3 mean and standard deviation of the gray level and absolute central
    differences of the gray level along x and y.
    """
    rgb = to_float_rgb(image)
    height, width = rgb.shape[:2]
    gray = rgb_to_gray(image)
    mean, std = get_local_mean_std(gray)
    dx, dy = get_central_differences(gray)
    rows, cols = np.indices((height, width), dtype=np.float64)
    channels = (
        rgb[..., 0],
        rgb[..., 1],
        rgb[..., 2],
        cols / width,
        rows / height,
        mean,
        std,
        np.abs(dx),
        np.abs(dy),
    )
    return np.stack(channels, axis=-1)


def pixel_features(image, pixel):
    height, width = np.shape(image)[:2]
    row, col = pixel
    if not (0 <= row < height and 0 <= col < width):
        raise ValueError(f'Pixel {pixel} is outside the {width}x{height} image')
    return image_features(image)[row, col]


def forward(model, features):
    """Return hidden activations and logits for features of shape (..., d_in)."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[-1] != model.input_dim:
        message = f'Expected {model.input_dim} input features, got {features.shape[-1]}'
        raise ValueError(message)
    hidden = np.tanh(features @ model.w1 + model.b1)
    logits = hidden @ model.w2 + model.b2
    return hidden, logits


def backward(model, features, hidden, grad_hidden=None, grad_logits=None):
    """Parameter gradients given the gradients on hidden activations and logits."""
    features = np.asarray(features, dtype=np.float64).reshape(-1, model.input_dim)
    hidden = hidden.reshape(-1, model.hidden_dim)
    total_hidden = np.zeros_like(hidden)
    grad_w2 = np.zeros_like(model.w2)
    grad_b2 = np.zeros_like(model.b2)
    if grad_logits is not None:
        grad_logits = grad_logits.reshape(-1, model.num_classes)
        grad_w2 = hidden.T @ grad_logits
        grad_b2 = grad_logits.sum(axis=0)
        total_hidden += grad_logits @ model.w2.T
    if grad_hidden is not None:
        total_hidden += grad_hidden.reshape(-1, model.hidden_dim)
    grad_pre = total_hidden * (1 - hidden ** 2)
    grad_w1 = features.T @ grad_pre
    grad_b1 = grad_pre.sum(axis=0)
    return grad_w1, grad_b1, grad_w2, grad_b2


def add_gradients(a, b):
    return tuple(x + y for x, y in zip(a, b))


def zero_gradients(model):
    return tuple(np.zeros_like(p) for p in model.parameters())


@dataclass(eq=False)
class OptimizerState:
    learning_rate: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moments: Optional[List[np.ndarray]] = field(default=None, repr=False)
    second_moments: Optional[List[np.ndarray]] = field(default=None, repr=False)

    @classmethod
    def for_model(cls, model, learning_rate=1e-4, beta1=0.5, beta2=0.999):
        zeros = [np.zeros_like(p) for p in model.parameters()]
        return cls(
            learning_rate,
            beta1,
            beta2,
            first_moments=zeros,
            second_moments=[z.copy() for z in zeros],
        )


def adam_step(model, gradients, state):
    """Return the updated model and optimizer state after one Adam step."""
    if state.first_moments is None:
        state = OptimizerState.for_model(
            model, state.learning_rate, state.beta1, state.beta2)
    step = state.step + 1
    first_moments = []
    second_moments = []
    parameters = []
    for parameter, gradient, m, v in zip(
            model.parameters(),
            gradients,
            state.first_moments,
            state.second_moments,
            ):
        if gradient.shape != parameter.shape:
            raise ValueError(f'Gradient shape {gradient.shape} != parameter shape {parameter.shape}')
        m = state.beta1 * m + (1 - state.beta1) * gradient
        v = state.beta2 * v + (1 - state.beta2) * gradient ** 2
        m_hat = m / (1 - state.beta1 ** step)
        v_hat = v / (1 - state.beta2 ** step)
        parameters.append(parameter - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon))
        first_moments.append(m)
        second_moments.append(v)
    new_state = OptimizerState(
        state.learning_rate,
        state.beta1,
        state.beta2,
        state.epsilon,
        step,
        first_moments,
        second_moments,
    )
    return model.with_parameters(parameters), new_state


@dataclass(eq=False)
class TrainingImage:
    """
    One image of the training stream with its labels: ground truth for the
    source domain, diffused pseudo labels for the target domain.
    """
    image: np.ndarray
    labels: LabelMap
    domain: str = 'source'
    superpixels: Optional[object] = None
    reference_image: Optional[np.ndarray] = None
    hit: Optional[np.ndarray] = None
    sources: Optional[np.ndarray] = None
    name: str = ''
    _features: Optional[np.ndarray] = field(default=None, init=False, repr=False)
    _reference_features: Optional[np.ndarray] = field(default=None, init=False, repr=False)
    _grid: dict = field(default_factory=dict, init=False, repr=False)

    @property
    def features(self):
        if self._features is None:
            self._features = image_features(self.image)
        return self._features

    @property
    def reference_features(self):
        if self._reference_features is None and self.reference_image is not None:
            self._reference_features = image_features(self.reference_image)
        return self._reference_features

    @property
    def has_correspondences(self):
        return (
            self.reference_image is not None
            and self.hit is not None
            and self.sources is not None
            and bool(np.any(self.hit))
        )

    def get_grid(self, stride):
        """Sample rows and columns of the feature grid and the matching superpixels."""
        if stride not in self._grid:
            height, width = self.labels.shape
            rows = get_sample_coordinates(height, stride)
            cols = get_sample_coordinates(width, stride)
            superpixels = None
            if self.superpixels is not None:
                superpixels = downsample_superpixels(self.superpixels, len(cols), len(rows))
            self._grid[stride] = rows, cols, superpixels
        return self._grid[stride]


def get_grid_sources(sources, rows, cols, width, stride):
    """Map full-resolution reference indices at grid samples to grid indices."""
    sampled = sources[np.ix_(rows, cols)]
    valid = sampled >= 0
    safe = np.where(valid, sampled, 0)
    source_rows = np.minimum(safe // width // stride, len(rows) - 1)
    source_cols = np.minimum(safe % width // stride, len(cols) - 1)
    return np.where(valid, source_rows * len(cols) + source_cols, -1)


def objective(model, batch, cfg, generator=None, samples=None):
    """
    Evaluate the combined training loss on a batch and its gradient with
    respect to the model parameters.

    ``samples`` maps batch positions to correspondence samples; missing
    entries are drawn from ``generator``. The samples used are returned so
    that the same objective can be evaluated again.
    """
    samples = {} if samples is None else dict(samples)
    gradients = zero_gradients(model)
    seg_values = {}
    for domain in 'source', 'target':
        items = [item for item in batch if item.domain == domain]
        if not items:
            seg_values[domain] = 0.0
            continue
        features = []
        labels = []
        for item in items:
            labeled = np.flatnonzero(item.labels.array)
            features.append(item.features.reshape(-1, model.input_dim)[labeled])
            labels.append(item.labels.array.ravel()[labeled])
        features = np.concatenate(features)
        labels = np.concatenate(labels)
        hidden, logits = forward(model, features)
        term = cross_entropy(logits.T, labels)
        seg_values[domain] = term.value
        weight = cfg.alpha_t if domain == 'target' else 1
        if not term.empty and weight:
            grads = backward(model, features, hidden, grad_logits=weight * term.gradient.T)
            gradients = add_gradients(gradients, grads)

    stride = cfg.feature_stride
    spatial_items = []
    temporal_items = []
    for index, item in enumerate(batch):
        if item.domain != 'target':
            continue
        if cfg.alpha_spa and item.superpixels is not None:
            spatial_items.append(index)
        if cfg.alpha_tem and item.has_correspondences:
            temporal_items.append(index)

    l_spa = []
    l_tem = []
    for index in sorted(set(spatial_items) | set(temporal_items)):
        item = batch[index]
        rows, cols, superpixels = item.get_grid(stride)
        grid_features = item.features[np.ix_(rows, cols)]
        hidden, logits = forward(model, grid_features)
        feature_map = FeatureMap(hidden.transpose(2, 0, 1))
        grad_hidden = np.zeros_like(hidden)

        if index in spatial_items:
            term = spatial_loss(feature_map, superpixels)
            l_spa.append(term.value)
            weight = cfg.alpha_spa / len(spatial_items)
            grad_hidden += weight * term.gradient.transpose(1, 2, 0)

        if index in temporal_items:
            reference_grid = item.reference_features[np.ix_(rows, cols)]
            reference_hidden, _ = forward(model, reference_grid)
            reference_map = FeatureMap(reference_hidden.transpose(2, 0, 1))
            if index not in samples:
                prediction = LabelMap(logits.argmax(axis=-1) + 1, model.num_classes)
                grid_sources = get_grid_sources(
                    item.sources, rows, cols, item.labels.width, stride)
                hit = item.hit[np.ix_(rows, cols)] & (grid_sources >= 0)
                samples[index] = sample_correspondences(
                    hit,
                    prediction,
                    cfg.n_pos,
                    cfg.n_neg,
                    generator,
                    sources=np.where(grid_sources >= 0, grid_sources, 0),
                )
            term = temporal_loss(feature_map, reference_map, samples[index])
            l_tem.append(term.value)
            weight = cfg.alpha_tem / len(temporal_items)
            grad_target, grad_reference = term.gradient
            grad_hidden += weight * grad_target.transpose(1, 2, 0)
            grads = backward(
                model,
                reference_grid,
                reference_hidden,
                grad_hidden=weight * grad_reference.transpose(1, 2, 0),
            )
            gradients = add_gradients(gradients, grads)

        grads = backward(model, grid_features, hidden, grad_hidden=grad_hidden)
        gradients = add_gradients(gradients, grads)

    report = LossReport(
        l_seg_source=seg_values['source'],
        l_seg_target=seg_values['target'],
        l_spa=float(np.mean(l_spa)) if l_spa else 0.0,
        l_tem=float(np.mean(l_tem)) if l_tem else 0.0,
        alpha_t=cfg.alpha_t,
        alpha_spa=cfg.alpha_spa,
        alpha_tem=cfg.alpha_tem,
    )
    return ObjectiveResult(report, gradients, samples)


def train_epoch(model, optimizer, items, cfg, generator):
    """
    One pass over the training images in shuffled order.

    Returns the updated model and optimizer and the loss report averaged
    over batches.
    """
    if not items:
        raise ValueError('Cannot train on an empty set of images')
    if not any(item.labels.num_labeled for item in items):
        raise ValueError('Training images have no labeled pixels')
    order = torch.randperm(len(items), generator=generator).tolist()
    reports = []
    for start in range(0, len(order), cfg.batch_size):
        batch = [items[i] for i in order[start:start + cfg.batch_size]]
        result = objective(model, batch, cfg, generator=generator)
        model, optimizer = adam_step(model, result.gradients, optimizer)
        reports.append(result.report)
    return model, optimizer, LossReport.mean(reports)


def predict(model, image, features=None):
    """Softmax class probabilities at every pixel."""
    if features is None:
        features = image_features(image)
    _, logits = forward(model, features)
    probs = softmax(logits, axis=-1)
    return ProbMap(np.clip(probs.transpose(2, 0, 1), 0, 1))

"""
Training losses and their analytic gradients.

Gradients are returned with the same shape as the differentiated input so
that callers can chain them through any model producing logits or features.
"""

import warnings
from collections import namedtuple
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .core import softmax, log_softmax, check_same_shape


DOMAINS = 'source', 'target'

LossTerm = namedtuple('LossTerm', 'value gradient empty')


@dataclass(eq=False)
class CorrespondenceSample:
    """
    Flat pixel indices of positive pairs (target, reference) and, for each
    positive, ``n_neg`` negative pixels in the target.
    """
    targets: np.ndarray
    references: np.ndarray
    negatives: np.ndarray
    num_dropped: int = 0

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.int64).ravel()
        self.references = np.asarray(self.references, dtype=np.int64).ravel()
        negatives = np.asarray(self.negatives, dtype=np.int64)
        if negatives.ndim != 2:
            if len(self.targets):
                negatives = negatives.reshape(len(self.targets), -1)
            else:
                negatives = negatives.reshape(0, 0)
        if len(negatives) != len(self.targets):
            message = (
                f'Expected negatives for {len(self.targets)} positives,'
                f' got {len(negatives)}'
            )
            raise ValueError(message)
        self.negatives = negatives
        check_same_shape(self.targets.shape, self.references.shape)

    def __len__(self):
        return len(self.targets)

    @property
    def empty(self):
        return not len(self.targets)


@dataclass
class LossReport:
    l_seg_source: float = 0.0
    l_seg_target: float = 0.0
    l_spa: float = 0.0
    l_tem: float = 0.0
    alpha_t: float = 1.0
    alpha_spa: float = 0.1
    alpha_tem: float = 5.0
    gradients: Optional[dict] = field(default=None, repr=False, compare=False)

    @property
    def l_seg(self):
        return self.l_seg_source + self.alpha_t * self.l_seg_target

    @property
    def l_final(self):
        return combine(
            self.l_seg_source,
            self.l_seg_target,
            self.l_spa,
            self.l_tem,
            self.alpha_t,
            self.alpha_spa,
            self.alpha_tem,
        )

    def as_dict(self):
        return {
            'l_seg_source': self.l_seg_source,
            'l_seg_target': self.l_seg_target,
            'l_seg': self.l_seg,
            'l_spa': self.l_spa,
            'l_tem': self.l_tem,
            'l_final': self.l_final,
        }

    def format(self):
        return '\n'.join(f'{key:<13}{value:.8f}' for key, value in self.as_dict().items())

    @classmethod
    def mean(cls, reports):
        reports = list(reports)
        if not reports:
            raise ValueError('Cannot average an empty list of loss reports')
        first = reports[0]
        names = 'l_seg_source', 'l_seg_target', 'l_spa', 'l_tem'
        values = {
            name: float(np.mean([getattr(r, name) for r in reports]))
            for name in names
        }
        return cls(
            alpha_t=first.alpha_t,
            alpha_spa=first.alpha_spa,
            alpha_tem=first.alpha_tem,
            **values,
        )


def cross_entropy(logits, labels):
    """
    Mean softmax cross-entropy over the pixels with a nonzero label.

    ``logits`` has shape (C, ...) and ``labels`` the trailing shape.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    check_same_shape(logits.shape[1:], labels.shape)
    num_classes = logits.shape[0]
    scores = logits.reshape(num_classes, -1)
    flat_labels = labels.ravel().astype(np.int64)
    labeled = np.flatnonzero(flat_labels)
    gradient = np.zeros_like(scores)
    if not len(labeled):
        return LossTerm(0.0, gradient.reshape(logits.shape), True)
    if flat_labels.max() > num_classes:
        raise ValueError(f'Label {flat_labels.max()} exceeds the {num_classes} logit channels')
    classes = flat_labels[labeled] - 1
    selected = scores[:, labeled]
    log_probs = log_softmax(selected, axis=0)
    columns = np.arange(len(labeled))
    value = -log_probs[classes, columns].mean()
    probs = softmax(selected, axis=0)
    probs[classes, columns] -= 1
    gradient[:, labeled] = probs / len(labeled)
    return LossTerm(float(value), gradient.reshape(logits.shape), False)


def seg_loss(logits, labels, alpha_t=1.0, domain='source'):
    if domain not in DOMAINS:
        raise ValueError(f'Domain must be one of {DOMAINS}, got "{domain}"')
    if alpha_t < 0:
        raise ValueError(f'alpha_t must be non-negative, got {alpha_t}')
    labels = getattr(labels, 'array', labels)
    term = cross_entropy(logits, labels)
    if term.empty:
        warnings.warn(f'No labeled pixels in the {domain} segmentation loss')
    if domain == 'target':
        term = LossTerm(alpha_t * term.value, alpha_t * term.gradient, term.empty)
    return term


def get_cosines(a, b):
    """
    Row-wise cosine similarity and its derivatives with respect to both rows.

    Zero-norm rows have similarity 0 and zero gradient.
    """
    norm_a = np.linalg.norm(a, axis=1)
    norm_b = np.linalg.norm(b, axis=1)
    valid = (norm_a > 0) & (norm_b > 0)
    safe_a = np.where(valid, norm_a, 1)
    safe_b = np.where(valid, norm_b, 1)
    dots = (a * b).sum(axis=1)
    cosines = np.where(valid, dots / (safe_a * safe_b), 0)
    inverse = (1 / (safe_a * safe_b))[:, np.newaxis]
    d_a = b * inverse - cosines[:, np.newaxis] * a / safe_a[:, np.newaxis] ** 2
    d_b = a * inverse - cosines[:, np.newaxis] * b / safe_b[:, np.newaxis] ** 2
    d_a[~valid] = 0
    d_b[~valid] = 0
    return cosines, d_a, d_b


def spatial_loss(features, superpixels):
    """
    One minus the mean cosine similarity between each pixel feature and the
    feature centroid of its superpixel, averaged over superpixels.
    """
    check_same_shape(features.shape, superpixels.shape)
    vectors = features.vectors().T
    ids = superpixels.assignment.ravel()
    num_superpixels = superpixels.num_superpixels
    counts = np.bincount(ids, minlength=num_superpixels)
    present = counts > 0
    num_present = int(present.sum())

    sums = np.zeros((num_superpixels, features.dim))
    np.add.at(sums, ids, vectors)
    centroids = sums / np.maximum(counts, 1)[:, np.newaxis]
    cosines, d_features, d_centroids = get_cosines(vectors, centroids[ids])

    # A lone pixel is its own centroid
    pixel_counts = counts[ids]
    cosines = np.where(pixel_counts > 1, cosines, 1)
    weights = np.where(pixel_counts > 1, -1 / (num_present * pixel_counts), 0)
    similarity = np.bincount(ids, weights=cosines, minlength=num_superpixels)
    similarity = similarity[present] / counts[present]
    value = float(np.mean(1 - similarity))

    gradient = weights[:, np.newaxis] * d_features
    centroid_gradient = np.zeros_like(sums)
    np.add.at(centroid_gradient, ids, weights[:, np.newaxis] * d_centroids)
    gradient += centroid_gradient[ids] / pixel_counts[:, np.newaxis]
    gradient = gradient.T.reshape(features.data.shape)
    return LossTerm(value, gradient, False)


def sample_correspondences(
        hit,
        prediction,
        n_pos,
        n_neg,
        generator,
        sources=None,
        ):
    """
    Draw up to ``n_pos`` target pixels with a temporal correspondence and,
    for each, ``n_neg`` target pixels of a different predicted class.

    ``sources`` maps every target pixel to the flat index of its
    corresponding reference pixel; by default the correspondence is the
    identity.
    """
    if n_pos < 0 or n_neg < 0:
        raise ValueError(f'Sample sizes must be non-negative, got {n_pos} and {n_neg}')
    hit = np.asarray(hit, dtype=bool)
    predicted = getattr(prediction, 'array', prediction)
    check_same_shape(hit.shape, predicted.shape)
    predicted = predicted.ravel()
    if sources is None:
        sources = np.arange(hit.size)
    else:
        check_same_shape(np.shape(sources), hit.shape)
        sources = np.asarray(sources, dtype=np.int64).ravel()

    candidates = np.flatnonzero(hit.ravel())
    if not len(candidates) or not n_pos:
        return CorrespondenceSample([], [], np.empty((0, n_neg)))

    permutation = torch.randperm(len(candidates), generator=generator).numpy()
    chosen = candidates[permutation[:n_pos]]
    targets = []
    negatives = []
    num_dropped = 0
    for pixel in chosen:
        if n_neg:
            pool = np.flatnonzero((predicted != predicted[pixel]) & (predicted != 0))
            if not len(pool):
                num_dropped += 1
                continue
            draws = torch.randint(len(pool), (n_neg,), generator=generator).numpy()
            negatives.append(pool[draws])
        else:
            negatives.append(np.empty(0, dtype=np.int64))
        targets.append(pixel)
    if num_dropped:
        message = f'{num_dropped} positive pairs dropped: no pixel of a different class to contrast'
        warnings.warn(message)
    targets = np.array(targets, dtype=np.int64)
    sample = CorrespondenceSample(
        targets,
        sources[targets],
        np.array(negatives, dtype=np.int64).reshape(len(targets), n_neg),
        num_dropped=num_dropped,
    )
    return sample


def temporal_loss(target_features, reference_features, sample):
    """
    Contrastive loss pulling each target feature towards its corresponding
    reference feature and away from target features of other classes.

    Returns the loss and the gradients for both feature maps.
    """
    gradient_target = np.zeros((target_features.dim, int(np.prod(target_features.shape))))
    gradient_reference = np.zeros(
        (reference_features.dim, int(np.prod(reference_features.shape))))
    if sample.empty:
        gradients = (
            gradient_target.reshape(target_features.data.shape),
            gradient_reference.reshape(reference_features.data.shape),
        )
        return LossTerm(0.0, gradients, True)

    target_vectors = target_features.vectors().T
    reference_vectors = reference_features.vectors().T
    num_positives, num_negatives = sample.negatives.shape
    anchors = target_vectors[sample.targets]

    positive, d_anchor_pos, d_reference = get_cosines(
        anchors, reference_vectors[sample.references])
    repeated = np.repeat(anchors, num_negatives, axis=0)
    negative_pixels = sample.negatives.ravel()
    negative, d_anchor_neg, d_negative = get_cosines(
        repeated, target_vectors[negative_pixels])
    negative = negative.reshape(num_positives, num_negatives)

    similarities = np.concatenate((positive[:, np.newaxis], negative), axis=1)
    log_probs = log_softmax(similarities, axis=1)
    value = float(-log_probs[:, 0].mean())

    weights = softmax(similarities, axis=1) / num_positives
    weights[:, 0] -= 1 / num_positives
    positive_weights = weights[:, :1]
    negative_weights = weights[:, 1:].reshape(-1, 1)

    d_anchor = positive_weights * d_anchor_pos
    d_anchor += (negative_weights * d_anchor_neg).reshape(
        num_positives, num_negatives, -1).sum(axis=1)
    gradient_target = gradient_target.T
    gradient_reference = gradient_reference.T
    np.add.at(gradient_target, sample.targets, d_anchor)
    np.add.at(gradient_target, negative_pixels, negative_weights * d_negative)
    np.add.at(gradient_reference, sample.references, positive_weights * d_reference)
    gradients = (
        gradient_target.T.reshape(target_features.data.shape),
        gradient_reference.T.reshape(reference_features.data.shape),
    )
    return LossTerm(value, gradients, False)


def combine(l_seg_src, l_seg_tgt, l_spa, l_tem, alpha_t, alpha_spa, alpha_tem):
    weights = {'alpha_t': alpha_t, 'alpha_spa': alpha_spa, 'alpha_tem': alpha_tem}
    for name, weight in weights.items():
        if weight < 0:
            raise ValueError(f'{name} must be non-negative, got {weight}')
    return (l_seg_src + alpha_t * l_seg_tgt) + alpha_spa * l_spa + alpha_tem * l_tem

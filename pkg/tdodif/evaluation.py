"""
Segmentation metrics and pseudo-label quality statistics.

Confusion matrices are summed over a dataset before computing IoU.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .core import check_same_shape


@dataclass(eq=False)
class ConfusionMatrix:
    """
    Rows are ground-truth classes, columns predicted classes. Pixels with a
    ground-truth label but no prediction are counted in ``unlabeled``;
    pixels with ground truth 0 are only counted in ``ignored``.
    """
    counts: np.ndarray
    unlabeled: np.ndarray
    ignored: int = 0

    @property
    def num_classes(self):
        return len(self.counts)

    @property
    def total(self):
        return int(self.counts.sum() + self.unlabeled.sum())

    def __add__(self, other):
        if self.num_classes != other.num_classes:
            message = (
                f'Cannot add confusion matrices of {self.num_classes}'
                f' and {other.num_classes} classes'
            )
            raise ValueError(message)
        return ConfusionMatrix(
            self.counts + other.counts,
            self.unlabeled + other.unlabeled,
            self.ignored + other.ignored,
        )

    @classmethod
    def empty(cls, num_classes):
        return cls(
            np.zeros((num_classes, num_classes), dtype=np.int64),
            np.zeros(num_classes, dtype=np.int64),
        )


def confusion(gt, pred, num_classes=None):
    check_same_shape(gt.shape, pred.shape)
    if num_classes is None:
        num_classes = max(gt.num_classes, pred.num_classes)
    truth = gt.array.ravel().astype(np.int64)
    predicted = pred.array.ravel().astype(np.int64)
    evaluated = truth != 0
    truth = truth[evaluated] - 1
    predicted = predicted[evaluated]
    unlabeled = predicted == 0
    keys = truth[~unlabeled] * num_classes + predicted[~unlabeled] - 1
    counts = np.bincount(keys, minlength=num_classes ** 2).reshape(num_classes, num_classes)
    return ConfusionMatrix(
        counts,
        np.bincount(truth[unlabeled], minlength=num_classes),
        int((~evaluated).sum()),
    )


def get_iou_terms(cm):
    tp = np.diag(cm.counts).astype(np.int64)
    fp = cm.counts.sum(axis=0) - tp
    fn = cm.counts.sum(axis=1) - tp + cm.unlabeled
    return tp, fp, fn


def miou(cm):
    """
    Per-class IoU and their mean. Classes that are neither in the ground
    truth nor predicted get NaN and are left out of the mean.
    """
    tp, fp, fn = get_iou_terms(cm)
    union = tp + fp + fn
    present = union > 0
    ious = np.full(cm.num_classes, np.nan)
    ious[present] = tp[present] / union[present]
    if not present.any():
        warnings.warn('No class present in ground truth or prediction; mIoU undefined')
        return ious, float('nan')
    return ious, float(ious[present].mean())


@dataclass(eq=False)
class PseudoLabelStats:
    labeled: int
    total: int
    confusion: ConfusionMatrix
    class_counts: np.ndarray

    @property
    def labeled_fraction(self):
        return self.labeled / self.total if self.total else 0.0

    @property
    def empty(self):
        return self.confusion.total == 0

    @property
    def pseudo_miou(self):
        if self.empty:
            return 0.0
        return miou(self.confusion)[1]

    def __add__(self, other):
        return PseudoLabelStats(
            self.labeled + other.labeled,
            self.total + other.total,
            self.confusion + other.confusion,
            self.class_counts + other.class_counts,
        )

    @classmethod
    def empty_stats(cls, num_classes):
        return cls(0, 0, ConfusionMatrix.empty(num_classes), np.zeros(num_classes, np.int64))


def pseudo_stats(pseudo, gt):
    """Coverage of the pseudo labels and their accuracy where both maps are labeled."""
    check_same_shape(pseudo.shape, gt.shape)
    num_classes = max(pseudo.num_classes, gt.num_classes)
    labeled = pseudo.array != 0
    restricted = gt.with_array(np.where(labeled, gt.array, 0))
    matrix = confusion(restricted, pseudo, num_classes=num_classes)
    class_counts = np.bincount(
        pseudo.array[labeled].astype(np.int64) - 1,
        minlength=num_classes,
    )
    return PseudoLabelStats(
        int(labeled.sum()),
        int(pseudo.array.size),
        matrix,
        class_counts,
    )


def get_iou_table(cm, class_names=None):
    tp, fp, fn = get_iou_terms(cm)
    ious, _ = miou(cm)
    if class_names is None:
        class_names = [str(i) for i in range(1, cm.num_classes + 1)]
    return pd.DataFrame({
        'class': list(class_names),
        'tp': tp,
        'fp': fp,
        'fn': fn,
        'iou': ious,
    })


def get_confusion_table(cm, class_names=None):
    """Pixel counts with one row per ground-truth class and one column per prediction."""
    if class_names is None:
        class_names = [str(i) for i in range(1, cm.num_classes + 1)]
    table = pd.DataFrame(cm.counts, index=list(class_names), columns=list(class_names))
    table['unlabeled'] = cm.unlabeled
    table.index.name = 'ground_truth'
    return table


def get_stats_table(stats_by_stage):
    rows = []
    for stage, stats in stats_by_stage.items():
        rows.append({
            'stage': stage,
            'labeled_fraction': stats.labeled_fraction,
            'pseudo_miou': stats.pseudo_miou,
            'empty': stats.empty,
        })
    return pd.DataFrame(rows)

"""
Self-training with label diffusion.

Every round predicts the target images, selects class-balanced pseudo
labels, diffuses them through optical flow and superpixels in the
configured order and re-trains the model on the source ground truth and the
diffused target labels.
"""

import warnings
from collections import OrderedDict, namedtuple
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

from . import io
from .core import LabelMap
from .errors import ConfigurationError
from .evaluation import ConfusionMatrix, PseudoLabelStats, confusion, miou, pseudo_stats
from .losses import LossReport
from .pseudo import ClassThresholds, compute_thresholds, select_pseudo_labels
from .slic import SlicParams, slic_segment
from .spatial import spatial_diffuse
from .temporal import (
    flow_mask,
    warp_reference,
    temporal_fuse,
    get_fused_prediction,
)
from .timer import timer
from .toymodel import (
    ToyModel,
    OptimizerState,
    TrainingImage,
    predict,
    train_epoch,
)


STAGE_NAMES = 'prediction', 'init', 'td', 'sd'

RoundLabels = namedtuple('RoundLabels', 'labels record images')
SelfTrainingResult = namedtuple('SelfTrainingResult', 'model records')


@dataclass(eq=False)
class RoundRecord:
    index: int
    thresholds: Optional[ClassThresholds] = None
    order: str = ''
    stages: 'OrderedDict[str, PseudoLabelStats]' = field(default_factory=OrderedDict)
    losses: List[LossReport] = field(default_factory=list)
    prediction_miou: Optional[float] = None
    eval_miou: Optional[float] = None

    def add_stage(self, name, stats):
        if name not in STAGE_NAMES:
            raise ValueError(f'Unknown stage "{name}"')
        self.stages[name] = stats

    def get_rows(self):
        rows = []
        final = self.losses[-1].l_final if self.losses else np.nan
        stages = self.stages.items() if self.stages else [('', None)]
        for stage, stats in stages:
            rows.append({
                'round': self.index,
                'order': self.order,
                'stage': stage,
                'labeled_fraction': np.nan if stats is None else stats.labeled_fraction,
                'pseudo_miou': np.nan if stats is None else stats.pseudo_miou,
                'prediction_miou': _nan(self.prediction_miou),
                'eval_miou': _nan(self.eval_miou),
                'epochs': len(self.losses),
                'l_final': final,
            })
        return rows


def _nan(value):
    return np.nan if value is None else value


@dataclass(eq=False)
class ImageLabels:
    """Diffused labels of one target image and what training needs from it."""
    entry: io.ManifestEntry
    labels: LabelMap
    superpixels: Optional[object] = None
    hit: Optional[np.ndarray] = None
    sources: Optional[np.ndarray] = None


def get_records_table(records):
    rows = []
    for record in records:
        rows.extend(record.get_rows())
    return pd.DataFrame(rows)


def write_records(records, path):
    get_records_table(records).to_csv(path, index=False, float_format='%.10g')


def get_diffusion_steps(order, manifest):
    """Stages to run for an order, degrading to spatial-only without flow."""
    steps = {
        'td-sd': ['td', 'sd'],
        'sd-td': ['sd', 'td'],
        'sd': ['sd'],
        'td': ['td'],
        'none': [],
    }[order]
    if 'td' in steps and not manifest.has_flow:
        if order == 'td':
            message = f'Order "{order}" needs optical flow but {manifest.path} has no flow entries'
            raise ConfigurationError(message)
        warnings.warn(f'{manifest.path} has no flow entries; using spatial diffusion only')
        steps = ['sd']
    return steps


class SuperpixelCache:
    """Superpixels depend only on the image, so they are computed once per path."""

    def __init__(self, params):
        self.params = params
        self._superpixels = {}

    def __call__(self, path, image=None):
        key = str(path)
        if key not in self._superpixels:
            if image is None:
                image = io.read_rgb_png(path)
            self._superpixels[key] = slic_segment(image, self.params)
        return self._superpixels[key]

    def __len__(self):
        return len(self._superpixels)


def get_superpixel_cache(cfg):
    params = SlicParams(cfg.k, mc=cfg.mc, iters=cfg.slic_iters, seed=cfg.seed)
    return SuperpixelCache(params)


def _read_ground_truth(entry, num_classes, shape):
    if entry.gt_label_path is None:
        return LabelMap(np.zeros(shape, np.uint8), num_classes)
    return io.read_label_png(entry.gt_label_path, num_classes)


def predict_manifest(model, manifest, verbose=False):
    """
    Predict every target image (and reference image) with the toy model and
    overwrite the probability files listed in the manifest.
    """
    probs = {}
    jobs = []
    for entry in manifest.entries:
        jobs.append((entry.target_image_path, entry.target_prob_path))
        if entry.has_reference and entry.reference_image_path is not None:
            jobs.append((entry.reference_image_path, entry.reference_prob_path))
    progress = tqdm(jobs, desc='Predicting', leave=False, disable=not verbose)
    for image_path, prob_path in progress:
        key = str(prob_path)
        if key in probs:
            continue
        probs[key] = predict(model, io.read_rgb_png(image_path))
        io.write_prob(probs[key], prob_path)
    return probs


def read_manifest_probs(manifest, cfg):
    probs = {}
    for entry in manifest.entries:
        paths = [entry.target_prob_path]
        if entry.has_reference:
            paths.append(entry.reference_prob_path)
        for path in paths:
            key = str(path)
            if key not in probs:
                probs[key] = io.read_prob(path, **cfg.prob_options)
    return probs


def diffuse_image(
        entry,
        probs,
        thresholds,
        steps,
        cfg,
        superpixel_cache,
        num_classes,
        need_superpixels=False,
        ):
    """Run selection and diffusion on one manifest entry."""
    target_probs = probs[str(entry.target_prob_path)]
    initial, prediction = select_pseudo_labels(target_probs, thresholds)
    gt = _read_ground_truth(entry, num_classes, initial.shape)
    stages = OrderedDict()
    stages['prediction'] = pseudo_stats(prediction, gt)
    stages['init'] = pseudo_stats(initial, gt)

    superpixels = None
    if 'sd' in steps or need_superpixels:
        superpixels = superpixel_cache(entry.target_image_path)

    warped = None
    reference = None
    if entry.has_reference:
        reference_probs = probs[str(entry.reference_prob_path)]
        reference_labels, reference_prediction = select_pseudo_labels(
            reference_probs, thresholds)
        reference = reference_labels, reference_prediction, reference_probs

    labels = initial
    current_prediction = prediction
    done = []
    for step in steps:
        if step == 'sd':
            labels = spatial_diffuse(current_prediction, labels, superpixels)
        elif reference is not None:
            reference_labels, reference_prediction, reference_probs = reference
            if 'sd' in done and entry.reference_image_path is not None:
                reference_superpixels = superpixel_cache(entry.reference_image_path)
                reference_labels = spatial_diffuse(
                    reference_prediction,
                    reference_labels,
                    reference_superpixels,
                )
            warped = get_warped_reference(entry, reference_labels, reference_probs, cfg)
            fusion = temporal_fuse(labels, target_probs, warped)
            labels = fusion.labels
            current_prediction = get_fused_prediction(current_prediction, fusion)
        stages[step] = pseudo_stats(labels, gt)
        done.append(step)

    if warped is None and reference is not None:
        reference_labels, _, reference_probs = reference
        warped = get_warped_reference(entry, reference_labels, reference_probs, cfg)
    hit = None if warped is None else warped.hit
    sources = None if warped is None else warped.sources
    image_labels = ImageLabels(entry, labels, superpixels, hit, sources)
    return image_labels, stages


def get_warped_reference(entry, reference_labels, reference_probs, cfg):
    flow = io.read_flo(entry.flow_path)
    confidence = io.read_conf(entry.flow_conf_path)
    mask = flow_mask(confidence, cfg.t)
    return warp_reference(
        reference_labels,
        reference_probs,
        flow,
        mask,
        confidence=confidence,
    )


def generate_round_labels(
        manifest,
        cfg,
        model=None,
        out_dir=None,
        round_index=1,
        superpixel_cache=None,
        need_superpixels=False,
        verbose=False,
        ):
    """
    Produce the diffused pseudo labels of every target image for one round.

    With a toy model, its predictions are written to the probability files
    first; otherwise the probability files are read as they are.
    """
    steps = get_diffusion_steps(cfg.order, manifest)
    if superpixel_cache is None:
        superpixel_cache = get_superpixel_cache(cfg)
    num_classes = manifest.num_classes

    with timer('Prediction', verbose):
        if model is not None:
            probs = predict_manifest(model, manifest, verbose=verbose)
            probs.update({
                key: value
                for key, value in read_manifest_probs(manifest, cfg).items()
                if key not in probs
            })
        else:
            probs = read_manifest_probs(manifest, cfg)

    with timer('Thresholds', verbose):
        target_probs = [probs[str(e.target_prob_path)] for e in manifest.entries]
        thresholds = compute_thresholds(
            target_probs,
            cfg.p,
            bins=cfg.bins,
            exact_limit=cfg.exact_limit,
        )

    def process(entry):
        return diffuse_image(
            entry,
            probs,
            thresholds,
            steps,
            cfg,
            superpixel_cache,
            num_classes,
            need_superpixels=need_superpixels,
        )

    with timer('Diffusion', verbose):
        entries = manifest.entries
        if cfg.jobs > 1:
            with ThreadPoolExecutor(max_workers=cfg.jobs) as executor:
                results = list(executor.map(process, entries))
        else:
            progress = tqdm(entries, desc='Diffusing', leave=False, disable=not verbose)
            results = [process(entry) for entry in progress]

    record = RoundRecord(round_index, thresholds, cfg.order)
    for stage in STAGE_NAMES:
        per_image = [stages[stage] for _, stages in results if stage in stages]
        if stage in ('prediction', 'init') or stage in steps:
            record.add_stage(stage, sum(per_image[1:], per_image[0]))
    if manifest.has_ground_truth:
        record.prediction_miou = record.stages['prediction'].pseudo_miou

    images = [image_labels for image_labels, _ in results]
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for image_labels in images:
            path = out_dir / f'{image_labels.entry.stem}.png'
            io.write_label_png(image_labels.labels, path, palette=manifest.palette)
        io.write_thresholds(thresholds, out_dir / 'thresholds.txt')
    labels = OrderedDict((i.entry.stem, i.labels) for i in images)
    return RoundLabels(labels, record, images)


def evaluate_model(model, manifest):
    """Dataset-level confusion matrix of the model predictions."""
    matrix = ConfusionMatrix.empty(manifest.num_classes)
    for entry in manifest.entries:
        if entry.gt_label_path is None:
            continue
        prediction = predict(model, io.read_rgb_png(entry.target_image_path)).argmax()
        gt = io.read_label_png(entry.gt_label_path, manifest.num_classes)
        matrix = matrix + confusion(gt, prediction, num_classes=manifest.num_classes)
    return matrix


def _get_miou(model, manifest):
    if not manifest.has_ground_truth:
        return None
    return miou(evaluate_model(model, manifest))[1]


def get_source_images(manifest):
    images = []
    for entry in manifest.entries:
        if entry.gt_label_path is None:
            message = f'Source image {entry.target_image_path} has no ground-truth labels'
            raise ConfigurationError(message)
        images.append(TrainingImage(
            io.read_rgb_png(entry.target_image_path),
            io.read_label_png(entry.gt_label_path, manifest.num_classes),
            domain='source',
            name=entry.stem,
        ))
    return images


def get_target_images(round_labels):
    images = []
    for image_labels in round_labels.images:
        entry = image_labels.entry
        reference_image = None
        if image_labels.hit is not None and entry.reference_image_path is not None:
            reference_image = io.read_rgb_png(entry.reference_image_path)
        images.append(TrainingImage(
            io.read_rgb_png(entry.target_image_path),
            image_labels.labels,
            domain='target',
            superpixels=image_labels.superpixels,
            reference_image=reference_image,
            hit=image_labels.hit,
            sources=image_labels.sources,
            name=entry.stem,
        ))
    return images


def train_epochs(model, optimizer, images, cfg, generator, num_epochs, description, verbose):
    reports = []
    epochs = tqdm(range(num_epochs), desc=description, leave=False, disable=not verbose)
    for _ in epochs:
        model, optimizer, report = train_epoch(model, optimizer, images, cfg, generator)
        reports.append(report)
    return model, optimizer, reports


def self_train(
        source_manifest,
        target_manifest,
        cfg,
        out_dir,
        model=None,
        round_index=None,
        verbose=False,
        ):
    """
    Alternate pseudo-label generation and re-training for ``cfg.rounds``
    rounds. The model keeps its weights from one round to the next.

    Round 0 in the returned records is the model trained on the source
    split only. With an external model, a single round ``round_index`` only
    writes pseudo labels from the probability files on disk.
    """
    cfg.validate()
    if cfg.rounds < 1:
        raise ConfigurationError(f'At least one self-training round is needed, got {cfg.rounds}')
    if source_manifest is not None and target_manifest.num_classes != source_manifest.num_classes:
        message = (
            f'Source has {source_manifest.num_classes} classes'
            f' but target has {target_manifest.num_classes}'
        )
        raise ConfigurationError(message)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if cfg.model == 'external':
        if round_index is None:
            raise ConfigurationError('External models need the round to run (--round N)')
        if not 1 <= round_index <= cfg.rounds:
            raise ConfigurationError(f'Round must be in [1, {cfg.rounds}], got {round_index}')
        round_labels = generate_round_labels(
            target_manifest,
            cfg,
            out_dir=out_dir / f'round_{round_index}',
            round_index=round_index,
            verbose=verbose,
        )
        return SelfTrainingResult(None, [round_labels.record])

    if source_manifest is None:
        raise ConfigurationError('Training the toy model needs a source manifest')
    generator = torch.Generator().manual_seed(cfg.seed)
    num_classes = target_manifest.num_classes
    if model is None:
        model = ToyModel.initialize(num_classes, hidden=cfg.hidden, seed=cfg.seed)
    optimizer = OptimizerState.for_model(
        model,
        learning_rate=cfg.learning_rate,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
    )
    source_images = get_source_images(source_manifest)
    superpixel_cache = get_superpixel_cache(cfg)

    records = []
    with timer('Source training', verbose):
        model, optimizer, reports = train_epochs(
            model,
            optimizer,
            source_images,
            cfg,
            generator,
            cfg.pretrain_epochs,
            'Source epochs',
            verbose,
        )
    record = RoundRecord(0, order='source', losses=reports)
    record.eval_miou = _get_miou(model, target_manifest)
    records.append(record)
    io.write_model(model, out_dir / 'model_round_0.toy')

    rounds = tqdm(range(1, cfg.rounds + 1), desc='Rounds', leave=False, disable=not verbose)
    for index in rounds:
        round_labels = generate_round_labels(
            target_manifest,
            cfg,
            model=model,
            out_dir=out_dir / f'round_{index}',
            round_index=index,
            superpixel_cache=superpixel_cache,
            need_superpixels=cfg.alpha_spa > 0,
            verbose=verbose,
        )
        images = source_images + get_target_images(round_labels)
        with timer(f'Round {index} training', verbose):
            model, optimizer, reports = train_epochs(
                model,
                optimizer,
                images,
                cfg,
                generator,
                cfg.epochs,
                f'Round {index} epochs',
                verbose,
            )
        record = round_labels.record
        record.losses = reports
        record.eval_miou = _get_miou(model, target_manifest)
        records.append(record)
        io.write_model(model, out_dir / f'model_round_{index}.toy')

    io.write_model(model, out_dir / 'model.toy')
    write_records(records, out_dir / 'records.csv')
    return SelfTrainingResult(model, records)


def visualize(labels, palette, image=None):
    """
    Color a label map with a palette, blended at 50% over ``image`` when
    given. Unlabeled pixels show the image, or black without one.
    """
    palette = np.asarray(palette, dtype=np.float64)
    if len(palette) < labels.num_classes + 1:
        message = (
            f'Palette has {len(palette)} colors,'
            f' at least {labels.num_classes + 1} are needed'
        )
        raise ValueError(message)
    array = labels.array.astype(np.int64)
    colors = palette[array]
    unlabeled = (array == 0)[..., np.newaxis]
    if image is None:
        result = np.where(unlabeled, 0, colors)
    else:
        image = np.asarray(image, dtype=np.float64)
        if image.shape[:2] != labels.shape:
            raise ValueError(f'Image shape {image.shape[:2]} != label shape {labels.shape}')
        blended = np.floor(0.5 * image + 0.5 * colors + 0.5)
        result = np.where(unlabeled, image, blended)
    return np.clip(result, 0, 255).astype(np.uint8)

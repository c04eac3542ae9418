# -*- coding: utf-8 -*-

"""Top-level package for tdodif."""

__version__ = '0.1.0'

from .timer import timer
from .errors import TdodifError, ConfigurationError, FormatError
from .config import PipelineConfig, read_config, write_config
from .core import LabelMap, ProbMap, FlowField, ConfidenceMap, FeatureMap
from .slic import SlicParams, SuperpixelMap, slic_segment, downsample_superpixels
from .pseudo import ClassThresholds, compute_thresholds, select_pseudo_labels
from .spatial import spatial_diffuse
from .temporal import flow_mask, warp_reference, temporal_fuse
from .losses import seg_loss, spatial_loss, temporal_loss, sample_correspondences, combine
from .toymodel import ToyModel, forward, predict, train_epoch
from .synth import SceneSpec, render_frame, apply_fog, exact_flow, emit_dataset
from .evaluation import confusion, miou, pseudo_stats
from .pipeline import generate_round_labels, self_train, visualize
from . import io

__all__ = [
    'io',
    'timer',
    'TdodifError',
    'ConfigurationError',
    'FormatError',
    'PipelineConfig',
    'read_config',
    'write_config',
    'LabelMap',
    'ProbMap',
    'FlowField',
    'ConfidenceMap',
    'FeatureMap',
    'SlicParams',
    'SuperpixelMap',
    'slic_segment',
    'downsample_superpixels',
    'ClassThresholds',
    'compute_thresholds',
    'select_pseudo_labels',
    'spatial_diffuse',
    'flow_mask',
    'warp_reference',
    'temporal_fuse',
    'seg_loss',
    'spatial_loss',
    'temporal_loss',
    'sample_correspondences',
    'combine',
    'ToyModel',
    'forward',
    'predict',
    'train_epoch',
    'SceneSpec',
    'render_frame',
    'apply_fog',
    'exact_flow',
    'emit_dataset',
    'confusion',
    'miou',
    'pseudo_stats',
    'generate_round_labels',
    'self_train',
    'visualize',
]

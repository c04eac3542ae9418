"""
Procedural driving scenes: clear labelled source frames and foggy target
sequences with exact ground truth and exact optical flow.

The camera zooms about the image center, so every frame is a scaled copy
of the frame-0 layout and the flow between two frames is known in closed
form. Later frames are nearer to the scene and therefore less fogged.
"""

from collections import namedtuple
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import torch
from skimage import measure
from tqdm import tqdm

from . import io
from .core import LabelMap, ProbMap, FlowField, ConfidenceMap
from .config import PipelineConfig, parse_key_values, write_config
from .errors import ConfigurationError


CLASS_NAMES = 'sky', 'building', 'road', 'vegetation', 'sign'
PALETTE = (
    (0, 0, 0),
    (70, 130, 180),
    (70, 70, 70),
    (128, 64, 128),
    (107, 142, 35),
    (220, 220, 0),
)
BASE_COLORS = {
    1: (140, 180, 230),
    2: (150, 110, 90),
    3: (85, 85, 95),
    4: (50, 120, 45),
    5: (230, 200, 30),
}
DEPTHS = {
    1: 1000.0,
    2: 80.0,
    3: 30.0,
    4: 50.0,
    5: 20.0,
}
FOG_BETAS = 0.005, 0.01, 0.02

SyntheticDataset = namedtuple('SyntheticDataset', 'source target config_path')


@dataclass(frozen=True)
class SceneRegion:
    class_id: int
    color: Tuple[int, int, int]
    depth: float
    polygon: Tuple[Tuple[float, float], ...]  # (x, y) vertices at frame 0


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    width: int = 256
    height: int = 192
    frames: int = 12
    zoom: float = 1.04
    beta: float = 0.01
    airlight: Tuple[float, float, float] = (255.0, 255.0, 255.0)
    jitter: float = 4.0
    delta: int = 1
    regions: Optional[Tuple[SceneRegion, ...]] = None

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ConfigurationError(f'Scenes must be at least 2x2, got {self.width}x{self.height}')
        if self.frames < 1:
            raise ConfigurationError(f'At least one frame is needed, got {self.frames}')
        if self.zoom < 1:
            raise ConfigurationError(f'Zoom per frame must be at least 1, got {self.zoom}')
        if self.beta < 0:
            raise ConfigurationError(f'Attenuation must be non-negative, got {self.beta}')
        if self.jitter < 0:
            raise ConfigurationError(f'Color jitter must be non-negative, got {self.jitter}')
        if self.delta < 1:
            raise ConfigurationError(f'Frame gap must be positive, got {self.delta}')
        if len(self.airlight) != 3:
            raise ConfigurationError(f'Atmospheric light needs 3 components, got {self.airlight}')
        if self.regions is not None:
            for region in self.regions:
                if region.depth <= 0:
                    raise ConfigurationError(f'Region depths must be positive, got {region.depth}')

    @property
    def num_classes(self):
        return len(CLASS_NAMES)

    @property
    def center(self):
        return (self.width - 1) / 2, (self.height - 1) / 2

    def get_regions(self):
        if self.regions is not None:
            return self.regions
        return get_layout(self.seed, self.width, self.height)

    def get_source_regions(self):
        return get_layout(self.seed + 1, self.width, self.height)


def _uniform(generator, low, high):
    tensor = torch.empty(1, dtype=torch.float64)
    return tensor.uniform_(low, high, generator=generator).item()


def _rectangle(x0, y0, x1, y1):
    return (x0, y0), (x1, y0), (x1, y1), (x0, y1)


def _region(class_id, polygon):
    return SceneRegion(class_id, BASE_COLORS[class_id], DEPTHS[class_id], polygon)


@lru_cache(maxsize=32)
def get_layout(seed, width, height):
    """Random street layout covering the whole frame."""
    generator = torch.Generator().manual_seed(int(seed))
    horizon = height * _uniform(generator, 0.42, 0.52)
    left_edge = width * _uniform(generator, 0.18, 0.3)
    right_edge = width * (1 - _uniform(generator, 0.18, 0.3))
    left_top = height * _uniform(generator, 0.05, 0.2)
    right_top = height * _uniform(generator, 0.05, 0.2)
    hedge_top = horizon - height * _uniform(generator, 0.08, 0.12)
    hedge_right = width * _uniform(generator, 0.45, 0.55)
    sign_x = width * _uniform(generator, 0.68, 0.78)
    sign_y = height * _uniform(generator, 0.25, 0.35)
    sign_width = width * 0.06
    sign_height = height * 0.09
    return (
        _region(1, _rectangle(-1, -1, width, horizon)),
        _region(3, _rectangle(-1, horizon, width, height)),
        _region(2, _rectangle(-1, left_top, left_edge, horizon + height * 0.02)),
        _region(2, _rectangle(right_edge, right_top, width, horizon + height * 0.02)),
        _region(4, _rectangle(left_edge - 1, hedge_top, hedge_right, horizon + height * 0.04)),
        _region(5, _rectangle(sign_x, sign_y, sign_x + sign_width, sign_y + sign_height)),
    )


def get_frame_scale(spec, frame_index):
    return spec.zoom ** frame_index


def render_frame(spec, frame_index, regions=None, noise_seed=None):
    """
    Render the clear image, the ground truth and the depth of one frame.

    Pixels are mapped back to frame-0 coordinates and painted with the
    nearest region containing them.
    """
    if not 0 <= frame_index < spec.frames:
        raise ValueError(f'Frame index must be in [0, {spec.frames - 1}], got {frame_index}')
    regions = spec.get_regions() if regions is None else regions
    if noise_seed is None:
        noise_seed = spec.seed * 1000 + frame_index
    scale = get_frame_scale(spec, frame_index)
    cx, cy = spec.center
    rows, cols = np.indices((spec.height, spec.width), dtype=np.float64)
    x0 = cx + (cols - cx) / scale
    y0 = cy + (rows - cy) / scale
    points = np.stack((x0.ravel(), y0.ravel()), axis=1)

    num_pixels = spec.height * spec.width
    labels = np.zeros(num_pixels, dtype=np.uint8)
    colors = np.zeros((num_pixels, 3))
    depth = np.full(num_pixels, max(r.depth for r in regions))
    for region in sorted(regions, key=lambda r: -r.depth):
        inside = measure.points_in_poly(points, np.array(region.polygon))
        labels[inside] = region.class_id
        colors[inside] = region.color
        depth[inside] = region.depth

    generator = torch.Generator().manual_seed(int(noise_seed))
    noise = torch.randn((num_pixels, 3), generator=generator, dtype=torch.float64).numpy()
    colors = colors + spec.jitter * noise
    clear = np.clip(np.floor(colors + 0.5), 0, 255).astype(np.uint8)
    shape = spec.height, spec.width
    label_map = LabelMap(labels.reshape(shape), spec.num_classes)
    depth = depth.reshape(shape) / scale
    return clear.reshape(*shape, 3), label_map, depth


def apply_fog(clear, depth, beta, airlight=(255, 255, 255)):
    """Homogeneous fog: I = J t + A (1 - t), with t = exp(-beta depth)."""
    if beta < 0:
        raise ValueError(f'Attenuation must be non-negative, got {beta}')
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise ValueError('Depths must be positive')
    clear = np.asarray(clear, dtype=np.float64)
    transmittance = np.exp(-beta * depth)[..., np.newaxis]
    airlight = np.asarray(airlight, dtype=np.float64)
    foggy = clear * transmittance + airlight * (1 - transmittance)
    return np.clip(np.floor(foggy + 0.5), 0, 255).astype(np.uint8)


def exact_flow(spec, reference_index, target_index):
    """
    Displacement from reference pixels to their target positions, with
    confidence 1 where the rounded target position lies inside the frame.
    """
    for index in reference_index, target_index:
        if not 0 <= index < spec.frames:
            raise ValueError(f'Frame index must be in [0, {spec.frames - 1}], got {index}')
    relative_scale = spec.zoom ** (reference_index - target_index)
    cx, cy = spec.center
    rows, cols = np.indices((spec.height, spec.width), dtype=np.float64)
    u = cx + (cols - cx) / relative_scale - cols
    v = cy + (rows - cy) / relative_scale - rows
    target_x = np.floor(cols + u + 0.5)
    target_y = np.floor(rows + v + 0.5)
    inside = (
        (target_x >= 0) & (target_x < spec.width)
        & (target_y >= 0) & (target_y < spec.height)
    )
    flow = FlowField(u.astype(np.float32), v.astype(np.float32))
    return flow, ConfidenceMap(inside.astype(np.float32))


def get_uniform_probs(spec):
    shape = spec.num_classes, spec.height, spec.width
    return ProbMap(np.full(shape, 1 / spec.num_classes, dtype=np.float32))


def _frame_name(index):
    return f'frame_{index:03d}'


def emit_source(spec, out_dir, verbose=False):
    """Write the clear, fully labelled source split and return its manifest."""
    out_dir = Path(out_dir)
    for name in 'images', 'labels', 'probs':
        (out_dir / name).mkdir(parents=True, exist_ok=True)
    regions = spec.get_source_regions()
    uniform = get_uniform_probs(spec)
    entries = []
    frames = tqdm(range(spec.frames), desc='Source frames', leave=False, disable=not verbose)
    for index in frames:
        noise_seed = (spec.seed + 1) * 1000 + index
        clear, labels, _ = render_frame(spec, index, regions=regions, noise_seed=noise_seed)
        name = _frame_name(index)
        image_path = out_dir / 'images' / f'{name}.png'
        label_path = out_dir / 'labels' / f'{name}.png'
        prob_path = out_dir / 'probs' / f'{name}.prb'
        io.write_rgb_png(clear, image_path)
        io.write_label_png(labels, label_path, palette=PALETTE)
        io.write_prob(uniform, prob_path)
        entries.append(io.ManifestEntry(image_path, prob_path, gt_label_path=label_path))
    return io.Manifest(entries, spec.num_classes, list(CLASS_NAMES), list(PALETTE))


def emit_target(spec, out_dir, beta=None, verbose=False):
    """
    Write the foggy target sequence with ground truth, flows and
    confidences, pairing each frame with the frame ``delta`` steps later.
    """
    beta = spec.beta if beta is None else beta
    out_dir = Path(out_dir)
    for name in 'images', 'gt', 'probs', 'flow', 'conf':
        (out_dir / name).mkdir(parents=True, exist_ok=True)
    uniform = get_uniform_probs(spec)

    def path(kind, index, suffix):
        return out_dir / kind / f'{_frame_name(index)}.{suffix}'

    frames = tqdm(range(spec.frames), desc='Target frames', leave=False, disable=not verbose)
    for index in frames:
        clear, labels, depth = render_frame(spec, index)
        foggy = apply_fog(clear, depth, beta, spec.airlight)
        io.write_rgb_png(foggy, path('images', index, 'png'))
        io.write_label_png(labels, path('gt', index, 'png'), palette=PALETTE)
        io.write_prob(uniform, path('probs', index, 'prb'))

    entries = []
    for index in range(spec.frames):
        reference = index + spec.delta
        if reference < spec.frames:
            flow, confidence = exact_flow(spec, reference, index)
            io.write_flo(flow, path('flow', index, 'flo'))
            io.write_conf(confidence, path('conf', index, 'cnf'))
            entry = io.ManifestEntry(
                path('images', index, 'png'),
                path('probs', index, 'prb'),
                path('probs', reference, 'prb'),
                path('flow', index, 'flo'),
                path('conf', index, 'cnf'),
                path('gt', index, 'png'),
                path('images', reference, 'png'),
            )
        else:
            entry = io.ManifestEntry(
                path('images', index, 'png'),
                path('probs', index, 'prb'),
                gt_label_path=path('gt', index, 'png'),
            )
        entries.append(entry)
    return io.Manifest(entries, spec.num_classes, list(CLASS_NAMES), list(PALETTE))


def emit_dataset(spec, out_dir, verbose=False):
    """
    Write the source split, the foggy target sequence, their manifests
    (``source.txt`` and ``target.txt``) and a ``pipeline.cfg`` tuned for
    the toy model.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    source = emit_source(spec, out_dir / 'source', verbose=verbose)
    target = emit_target(spec, out_dir / 'target', verbose=verbose)
    source = _save_manifest(source, out_dir / 'source.txt')
    target = _save_manifest(target, out_dir / 'target.txt')
    config_path = out_dir / 'pipeline.cfg'
    write_config(PipelineConfig.desk_scale(seed=spec.seed, delta=spec.delta), config_path)
    return SyntheticDataset(source, target, config_path)


def emit_fog_sweep(spec, out_dir, betas=FOG_BETAS, verbose=False):
    """
    Render the same target sequence at several fog densities, sharing one
    source split. Returns a dictionary of datasets keyed by attenuation.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    source = emit_source(spec, out_dir / 'source', verbose=verbose)
    source = _save_manifest(source, out_dir / 'source.txt')
    config_path = out_dir / 'pipeline.cfg'
    write_config(PipelineConfig.desk_scale(seed=spec.seed, delta=spec.delta), config_path)
    datasets = {}
    for beta in betas:
        name = f'target_beta{beta:g}'
        target = emit_target(spec, out_dir / name, beta=beta, verbose=verbose)
        target = _save_manifest(target, out_dir / f'{name}.txt')
        datasets[beta] = SyntheticDataset(source, target, config_path)
    return datasets


def _save_manifest(manifest, path):
    io.write_manifest(manifest, path)
    return replace(manifest, path=Path(path))


SCENE_KEYS = {
    'seed': int,
    'width': int,
    'height': int,
    'frames': int,
    'delta': int,
    'zoom': float,
    'beta': float,
    'jitter': float,
}


def scene_spec_from_pairs(pairs, base=None):
    base = SceneSpec() if base is None else base
    values = {}
    for key, value in pairs:
        if key != 'airlight' and key not in SCENE_KEYS:
            raise ConfigurationError(f'Unknown scene key "{key}"')
        try:
            if key == 'airlight':
                components = [float(v) for v in value.replace(',', ' ').split()]
                if len(components) == 1:
                    components *= 3
                values[key] = tuple(components)
            else:
                values[key] = SCENE_KEYS[key](value)
        except ValueError:
            message = f'Value "{value}" for scene key "{key}" is not valid'
            raise ConfigurationError(message) from None
    return replace(base, **values)


def read_scene_spec(path):
    path = Path(path)
    pairs = parse_key_values(io.read_text(path), source=str(path))
    return scene_spec_from_pairs(pairs)

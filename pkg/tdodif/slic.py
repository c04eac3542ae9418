"""
SLIC superpixels: localized k-means in joint CIELAB + image-plane space.
"""

import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
import torch

from .errors import ConfigurationError
from .image import (
    rgb_to_lab,
    get_gradient_magnitude,
    get_connected_components,
    get_adjacent_pairs,
    get_block_indices,
)


@dataclass(frozen=True)
class SlicParams:
    k: int
    mc: float = 10.0
    iters: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError(f'K must be at least 1, got {self.k}')
        if self.mc <= 0:
            raise ConfigurationError(f'M_c must be positive, got {self.mc}')
        if self.iters < 1:
            raise ConfigurationError(f'SLIC needs at least one iteration, got {self.iters}')


@dataclass(eq=False)
class SuperpixelMap:
    assignment: np.ndarray
    members: List[np.ndarray]
    centers: np.ndarray
    energies: Tuple[float, ...] = ()

    @property
    def num_superpixels(self):
        return len(self.members)

    @property
    def shape(self):
        return self.assignment.shape

    @property
    def height(self):
        return self.assignment.shape[0]

    @property
    def width(self):
        return self.assignment.shape[1]

    def coordinates(self, index):
        """Rows and columns of the pixels in superpixel ``index``."""
        return np.unravel_index(self.members[index], self.shape)

    def sizes(self):
        return np.array([len(m) for m in self.members])

    @classmethod
    def from_assignment(
            cls,
            assignment,
            lab=None,
            colors=None,
            num_superpixels=None,
            energies=(),
            ):
        assignment = np.array(assignment, dtype=np.int64)
        if assignment.ndim != 2:
            raise ValueError(f'Assignment must be 2-D, got {assignment.shape}')
        if num_superpixels is None:
            num_superpixels = int(assignment.max()) + 1
        if assignment.min() < 0 or assignment.max() >= num_superpixels:
            message = (
                f'Superpixel IDs must be in [0, {num_superpixels - 1}],'
                f' found [{assignment.min()}, {assignment.max()}]'
            )
            raise ValueError(message)
        flat = assignment.ravel()
        counts = np.bincount(flat, minlength=num_superpixels)
        order = np.argsort(flat, kind='stable')
        members = np.split(order, np.cumsum(counts)[:-1])
        centers = get_centers(assignment, num_superpixels, lab=lab, colors=colors)
        assignment.setflags(write=False)
        return cls(assignment, members, centers, tuple(energies))


def get_centers(assignment, num_superpixels, lab=None, colors=None):
    """(L, a, b, x, y) centroid of each superpixel."""
    flat = assignment.ravel()
    counts = np.bincount(flat, minlength=num_superpixels).astype(np.float64)
    safe_counts = np.maximum(counts, 1)
    rows, cols = np.indices(assignment.shape)
    centers = np.zeros((num_superpixels, 5))
    if lab is not None:
        for channel in range(3):
            weights = lab[..., channel].ravel()
            sums = np.bincount(flat, weights=weights, minlength=num_superpixels)
            centers[:, channel] = sums / safe_counts
    elif colors is not None:
        centers[:, :3] = colors
    for column, coords in ((3, cols), (4, rows)):
        sums = np.bincount(flat, weights=coords.ravel(), minlength=num_superpixels)
        centers[:, column] = sums / safe_counts
    return centers


def slic_distance(pixel, center, mc, ms):
    """Normalized squared distance between two (L, a, b, x, y) points."""
    pixel = np.asarray(pixel, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    color_distance = np.sum((pixel[:3] - center[:3]) ** 2)
    spatial_distance = np.sum((pixel[3:] - center[3:]) ** 2)
    return float(color_distance / mc ** 2 + spatial_distance / ms ** 2)


def get_grid_seeds(lab, k, generator=None):
    """
    Centers on a regular grid, each moved to the smoothest pixel of its 3x3
    neighborhood. Equally smooth candidates are drawn with ``generator``.
    """
    height, width = lab.shape[:2]
    num_columns = min(width, max(1, round(math.sqrt(k * width / height))))
    num_rows = min(height, max(1, round(k / num_columns)))
    step_x = width / num_columns
    step_y = height / num_rows
    xs = (np.arange(num_columns) + 0.5) * step_x - 0.5
    ys = (np.arange(num_rows) + 0.5) * step_y - 0.5

    gradient = get_gradient_magnitude(lab)
    centers = []
    for y in ys:
        for x in xs:
            row = min(int(math.floor(y + 0.5)), height - 1)
            col = min(int(math.floor(x + 0.5)), width - 1)
            r0, r1 = max(row - 1, 0), min(row + 2, height)
            c0, c1 = max(col - 1, 0), min(col + 2, width)
            window = gradient[r0:r1, c0:c1]
            # Only move off the grid if a strictly smoother pixel exists
            if window.min() < gradient[row, col]:
                candidates = np.flatnonzero(window == window.min())
                if len(candidates) > 1 and generator is not None:
                    draw = torch.randint(len(candidates), (1,), generator=generator).item()
                    best = candidates[draw]
                else:
                    best = candidates[0]
                i, j = np.unravel_index(best, window.shape)
                row, col = r0 + i, c0 + j
                y, x = float(row), float(col)
            L, a, b = lab[row, col]
            centers.append((L, a, b, x, y))
    centers = np.array(centers, dtype=np.float64)

    cell_rows = np.minimum((np.arange(height) / step_y).astype(int), num_rows - 1)
    cell_cols = np.minimum((np.arange(width) / step_x).astype(int), num_columns - 1)
    labels = cell_rows[:, np.newaxis] * num_columns + cell_cols[np.newaxis, :]
    return centers, labels


def get_distances_to_centers(lab, labels, centers, mc, ms):
    rows, cols = np.indices(labels.shape)
    assigned = centers[labels]
    color_distance = ((lab - assigned[..., :3]) ** 2).sum(axis=-1)
    spatial_distance = (cols - assigned[..., 3]) ** 2 + (rows - assigned[..., 4]) ** 2
    return color_distance / mc ** 2 + spatial_distance / ms ** 2


def update_centers(lab, labels, centers):
    num_centers = len(centers)
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=num_centers)
    nonempty = counts > 0
    updated = get_centers(labels, num_centers, lab=lab)
    new_centers = centers.copy()
    new_centers[nonempty] = updated[nonempty]
    return new_centers


def slic_kmeans(lab, params):
    """
    Run the k-means stage of SLIC, before connectivity enforcement.

    Returns the labels, the cluster centers and the total distance after
    initialization and after each iteration.
    """
    height, width = lab.shape[:2]
    num_pixels = height * width
    if height < 2 or width < 2:
        raise ConfigurationError(f'SLIC needs an image of at least 2x2, got {width}x{height}')
    if params.k > num_pixels:
        raise ConfigurationError(f'K = {params.k} exceeds the number of pixels ({num_pixels})')
    ms = math.sqrt(num_pixels / params.k)
    mc = params.mc
    radius = int(math.ceil(ms))

    generator = torch.Generator().manual_seed(params.seed)
    centers, labels = get_grid_seeds(lab, params.k, generator)
    distances = get_distances_to_centers(lab, labels, centers, mc, ms)
    energies = [float(distances.sum())]
    for _ in range(params.iters):
        for index, (L, a, b, x, y) in enumerate(centers):
            r0 = max(int(math.floor(y)) - radius, 0)
            r1 = min(int(math.ceil(y)) + radius + 1, height)
            c0 = max(int(math.floor(x)) - radius, 0)
            c1 = min(int(math.ceil(x)) + radius + 1, width)
            window = lab[r0:r1, c0:c1]
            rows, cols = np.ogrid[r0:r1, c0:c1]
            color_distance = (
                (window[..., 0] - L) ** 2
                + (window[..., 1] - a) ** 2
                + (window[..., 2] - b) ** 2
            )
            spatial_distance = (rows - y) ** 2 + (cols - x) ** 2
            window_distances = color_distance / mc ** 2 + spatial_distance / ms ** 2
            best = distances[r0:r1, c0:c1]
            best_labels = labels[r0:r1, c0:c1]
            closer = window_distances < best
            best[closer] = window_distances[closer]
            best_labels[closer] = index
        centers = update_centers(lab, labels, centers)
        distances = get_distances_to_centers(lab, labels, centers, mc, ms)
        energies.append(float(distances.sum()))
    return labels, centers, energies


def enforce_connectivity(labels, min_size):
    """
    Merge 4-connected fragments smaller than ``min_size`` pixels into their
    largest neighbor and give every remaining component its own ID.
    """
    components = get_connected_components(labels)
    num_components = int(components.max())
    sizes = np.bincount(components.ravel(), minlength=num_components + 1).tolist()
    neighbors = {i: set() for i in range(1, num_components + 1)}
    for a, b in get_adjacent_pairs(components).tolist():
        neighbors[a].add(b)
        neighbors[b].add(a)

    parent = list(range(num_components + 1))

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    order = sorted(range(1, num_components + 1), key=lambda i: (sizes[i], i))
    for component in order:
        root = find(component)
        if sizes[root] >= min_size:
            continue
        candidates = {find(n) for n in neighbors[root]} - {root}
        if not candidates:
            continue
        target = max(candidates, key=lambda n: (sizes[n], -n))
        parent[root] = target
        sizes[target] += sizes[root]
        neighbors[target] |= neighbors[root]

    roots = np.array([find(i) for i in range(num_components + 1)])
    groups = roots[components].ravel()
    _, first_index, inverse = np.unique(groups, return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(first_index))
    return rank[inverse.ravel()].reshape(labels.shape)


def slic_segment(image, params):
    lab = rgb_to_lab(image)
    labels, _, energies = slic_kmeans(lab, params)
    height, width = labels.shape
    min_size = height * width / params.k / 4
    labels = enforce_connectivity(labels, min_size)
    return SuperpixelMap.from_assignment(labels, lab=lab, energies=energies)


def downsample_superpixels(superpixels, width, height):
    """
    Majority vote of superpixel IDs over blocks of the full-resolution map.

    Superpixel IDs are kept, so some may have no cell at low resolution.
    The x, y centers are recomputed on the low-resolution grid; the Lab
    part of each center is the full-resolution color mean, since no image
    is available at the lower resolution.
    """
    full_height, full_width = superpixels.shape
    if not (1 <= width <= full_width and 1 <= height <= full_height):
        message = (
            f'Cannot downsample {full_width}x{full_height} superpixels'
            f' to {width}x{height}'
        )
        raise ValueError(message)
    if (height, width) == superpixels.shape:
        return superpixels
    num_superpixels = superpixels.num_superpixels
    rows = get_block_indices(full_height, height)
    cols = get_block_indices(full_width, width)
    cells = (rows[:, np.newaxis] * width + cols[np.newaxis, :]).ravel()
    ids = superpixels.assignment.ravel()
    keys, counts = np.unique(cells * num_superpixels + ids, return_counts=True)
    key_cells = keys // num_superpixels
    key_ids = keys % num_superpixels
    order = np.lexsort((key_ids, -counts, key_cells))
    _, first = np.unique(key_cells[order], return_index=True)
    winners = key_ids[order][first].reshape(height, width)
    return SuperpixelMap.from_assignment(
        winners,
        colors=superpixels.centers[:, :3],
        num_superpixels=num_superpixels,
    )

import numpy as np
from scipy import ndimage
from skimage import color, measure


def to_float_rgb(image):
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f'Expected an RGB image of shape (H, W, 3), got {image.shape}')
    if image.dtype == np.uint8:
        return image.astype(np.float64) / 255
    return np.clip(image.astype(np.float64), 0, 1)


def rgb_to_lab(image):
    """CIELAB (D65) from sRGB, as SLIC defines its color distance."""
    return color.rgb2lab(to_float_rgb(image), illuminant='D65')


def rgb_to_gray(image):
    return color.rgb2gray(to_float_rgb(image))


def get_gradient_magnitude(array):
    """
    Squared central differences summed over channels, with clamped borders.
    """
    if array.ndim == 2:
        array = array[..., np.newaxis]
    padded = np.pad(array, ((1, 1), (1, 1), (0, 0)), mode='edge')
    dx = padded[1:-1, 2:] - padded[1:-1, :-2]
    dy = padded[2:, 1:-1] - padded[:-2, 1:-1]
    return (dx ** 2).sum(axis=-1) + (dy ** 2).sum(axis=-1)


def get_central_differences(gray):
    padded = np.pad(gray, 1, mode='edge')
    dx = (padded[1:-1, 2:] - padded[1:-1, :-2]) / 2
    dy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) / 2
    return dx, dy


def get_local_mean_std(gray, size=3):
    mean = ndimage.uniform_filter(gray, size=size, mode='nearest')
    mean_squares = ndimage.uniform_filter(gray ** 2, size=size, mode='nearest')
    variance = np.clip(mean_squares - mean ** 2, 0, None)
    return mean, np.sqrt(variance)


def get_connected_components(labels):
    """
    Label 4-connected regions of equal value; returns IDs starting at 1.
    """
    labels = np.asarray(labels, dtype=np.int64)
    return measure.label(labels + 1, background=0, connectivity=1)


def get_adjacent_pairs(labels):
    """Unique unordered pairs of different labels touching by 4-adjacency."""
    horizontal = labels[:, :-1].ravel(), labels[:, 1:].ravel()
    vertical = labels[:-1, :].ravel(), labels[1:, :].ravel()
    a = np.concatenate((horizontal[0], vertical[0]))
    b = np.concatenate((horizontal[1], vertical[1]))
    different = a != b
    pairs = np.stack((np.minimum(a, b), np.maximum(a, b)), axis=1)[different]
    if not len(pairs):
        return pairs.reshape(0, 2)
    return np.unique(pairs, axis=0)


def get_block_indices(size, new_size):
    """
    Map each of ``size`` coordinates to one of ``new_size`` blocks.

    Blocks have ``size // new_size`` pixels; remainder pixels fold into
    the last block.
    """
    if not 1 <= new_size <= size:
        raise ValueError(f'Cannot map {size} pixels into {new_size} blocks')
    ratio = size // new_size
    return np.minimum(np.arange(size) // ratio, new_size - 1)


def get_sample_coordinates(size, stride):
    """Pixel centers of the cells of a grid downsampled by ``stride``."""
    num_cells = max(1, size // stride)
    return np.minimum(np.arange(num_cells) * stride + stride // 2, size - 1)


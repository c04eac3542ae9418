"""
Readers and writers for every artifact the pipeline exchanges on disk.

All binary containers are little-endian regardless of the host:

- ``PRB1``: planar float32 ``[c][y][x]`` maps (probabilities and features)
- ``CNF1``: float32 flow confidence maps
- ``.flo``: Middlebury optical flow
- ``TOY1``: toy model checkpoints
"""

import os
import re
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import png
import numpy as np

from .core import LabelMap, ProbMap, FlowField, ConfidenceMap, FeatureMap
from .errors import FormatError


PROB_MAGIC = b'PRB1'
CONF_MAGIC = b'CNF1'
MODEL_MAGIC = b'TOY1'
FLO_MAGIC = 202021.25
ABSENT = '-'


def _read_png(path, rgba=False):
    with open(path, 'rb') as f:
        reader = png.Reader(file=f)
        try:
            if rgba:
                width, height, rows, info = reader.asRGBA8()
            else:
                width, height, rows, info = reader.read()
            rows = list(rows)
        except png.Error as e:
            raise FormatError(f'Error reading PNG {path}: {e}') from None
    return width, height, rows, info


def _check_single_channel(path, info, max_bitdepth):
    if info['planes'] != 1:
        message = (
            f'{path} has {info["planes"]} channels (alpha: {info["alpha"]});'
            ' expected a single-channel PNG'
        )
        raise FormatError(message)
    if info['bitdepth'] > max_bitdepth:
        message = (
            f'{path} has bit depth {info["bitdepth"]};'
            f' expected at most {max_bitdepth} bits'
        )
        raise FormatError(message)


def read_label_png(path, num_classes=None):
    width, height, rows, info = _read_png(path)
    _check_single_channel(path, info, 8)
    array = np.array(rows, dtype=np.uint8).reshape(height, width)
    if num_classes is None:
        num_classes = max(1, int(array.max()))
    elif array.max() > num_classes:
        message = f'{path} contains class {array.max()} but only {num_classes} classes are declared'
        raise FormatError(message)
    return LabelMap(array, num_classes)


def write_label_png(label_map, path, palette=None):
    height, width = label_map.shape
    if palette is None:
        writer = png.Writer(width, height, greyscale=True, bitdepth=8)
    else:
        palette = [tuple(int(c) for c in color) for color in palette]
        writer = png.Writer(width, height, palette=palette, bitdepth=8)
    with open(path, 'wb') as f:
        writer.write(f, label_map.array.tolist())


def read_mask_png(path):
    label_map = read_label_png(path)
    return label_map.array > 0


def read_index_png(path):
    """Read a 16-bit (or narrower) single-channel PNG as an integer array."""
    width, height, rows, info = _read_png(path)
    _check_single_channel(path, info, 16)
    return np.array(rows, dtype=np.int64).reshape(height, width)


def write_index_png(array, path):
    array = np.asarray(array)
    if array.min() < 0 or array.max() > np.iinfo(np.uint16).max:
        raise ValueError(f'Values must fit in 16 bits, got range [{array.min()}, {array.max()}]')
    height, width = array.shape
    writer = png.Writer(width, height, greyscale=True, bitdepth=16)
    with open(path, 'wb') as f:
        writer.write(f, array.astype(np.uint16).tolist())


def read_rgb_png(path):
    width, height, rows, _ = _read_png(path, rgba=True)
    array = np.array(rows, dtype=np.uint8)
    return array.reshape(height, width, 4)[..., :3].copy()


def write_rgb_png(image, path):
    image = np.asarray(image, dtype=np.uint8)
    height, width = image.shape[:2]
    writer = png.Writer(width, height, greyscale=False, bitdepth=8)
    with open(path, 'wb') as f:
        writer.write(f, image.reshape(height, width * 3).tolist())


def read_text(path):
    """Read a UTF-8 text file, reporting undecodable bytes as a format error."""
    try:
        return Path(path).read_text(encoding='utf-8')
    except UnicodeDecodeError as e:
        message = f'{path}: not UTF-8 text (byte {e.object[e.start]:#04x} at offset {e.start})'
        raise FormatError(message) from None


def _read_header(buffer, path, magic, fmt):
    size = len(magic) + struct.calcsize(fmt)
    if len(buffer) < size:
        raise FormatError(f'{path} is truncated: {len(buffer)} bytes, header needs {size}')
    if buffer[:len(magic)] != magic:
        raise FormatError(f'{path} has bad magic {buffer[:len(magic)]!r}, expected {magic!r}')
    return struct.unpack_from(fmt, buffer, len(magic)), size


def _read_payload(buffer, path, offset, count):
    expected = offset + 4 * count
    if len(buffer) < expected:
        message = f'{path} is truncated: {len(buffer)} bytes, expected {expected}'
        raise FormatError(message)
    if len(buffer) > expected:
        message = f'{path} has {len(buffer) - expected} trailing bytes after the payload'
        raise FormatError(message)
    return np.frombuffer(buffer, dtype='<f4', count=count, offset=offset)


def read_planar(path):
    """Read a PRB1 container as a float32 array of shape (C, H, W)."""
    buffer = Path(path).read_bytes()
    (width, height, channels), offset = _read_header(buffer, path, PROB_MAGIC, '<III')
    data = _read_payload(buffer, path, offset, width * height * channels)
    return data.reshape(channels, height, width).astype(np.float32)


def write_planar(data, path):
    data = np.asarray(data)
    channels, height, width = data.shape
    header = PROB_MAGIC + struct.pack('<III', width, height, channels)
    with open(path, 'wb') as f:
        f.write(header)
        f.write(np.ascontiguousarray(data, dtype='<f4').tobytes())


def read_prob(path, check_softmax=True, strict=False, tolerance=1e-3):
    data = read_planar(path)
    try:
        probs = ProbMap(data)
    except ValueError as e:
        raise FormatError(f'{path}: {e}') from None
    if check_softmax:
        deviation = probs.softmax_deviation()
        if deviation > tolerance:
            message = (
                f'Channel sums in {path} deviate from 1 by up to {deviation:.3g}'
                f' (tolerance {tolerance:g})'
            )
            if strict:
                raise FormatError(message)
            warnings.warn(message)
    return probs


def write_prob(probs, path):
    write_planar(probs.data, path)


def read_features(path):
    try:
        return FeatureMap(read_planar(path))
    except ValueError as e:
        raise FormatError(f'{path}: {e}') from None


def write_features(features, path):
    write_planar(features.data, path)


def read_conf(path):
    buffer = Path(path).read_bytes()
    (width, height), offset = _read_header(buffer, path, CONF_MAGIC, '<II')
    data = _read_payload(buffer, path, offset, width * height)
    try:
        confidence = ConfidenceMap(data.reshape(height, width))
    except ValueError as e:
        raise FormatError(f'{path}: {e}') from None
    if confidence.num_clamped:
        warnings.warn(f'{confidence.num_clamped} confidence values in {path} clamped to [0, 1]')
    return confidence


def write_conf(confidence, path):
    height, width = confidence.shape
    with open(path, 'wb') as f:
        f.write(CONF_MAGIC + struct.pack('<II', width, height))
        f.write(np.ascontiguousarray(confidence.array, dtype='<f4').tobytes())


def read_flo(path):
    buffer = Path(path).read_bytes()
    if len(buffer) < 12:
        raise FormatError(f'{path} is truncated: {len(buffer)} bytes, header needs 12')
    magic, = struct.unpack_from('<f', buffer, 0)
    if magic != FLO_MAGIC:
        raise FormatError(f'{path} has bad magic {magic}, expected {FLO_MAGIC}')
    width, height = struct.unpack_from('<ii', buffer, 4)
    if width < 1 or height < 1:
        raise FormatError(f'{path} has invalid size {width}x{height}')
    data = _read_payload(buffer, path, 12, 2 * width * height)
    data = data.reshape(height, width, 2)
    try:
        return FlowField(data[..., 0], data[..., 1])
    except ValueError as e:
        raise FormatError(f'{path}: {e}') from None


def write_flo(flow, path):
    height, width = flow.shape
    interleaved = np.stack((flow.u, flow.v), axis=-1)
    with open(path, 'wb') as f:
        f.write(struct.pack('<fii', FLO_MAGIC, width, height))
        f.write(np.ascontiguousarray(interleaved, dtype='<f4').tobytes())


@dataclass(frozen=True)
class ManifestEntry:
    target_image_path: Path
    target_prob_path: Path
    reference_prob_path: Optional[Path] = None
    flow_path: Optional[Path] = None
    flow_conf_path: Optional[Path] = None
    gt_label_path: Optional[Path] = None
    reference_image_path: Optional[Path] = None

    @property
    def has_reference(self):
        return self.reference_prob_path is not None

    @property
    def stem(self):
        return Path(self.target_image_path).stem

    def paths(self):
        values = (
            self.target_image_path,
            self.target_prob_path,
            self.reference_prob_path,
            self.flow_path,
            self.flow_conf_path,
            self.gt_label_path,
            self.reference_image_path,
        )
        return values


@dataclass
class Manifest:
    entries: List[ManifestEntry]
    num_classes: int
    class_names: List[str]
    palette: List[Tuple[int, int, int]]
    path: Optional[Path] = None

    def __post_init__(self):
        if self.num_classes < 1:
            raise FormatError(f'At least one class is needed, got {self.num_classes}')
        if len(self.palette) != self.num_classes + 1:
            message = (
                f'Palette has {len(self.palette)} colors,'
                f' expected {self.num_classes + 1} (index 0 is the ignore color)'
            )
            raise FormatError(message)

    def __len__(self):
        return len(self.entries)

    @property
    def has_flow(self):
        return any(entry.has_reference for entry in self.entries)

    @property
    def has_ground_truth(self):
        return all(entry.gt_label_path is not None for entry in self.entries)

    def check(self):
        for entry in self.entries:
            for path in entry.paths():
                if path is not None and not Path(path).is_file():
                    raise FileNotFoundError(f'{path} listed in manifest does not exist')
        return self


def read_manifest(path, check=False):
    path = Path(path)
    base_dir = path.parent
    num_classes = None
    classes = {}
    entries = []
    lines = read_text(path).splitlines()
    for line_number, line in enumerate(lines, start=1):
        where = f'{path}:{line_number}'
        if not line.strip() or line.lstrip().startswith('#'):
            continue
        if '\t' in line:
            entries.append(_parse_entry(line, base_dir, where))
            continue
        match = re.fullmatch(r'\s*classes\s*=\s*(-?\d+)\s*', line)
        if match:
            num_classes = int(match.group(1))
            if num_classes < 1:
                raise FormatError(f'{where}: at least one class is needed, got {num_classes}')
            continue
        match = re.fullmatch(
            r'\s*class\s+(\d+)\s*=\s*(\S+)\s+(\d+)\s+(\d+)\s+(\d+)\s*', line)
        if match:
            index = int(match.group(1))
            color = tuple(int(match.group(i)) for i in (3, 4, 5))
            if any(c > 255 for c in color):
                raise FormatError(f'{where}: color components must be in [0, 255]')
            classes[index] = match.group(2), color
            continue
        raise FormatError(f'{where}: line not understood: "{line}"')

    if num_classes is None:
        raise FormatError(f'{path}: missing "classes = N" declaration')
    missing = [k for k in range(1, num_classes + 1) if k not in classes]
    if missing:
        raise FormatError(f'{path}: missing class declarations for {missing}')
    extra_classes = [k for k in classes if k > num_classes]
    if extra_classes:
        raise FormatError(f'{path}: classes {extra_classes} exceed "classes = {num_classes}"')
    classes.setdefault(0, ('ignore', (0, 0, 0)))
    class_names = [classes[k][0] for k in range(1, num_classes + 1)]
    palette = [classes[k][1] for k in range(num_classes + 1)]
    manifest = Manifest(entries, num_classes, class_names, palette, path=path)
    if check:
        manifest.check()
    return manifest


def _parse_entry(line, base_dir, where):
    fields = line.rstrip('\n').split('\t')
    if not 2 <= len(fields) <= 7:
        raise FormatError(f'{where}: expected 2 to 7 tab-separated fields, got {len(fields)}')
    fields = [f.strip() for f in fields] + [ABSENT] * (7 - len(fields))
    paths = []
    for value in fields:
        if not value or value == ABSENT:
            paths.append(None)
        else:
            value = Path(value).expanduser()
            paths.append(value if value.is_absolute() else base_dir / value)
    if paths[0] is None or paths[1] is None:
        raise FormatError(f'{where}: target image and probability paths are required')
    reference = paths[2:5]
    if any(p is None for p in reference) and any(p is not None for p in reference):
        raise FormatError(f'{where}: reference/flow must co-occur')
    return ManifestEntry(*paths)


def write_manifest(manifest, path):
    path = Path(path)
    base_dir = path.parent.resolve()
    lines = [f'classes = {manifest.num_classes}']
    for index, color in enumerate(manifest.palette):
        name = 'ignore' if index == 0 else manifest.class_names[index - 1]
        r, g, b = color
        lines.append(f'class {index} = {name} {r} {g} {b}')
    for entry in manifest.entries:
        fields = []
        for value in entry.paths():
            if value is None:
                fields.append(ABSENT)
            else:
                fields.append(os.path.relpath(Path(value).resolve(), base_dir))
        while len(fields) > 2 and fields[-1] == ABSENT:
            fields.pop()
        lines.append('\t'.join(fields))
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')


def read_thresholds(path):
    from .pseudo import ClassThresholds
    values = {}
    p = None
    source = 'exact'
    for line in read_text(path).splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith('#'):
            match = re.fullmatch(r'#\s*(\w+)\s*=\s*(\S+)', line)
            if match and match.group(1) == 'p':
                p = float(match.group(2))
            elif match and match.group(1) == 'source':
                source = match.group(2)
            continue
        match = re.fullmatch(r'class\s+(\d+)\s+lambda\s+(\S+)', line)
        if not match:
            raise FormatError(f'{path}: line not understood: "{line}"')
        values[int(match.group(1))] = float(match.group(2))
    if not values or sorted(values) != list(range(1, len(values) + 1)):
        raise FormatError(f'{path}: classes must be numbered 1 to C without gaps')
    lambdas = np.array([values[k] for k in sorted(values)])
    return ClassThresholds(lambdas, p, source)


def write_thresholds(thresholds, path):
    lines = [f'# source = {thresholds.source}']
    if thresholds.p is not None:
        lines.insert(0, f'# p = {thresholds.p}')
    for index, value in enumerate(thresholds.values, start=1):
        lines.append(f'class {index} lambda {float(value)!r}')
    Path(path).write_text('\n'.join(lines) + '\n', encoding='utf-8')


def write_superpixels(superpixels, path):
    """Write the assignment as a 16-bit PNG plus a ``.txt`` sidecar of centers."""
    path = Path(path)
    write_index_png(superpixels.assignment, path)
    lines = []
    for index, center in enumerate(superpixels.centers):
        values = ' '.join(f'{v:.6f}' for v in center)
        lines.append(f'sp {index} {values}')
    path.with_suffix('.txt').write_text('\n'.join(lines) + '\n', encoding='utf-8')


def read_superpixels(path):
    from .slic import SuperpixelMap
    assignment = read_index_png(path)
    return SuperpixelMap.from_assignment(assignment)


def write_model(model, path):
    d_in, hidden = model.w1.shape
    num_classes = model.w2.shape[1]
    with open(path, 'wb') as f:
        f.write(MODEL_MAGIC + struct.pack('<III', d_in, hidden, num_classes))
        for parameter in model.parameters():
            f.write(np.ascontiguousarray(parameter, dtype='<f4').tobytes())


def read_model(path):
    from .toymodel import ToyModel
    buffer = Path(path).read_bytes()
    (d_in, hidden, num_classes), offset = _read_header(buffer, path, MODEL_MAGIC, '<III')
    shapes = (d_in, hidden), (hidden,), (hidden, num_classes), (num_classes,)
    count = sum(int(np.prod(shape)) for shape in shapes)
    data = _read_payload(buffer, path, offset, count).astype(np.float64)
    parameters = []
    start = 0
    for shape in shapes:
        size = int(np.prod(shape))
        parameters.append(data[start:start + size].reshape(shape).copy())
        start += size
    return ToyModel(*parameters)

"""Dataset records, edge-label derivation, resizing and the synthetic camouflage generator.

On-disk layout::

    <root>/images/<id>.png       8-bit RGB
    <root>/masks/<id>.png        8-bit grayscale, 0 = background, 255 = foreground
    <root>/pseudo_maps/<id>.png  optional precomputed pseudo-maps
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from urcod import kernels

BINARIZE_THRESHOLD = 0.5
SHAPE_KINDS = ("ellipse", "blob", "polygon")


def check_prob_map(values, name="map"):
    """Validate a single-channel unit-interval map and return it as float64."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def binarize(values):
    return (np.asarray(values) >= BINARIZE_THRESHOLD).astype(np.float64)


@dataclass
class ImageSample:
    id: str
    image: np.ndarray
    gt_map: np.ndarray
    gt_edge: np.ndarray

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"{self.id}: image must be H x W x 3, got {self.image.shape}")
        if self.image.min() < 0.0 or self.image.max() > 1.0:
            raise ValueError(f"{self.id}: image values must lie in [0, 1]")
        self.gt_map = check_prob_map(self.gt_map, f"{self.id}: gt_map")
        self.gt_edge = check_prob_map(self.gt_edge, f"{self.id}: gt_edge")
        hw = self.image.shape[:2]
        if self.gt_map.shape != hw or self.gt_edge.shape != hw:
            raise ValueError(
                f"{self.id}: planes disagree in size: image {hw}, "
                f"gt_map {self.gt_map.shape}, gt_edge {self.gt_edge.shape}"
            )

    @property
    def size(self):
        return self.image.shape[:2]


def derive_edge_label(mask, width=1):
    """Morphological gradient (dilation minus erosion) of the binarized mask.

    The structuring element is a square of side ``2 * width + 1``. Pixels
    outside the image do not take part, so the image border is not an edge.
    """
    if width < 1:
        raise ValueError("edge width must be >= 1")
    binary = (check_prob_map(mask, "mask") >= BINARIZE_THRESHOLD).astype(np.uint8)
    return kernels.morph_gradient(np.ascontiguousarray(binary), int(width)).astype(np.float64)


def _read_png(path, flags=cv2.IMREAD_UNCHANGED):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    arr = cv2.imread(str(path), flags)
    if arr is None:
        raise ValueError(f"cannot decode image file: {path}")
    if arr.dtype != np.uint8:
        raise ValueError(f"{path}: expected 8-bit data, got {arr.dtype}")
    return arr


def read_rgb(path):
    arr = _read_png(path)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    elif arr.shape[2] == 4:
        arr = cv2.cvtColor(arr, cv2.COLOR_BGRA2RGB)
    elif arr.shape[2] == 3:
        arr = cv2.cvtColor(arr, cv2.COLOR_BGR2RGB)
    else:
        raise ValueError(f"{path}: unsupported channel count {arr.shape[2]}")
    return arr.astype(np.float64) / 255.0


def read_gray(path):
    arr = _read_png(path)
    if arr.ndim != 2:
        raise ValueError(f"{path}: expected a single-channel grayscale map, got shape {arr.shape}")
    return arr.astype(np.float64) / 255.0


def write_gray(path, values):
    """Write a unit-interval map as 8-bit grayscale, ``round(255 * v)``."""
    arr = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    q = np.rint(arr * 255.0).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), q):
        raise OSError(f"failed to write {path}")


def write_rgb(path, image):
    q = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), cv2.cvtColor(q, cv2.COLOR_RGB2BGR)):
        raise OSError(f"failed to write {path}")


def load_sample(image_path, map_path, edge_width=1, sample_id=None):
    image = read_rgb(image_path)
    gt = read_gray(map_path)
    if image.shape[:2] != gt.shape:
        raise ValueError(
            f"dimension mismatch: image {image.shape[1]}x{image.shape[0]}, "
            f"map {gt.shape[1]}x{gt.shape[0]}"
        )
    gt_map = binarize(gt)
    sid = sample_id if sample_id is not None else Path(image_path).stem
    return ImageSample(sid, image, gt_map, derive_edge_label(gt_map, edge_width))


def resize_sample(sample, size, edge_width=1):
    if size < 16:
        raise ValueError("target size must be >= 16")
    if sample.size == (size, size):
        return sample
    image = cv2.resize(sample.image, (size, size), interpolation=cv2.INTER_LINEAR)
    gt = cv2.resize(sample.gt_map, (size, size), interpolation=cv2.INTER_LINEAR)
    gt_map = binarize(gt)
    return ImageSample(
        sample.id, np.clip(image, 0.0, 1.0), gt_map, derive_edge_label(gt_map, edge_width)
    )


def resize_map(values, size):
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape == (size, size):
        return arr
    return np.clip(cv2.resize(arr, (size, size), interpolation=cv2.INTER_LINEAR), 0.0, 1.0)


def list_ids(root):
    img_dir = Path(root) / "images"
    if not img_dir.is_dir():
        raise FileNotFoundError(f"{root}: missing images/ directory")
    return sorted(p.stem for p in img_dir.glob("*.png"))


def load_dataset(root, size=None, edge_width=1):
    """Load every ``images/<id>.png`` with its mask, ordered by id."""
    root = Path(root)
    samples = []
    for sid in list_ids(root):
        s = load_sample(root / "images" / f"{sid}.png", root / "masks" / f"{sid}.png", edge_width, sid)
        if size is not None:
            s = resize_sample(s, size, edge_width)
        samples.append(s)
    if not samples:
        raise ValueError(f"{root}: dataset is empty")
    return samples


def write_dataset(samples, root):
    root = Path(root)
    for s in samples:
        write_rgb(root / "images" / f"{s.id}.png", s.image)
        write_gray(root / "masks" / f"{s.id}.png", s.gt_map)


# -- synthetic camouflage -------------------------------------------------


@dataclass(frozen=True)
class SyntheticConfig:
    count: int = 200
    size: int = 64
    shape_kinds: tuple = SHAPE_KINDS
    texture_similarity: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.size < 16:
            raise ValueError("size must be >= 16")
        if not 0.0 <= self.texture_similarity <= 1.0:
            raise ValueError("texture_similarity must lie in [0, 1]")
        kinds = tuple(self.shape_kinds)
        if not kinds or any(k not in SHAPE_KINDS for k in kinds):
            raise ValueError(f"shape_kinds must be a non-empty subset of {SHAPE_KINDS}")
        object.__setattr__(self, "shape_kinds", kinds)


def value_noise(rng, size, cells, channels=3):
    """Bicubic-upsampled random lattice, one octave."""
    grid = rng.random((cells + 1, cells + 1, channels))
    up = cv2.resize(grid, (size, size), interpolation=cv2.INTER_CUBIC)
    return up.reshape(size, size, channels)


def _texture(rng, size, base, cells):
    # two octaves, zero-mean noise around a base color
    t = 0.65 * value_noise(rng, size, cells) + 0.35 * value_noise(rng, size, 2 * cells)
    t = (t - t.mean(axis=(0, 1))) / (t.std(axis=(0, 1)) + 1e-8)
    return base + 0.12 * t


def _shape_mask(rng, size, kind):
    mask = np.zeros((size, size), dtype=np.uint8)
    radius = rng.uniform(0.16, 0.3) * size
    margin = radius + 2
    cx, cy = rng.uniform(margin, size - margin, size=2)
    if kind == "ellipse":
        axes = (max(2, int(round(radius))), max(2, int(round(radius * rng.uniform(0.55, 1.0)))))
        angle = float(rng.uniform(0, 180))
        cv2.ellipse(mask, (int(round(cx)), int(round(cy))), axes, angle, 0, 360, 1, thickness=-1)
    else:
        if kind == "blob":
            theta = np.linspace(0, 2 * np.pi, 64, endpoint=False)
            r = np.ones_like(theta)
            for k in (2, 3, 4):
                r += rng.uniform(0.0, 0.14) * np.cos(k * theta + rng.uniform(0, 2 * np.pi))
            r *= radius
        else:
            n = int(rng.integers(5, 9))
            theta = np.sort(rng.uniform(0, 2 * np.pi, n))
            r = radius * rng.uniform(0.65, 1.0, n)
        pts = np.stack([cx + r * np.cos(theta), cy + r * np.sin(theta)], axis=1)
        cv2.fillPoly(mask, [np.round(pts).astype(np.int32)], 1)
    return mask.astype(np.float64)


def synthetic_sample(cfg, index):
    """Sample ``index`` of the dataset described by ``cfg``; independent of other indices."""
    rng = np.random.default_rng([cfg.seed, index])
    size = cfg.size
    kind = cfg.shape_kinds[int(rng.integers(len(cfg.shape_kinds)))]
    gt = _shape_mask(rng, size, kind)
    base = rng.uniform(0.3, 0.7, 3)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    alien = np.clip(base + 0.3 * direction, 0.05, 0.95)
    cells = int(rng.integers(3, 7))
    background = _texture(rng, size, base, cells)
    # foreground: a fresh draw from the background distribution blended with an alien one
    native = _texture(rng, size, base, cells)
    foreign = _texture(rng, size, alien, 2 * cells)
    s = cfg.texture_similarity
    foreground = s * native + (1.0 - s) * foreign
    image = np.clip(gt[:, :, None] * foreground + (1.0 - gt[:, :, None]) * background, 0.0, 1.0)
    return ImageSample(f"syn_{index:05d}", image, gt, derive_edge_label(gt, 1))


def generate_synthetic_dataset(cfg):
    return [synthetic_sample(cfg, i) for i in range(cfg.count)]


@dataclass
class Split:
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)


def split_samples(samples, test_fraction=0.2, seed=0):
    """Deterministic shuffled train/test split."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(samples))
    n_test = max(1, int(round(len(samples) * test_fraction)))
    test_idx = set(order[:n_test].tolist())
    return Split(
        train=[s for i, s in enumerate(samples) if i not in test_idx],
        test=[s for i, s in enumerate(samples) if i in test_idx],
    )


def thread_count():
    """Worker cap from ``URCOD_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("URCOD_THREADS", "1")))
    except ValueError:
        return 1

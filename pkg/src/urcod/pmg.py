"""Pseudo-map sources: a builtin toy segmenter, precomputed maps from external models, or corrupted ground truth."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
import torch
from scipy import ndimage

from urcod.imagedata import check_prob_map, read_gray
from urcod.peg import EncoderDecoder, images_to_tensor

KINDS = ("builtin", "precomputed", "corrupted")


class MissingPseudoMapError(FileNotFoundError):
    def __init__(self, sample_id, path):
        super().__init__(f"no pseudo-map for sample {sample_id!r} (expected {path})")
        self.sample_id = sample_id


class SegmenterModel(EncoderDecoder):
    """Builtin pseudo-map generator: the edge generator's skeleton without context blocks."""

    def __init__(self):
        super().__init__(3, context=False)


@dataclass
class PseudoMapSource:
    kind: str
    model: SegmenterModel | None = None
    map_directory: Path | None = None
    blur_radius: float = 2.0
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown pseudo-map source {self.kind!r}; expected one of {KINDS}")
        if self.kind == "builtin" and self.model is None:
            raise ValueError("builtin source needs a model")
        if self.kind == "precomputed":
            if self.map_directory is None:
                raise ValueError("precomputed source needs map_directory")
            self.map_directory = Path(self.map_directory)
        if self.blur_radius < 0 or self.noise_sigma < 0:
            raise ValueError("blur_radius and noise_sigma must be >= 0")

    @classmethod
    def parse(cls, spec, model=None, seed=0):
        """Parse ``builtin``, ``precomputed:<dir>`` or ``corrupted:<radius>,<sigma>``."""
        if spec == "builtin":
            return cls("builtin", model=model or SegmenterModel(), seed=seed)
        if spec.startswith("precomputed:"):
            return cls("precomputed", map_directory=Path(spec.split(":", 1)[1]), seed=seed)
        if spec.startswith("corrupted:"):
            try:
                radius, sigma = (float(v) for v in spec.split(":", 1)[1].split(","))
            except ValueError as exc:
                raise ValueError(f"bad corrupted source {spec!r}; expected corrupted:<radius>,<sigma>") from exc
            return cls("corrupted", blur_radius=radius, noise_sigma=sigma, seed=seed)
        raise ValueError(f"bad pseudo-map source {spec!r}")

    def describe(self):
        if self.kind == "precomputed":
            return f"precomputed:{self.map_directory}"
        if self.kind == "corrupted":
            return f"corrupted:{self.blur_radius:g},{self.noise_sigma:g}"
        return "builtin"


def corrupt_map(gt, blur_radius, noise_sigma, seed):
    """Gaussian blur (std = ``blur_radius`` px) plus additive Gaussian noise, clipped to [0, 1]."""
    if blur_radius < 0 or noise_sigma < 0:
        raise ValueError("blur_radius and noise_sigma must be >= 0")
    out = check_prob_map(gt, "gt").copy()
    if blur_radius > 0:
        out = ndimage.gaussian_filter(out, sigma=blur_radius, mode="nearest")
    if noise_sigma > 0:
        out = out + np.random.default_rng(seed).normal(0.0, noise_sigma, out.shape)
    return np.clip(out, 0.0, 1.0)


def sample_seed(seed, sample_id):
    return (int(seed) * 1_000_003 + zlib.crc32(sample_id.encode())) % (2**32)


def load_precomputed(directory, sample):
    path = Path(directory) / f"{sample.id}.png"
    if not path.is_file():
        raise MissingPseudoMapError(sample.id, path)
    values = read_gray(path)
    h, w = sample.size
    if values.shape != (h, w):
        values = np.clip(cv2.resize(values, (w, h), interpolation=cv2.INTER_LINEAR), 0.0, 1.0)
    return values


def generate_pseudo_map(source, sample):
    return generate_pseudo_maps(source, [sample])[0]


@torch.no_grad()
def generate_pseudo_maps(source, samples, batch_size=16):
    """Pseudo-maps for ``samples`` in order, each at its sample's resolution."""
    if source.kind == "precomputed":
        return [load_precomputed(source.map_directory, s) for s in samples]
    if source.kind == "corrupted":
        return [corrupt_map(s.gt_map, source.blur_radius, source.noise_sigma, sample_seed(source.seed, s.id)) for s in samples]
    model = source.model
    model.eval()
    dtype = next(model.parameters()).dtype
    out = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i : i + batch_size]
        pred = model(images_to_tensor([s.image for s in chunk], dtype))
        out.extend(p[0].double().numpy() for p in pred)
    return out

"""Pseudo-edge generator: strided encoder, DAC and RMP context blocks, skip decoder."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from urcod import kernels
from urcod.losses import bce


def atrous_conv(x, w, r):
    """Dilated correlation ``y[i] = sum_k x[i + r k] w[k]`` over valid positions only."""
    return kernels.atrous_conv1d(np.asarray(x, dtype=np.float64), np.asarray(w, dtype=np.float64), int(r))


def atrous_conv2d(x, w, r):
    """Two-axis version of :func:`atrous_conv`: ``y[i, j] = sum_kl x[i + r k, j + r l] w[k, l]``."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    kh, kw = w.shape
    oh = x.shape[0] - r * (kh - 1)
    ow = x.shape[1] - r * (kw - 1)
    if r < 1 or oh < 1 or ow < 1:
        raise ValueError(f"filter {w.shape} at rate {r} does not fit input {x.shape}")
    out = np.zeros((oh, ow))
    for k in range(kh):
        for l in range(kw):
            out += w[k, l] * x[r * k : r * k + oh, r * l : r * l + ow]
    return out


@dataclass
class DacConfig:
    branch_rates: list = field(default_factory=lambda: [[1], [1, 3], [1, 3, 5], [1, 3, 5, 7]])
    channels: int = 64
    kernel_size: int = 3

    def __post_init__(self):
        self.branch_rates = [list(map(int, b)) for b in self.branch_rates]
        if not self.branch_rates or any(not b or min(b) < 1 for b in self.branch_rates):
            raise ValueError("every branch needs at least one atrous rate >= 1")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd")


class DacBlock(nn.Module):
    """Cascaded atrous branches summed onto the input."""

    def __init__(self, cfg: DacConfig):
        super().__init__()
        self.cfg = cfg
        c, k = cfg.channels, cfg.kernel_size
        self.branches = nn.ModuleList(
            nn.ModuleList(nn.Conv2d(c, c, k, padding=r * (k // 2), dilation=r) for r in rates)
            for rates in cfg.branch_rates
        )

    def forward(self, x):
        if x.shape[1] != self.cfg.channels:
            raise ValueError(f"DAC expects {self.cfg.channels} channels, got {x.shape[1]}")
        out = x
        for branch in self.branches:
            y = x
            for conv in branch:
                y = F.relu(conv(y))
            out = out + y
        return out


class RmpBlock(nn.Module):
    """Multi-kernel max pooling, 1x1 reduction to one channel each, upsample and concatenate."""

    pool_sizes = (2, 3, 5, 6)

    def __init__(self, channels):
        super().__init__()
        self.reduce = nn.Conv2d(channels, 1, 1)

    def forward(self, x):
        h, w = x.shape[-2:]
        if min(h, w) < max(self.pool_sizes):
            raise ValueError(f"RMP needs spatial size >= {max(self.pool_sizes)}, got {h}x{w}")
        pooled = [
            F.interpolate(self.reduce(F.max_pool2d(x, k, stride=k)), size=(h, w), mode="bilinear", align_corners=False)
            for k in self.pool_sizes
        ]
        return torch.cat([x] + pooled, dim=1)


def _stage(cin, cout, stride):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class EncoderDecoder(nn.Module):
    """Four-stage strided encoder with a skip-connected nearest-upsampling decoder.

    With ``context=True`` the bottleneck passes through DAC and RMP blocks
    (the edge generator); without it this is the builtin pseudo-map segmenter.
    """

    widths = (16, 32, 64, 64)

    def __init__(self, in_channels=3, context=True, dac=None):
        super().__init__()
        w1, w2, w3, w4 = self.widths
        self.context = context
        self.enc = nn.ModuleList([_stage(in_channels, w1, 1), _stage(w1, w2, 2), _stage(w2, w3, 2), _stage(w3, w4, 2)])
        bottom = w4
        if context:
            self.dac_cfg = dac or DacConfig(channels=w4)
            self.dac = DacBlock(self.dac_cfg)
            self.rmp = RmpBlock(w4)
            bottom = w4 + len(RmpBlock.pool_sizes)
        self.dec3 = _stage(bottom + w3, w2, 1)
        self.dec2 = _stage(w2 + w2, w1, 1)
        self.dec1 = _stage(w1 + w1, w1, 1)
        self.head = nn.Conv2d(w1, 1, 1)

    def forward(self, x):
        e1 = self.enc[0](x)
        e2 = self.enc[1](e1)
        e3 = self.enc[2](e2)
        b = self.enc[3](e3)
        if self.context:
            b = self.rmp(self.dac(b))
        up = lambda t, ref: F.interpolate(t, size=ref.shape[-2:], mode="nearest")
        d = self.dec3(torch.cat([up(b, e3), e3], dim=1))
        d = self.dec2(torch.cat([up(d, e2), e2], dim=1))
        d = self.dec1(torch.cat([up(d, e1), e1], dim=1))
        return torch.sigmoid(self.head(d))


class PegModel(EncoderDecoder):
    def __init__(self, input_size=352, dac=None):
        if input_size % 8 or input_size // 8 < max(RmpBlock.pool_sizes):
            raise ValueError("input_size must be a multiple of 8 and at least 48")
        super().__init__(3, context=True, dac=dac)
        self.input_size = input_size

    def forward(self, x):
        if tuple(x.shape[-2:]) != (self.input_size, self.input_size):
            raise ValueError(f"expected {self.input_size}x{self.input_size} input, got {tuple(x.shape[-2:])}")
        return super().forward(x)


def images_to_tensor(images, dtype=torch.float32):
    """Stack ``H x W x 3`` arrays into an ``(N, 3, H, W)`` tensor."""
    arr = np.stack([np.asarray(im) for im in images]).transpose(0, 3, 1, 2)
    return torch.as_tensor(np.ascontiguousarray(arr), dtype=dtype)


def maps_to_tensor(maps, dtype=torch.float32):
    return torch.as_tensor(np.stack([np.asarray(m) for m in maps])[:, None], dtype=dtype)


@torch.no_grad()
def peg_forward(model, image):
    """Edge map for one ``H x W x 3`` image, as an ``H x W`` float64 array."""
    dtype = next(model.parameters()).dtype
    out = model(images_to_tensor([image], dtype))
    return out[0, 0].double().numpy()


@dataclass
class EdgeLossConfig:
    flooding_level: float = 0.02

    def __post_init__(self):
        if self.flooding_level < 0:
            raise ValueError("flooding level must be >= 0")


def edge_loss(pred, gt_edge, cfg=None):
    """Flooded BCE: ``|bce - b| + b``; never drops below the flooding level ``b``."""
    b = (cfg or EdgeLossConfig()).flooding_level
    return (bce(pred, gt_edge) - b).abs() + b

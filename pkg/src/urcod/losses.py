"""Differentiable loss terms shared by the edge generator and the refinement module.

All map losses take tensors shaped ``(..., H, W)`` holding probabilities
(not logits) and reduce to a scalar. Probabilities are clamped to
``[EPS, 1 - EPS]`` before any logarithm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

EPS = 1e-6


def as_tensor(x, like=None):
    if isinstance(x, torch.Tensor):
        return x
    dtype = like.dtype if isinstance(like, torch.Tensor) else torch.float64
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def _aligned(pred, target, name):
    pred = as_tensor(pred)
    target = as_tensor(target, like=pred)
    if pred.shape != target.shape:
        raise ValueError(f"{name}: dimension mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    return pred, target


def bce(pred, target):
    pred, target = _aligned(pred, target, "bce")
    p = pred.clamp(EPS, 1 - EPS)
    return -(target * torch.log(p) + (1 - target) * torch.log(1 - p)).mean()


def mse(pred, target):
    pred, target = _aligned(pred, target, "mse")
    return ((pred - target) ** 2).mean()


def to_gray(image):
    """Channel mean of an ``(H, W, 3)`` or ``(N, 3, H, W)`` image."""
    image = as_tensor(image)
    if image.dim() == 3 and image.shape[-1] == 3:
        return image.mean(dim=-1)
    return image.mean(dim=-3)


def smoothness_loss(pred, image):
    """Edge-aware first-order smoothness of ``pred`` against the image.

    ``sum(|dx pred| exp(-|dx gray|) + |dy pred| exp(-|dy gray|)) / (H W)``
    with forward differences; ``image`` is either ``(N, 3, H, W)`` or
    ``(H, W, 3)``.
    """
    pred = as_tensor(pred)
    gray = to_gray(as_tensor(image, like=pred))
    if gray.shape[-2:] != pred.shape[-2:]:
        raise ValueError(f"smoothness_loss: dimension mismatch {tuple(pred.shape)} vs image {tuple(gray.shape)}")
    while gray.dim() < pred.dim():
        gray = gray.unsqueeze(-3)
    dpx = (pred[..., :, 1:] - pred[..., :, :-1]).abs()
    dpy = (pred[..., 1:, :] - pred[..., :-1, :]).abs()
    wx = torch.exp(-(gray[..., :, 1:] - gray[..., :, :-1]).abs())
    wy = torch.exp(-(gray[..., 1:, :] - gray[..., :-1, :]).abs())
    h, w = pred.shape[-2:]
    n = pred.numel() // (h * w)
    return ((dpx * wx).sum() + (dpy * wy).sum()) / (n * h * w)


def boundary_weights(target, window=15):
    """``1 + 5 |local_mean(target) - target|`` over a zero-padded square window."""
    t = target.reshape((-1, 1) + target.shape[-2:])
    local = F.avg_pool2d(t, window, stride=1, padding=window // 2, count_include_pad=True)
    return (1 + 5 * (local - t).abs()).reshape(target.shape)


def structure_loss(pred, target, window=15):
    """Boundary-weighted BCE plus boundary-weighted IoU, averaged over samples."""
    pred, target = _aligned(pred, target, "structure_loss")
    weight = boundary_weights(target, window)
    p = pred.clamp(EPS, 1 - EPS)
    dims = (-2, -1)
    wbce = -(target * torch.log(p) + (1 - target) * torch.log(1 - p))
    wbce = (weight * wbce).sum(dim=dims) / weight.sum(dim=dims)
    inter = (weight * p * target).sum(dim=dims)
    union = (weight * (p + target)).sum(dim=dims)
    wiou = 1 - inter / (union - inter)
    return (wbce + wiou).mean()


@dataclass
class GaussianLatent:
    """Diagonal Gaussian: ``mean`` and ``std`` shaped ``(..., latent_dim)``."""

    mean: torch.Tensor
    std: torch.Tensor

    def __post_init__(self):
        self.mean = as_tensor(self.mean)
        self.std = as_tensor(self.std, like=self.mean)
        if self.mean.shape != self.std.shape:
            raise ValueError(f"mean/std shape mismatch {tuple(self.mean.shape)} vs {tuple(self.std.shape)}")

    @property
    def dim(self):
        return self.mean.shape[-1]


def gaussian_kl(q, p):
    """Closed-form KL(q || p) between diagonal Gaussians, summed over latent dims.

    Leading (batch) dims are averaged.
    """
    if q.mean.shape != p.mean.shape:
        raise ValueError(f"latent dimension mismatch {tuple(q.mean.shape)} vs {tuple(p.mean.shape)}")
    if (q.std <= 0).any() or (p.std <= 0).any():
        raise ValueError("standard deviations must be positive")
    var_ratio = (q.std / p.std) ** 2
    diff = ((q.mean - p.mean) / p.std) ** 2
    kl = 0.5 * (var_ratio + diff - 1.0 - torch.log(var_ratio))
    kl = kl.sum(dim=-1)
    return kl.mean() if kl.dim() > 0 else kl

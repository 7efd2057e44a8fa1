"""Uncertainty-aware map refinement: a conditional VAE over pseudo labels.

PriorNet sees ``X = (image, m_pseudo, e_pseudo)``; PosteriorNet additionally
sees the ground-truth map. RefinementNet decodes ``X`` plus a latent sample
(tiled into constant planes) into three maps: the camouflaged map
``m_pred`` and corrected pseudo labels ``m_ref`` / ``e_ref``.

Tensors are ``(N, C, H, W)``; latents are ``(N, latent_dim)``.
"""

from __future__ import annotations

from dataclasses import astuple, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from urcod.losses import GaussianLatent, bce, gaussian_kl, mse, smoothness_loss, structure_loss
from urcod.peg import images_to_tensor, maps_to_tensor

SIGMA_FLOOR = 1e-4


class LatentEncoder(nn.Module):
    """Strided conv stack, global average pool, linear head for (mean, log-std)."""

    def __init__(self, in_channels, latent_dim, width=16):
        super().__init__()
        self.conv = nn.Sequential(
            nn.Conv2d(in_channels, width, 3, stride=2, padding=1),
            nn.LeakyReLU(0.1),
            nn.Conv2d(width, 2 * width, 3, stride=2, padding=1),
            nn.LeakyReLU(0.1),
            nn.Conv2d(2 * width, 4 * width, 3, stride=2, padding=1),
            nn.LeakyReLU(0.1),
        )
        self.head = nn.Linear(4 * width, 2 * latent_dim)
        self.latent_dim = latent_dim

    def forward(self, x, sigma_floor=0.0):
        h = self.conv(x).mean(dim=(-2, -1))
        mu, log_sigma = self.head(h).chunk(2, dim=-1)
        std = torch.exp(log_sigma)
        if sigma_floor > 0:
            std = std.clamp_min(sigma_floor)
        return GaussianLatent(mu, std)


def _block(cin, cout, stride=1):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1),
        nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1),
        nn.ReLU(inplace=True),
    )


class RefinementNet(nn.Module):
    """Three-level U-Net trunk shared by three sigmoid heads."""

    def __init__(self, in_channels, widths=(16, 32, 64)):
        super().__init__()
        w1, w2, w3 = widths
        self.e1 = _block(in_channels, w1)
        self.e2 = _block(w1, w2, 2)
        self.e3 = _block(w2, w3, 2)
        self.d2 = _block(w3 + w2, w2)
        self.d1 = _block(w2 + w1, w1)
        self.heads = nn.Conv2d(w1, 3, 1)

    def forward(self, x):
        e1 = self.e1(x)
        e2 = self.e2(e1)
        e3 = self.e3(e2)
        d = self.d2(torch.cat([F.interpolate(e3, size=e2.shape[-2:], mode="nearest"), e2], 1))
        d = self.d1(torch.cat([F.interpolate(d, size=e1.shape[-2:], mode="nearest"), e1], 1))
        return torch.sigmoid(self.heads(d))


class UamrModel(nn.Module):
    def __init__(self, latent_dim=3):
        super().__init__()
        if latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        self.latent_dim = latent_dim
        self.prior_net = LatentEncoder(5, latent_dim)
        self.posterior_net = LatentEncoder(6, latent_dim)
        self.refinement_net = RefinementNet(5 + latent_dim)

    @property
    def sigma_floor(self):
        return SIGMA_FLOOR if self.training else 0.0


@dataclass
class RefinementOutput:
    m_pred: torch.Tensor
    m_ref: torch.Tensor
    e_ref: torch.Tensor


@dataclass
class UamrBatch:
    """Aligned ``(N, C, H, W)`` tensors for one training step."""

    image: torch.Tensor
    m_pseudo: torch.Tensor
    e_pseudo: torch.Tensor
    m_gt: torch.Tensor
    e_gt: torch.Tensor

    @classmethod
    def from_samples(cls, samples, m_pseudo, e_pseudo, dtype=torch.float32):
        return cls(
            images_to_tensor([s.image for s in samples], dtype),
            maps_to_tensor(m_pseudo, dtype),
            maps_to_tensor(e_pseudo, dtype),
            maps_to_tensor([s.gt_map for s in samples], dtype),
            maps_to_tensor([s.gt_edge for s in samples], dtype),
        )

    def __len__(self):
        return self.image.shape[0]


@dataclass
class RefinementWeights:
    mse_prior: float = 1.0
    mse_post: float = 1.0
    smooth_prior: float = 1.0
    smooth_post: float = 1.0
    struct_prior: float = 1.0
    struct_post: float = 1.0

    def scaled(self, k):
        return RefinementWeights(*(k * v for v in astuple(self)))


def _conditioning(image, m_pseudo, e_pseudo):
    if not (image.shape[-2:] == m_pseudo.shape[-2:] == e_pseudo.shape[-2:]):
        raise ValueError(
            f"size mismatch: image {tuple(image.shape[-2:])}, m_pseudo {tuple(m_pseudo.shape[-2:])}, "
            f"e_pseudo {tuple(e_pseudo.shape[-2:])}"
        )
    return torch.cat([image, m_pseudo, e_pseudo], dim=1)


def prior_encode(model, image, m_pseudo, e_pseudo):
    return model.prior_net(_conditioning(image, m_pseudo, e_pseudo), model.sigma_floor)


def posterior_encode(model, image, m_pseudo, e_pseudo, m_gt):
    x = _conditioning(image, m_pseudo, e_pseudo)
    if m_gt.shape[-2:] != x.shape[-2:]:
        raise ValueError(f"size mismatch: m_gt {tuple(m_gt.shape[-2:])} vs inputs {tuple(x.shape[-2:])}")
    return model.posterior_net(torch.cat([x, m_gt], dim=1), model.sigma_floor)


def sample_latent(g, noise):
    """Reparameterized sample ``mean + std * noise``."""
    noise = torch.as_tensor(noise, dtype=g.mean.dtype)
    if noise.shape != g.mean.shape:
        raise ValueError(f"noise shape {tuple(noise.shape)} does not match latent {tuple(g.mean.shape)}")
    return g.mean + g.std * noise


def refine(model, image, m_pseudo, e_pseudo, z):
    x = _conditioning(image, m_pseudo, e_pseudo)
    if z.dim() != 2 or z.shape != (x.shape[0], model.latent_dim):
        raise ValueError(f"latent must be ({x.shape[0]}, {model.latent_dim}), got {tuple(z.shape)}")
    planes = z[:, :, None, None].expand(-1, -1, *x.shape[-2:])
    out = model.refinement_net(torch.cat([x, planes.to(x.dtype)], dim=1))
    return RefinementOutput(out[:, 0:1], out[:, 1:2], out[:, 2:3])


def _recon_and_kl(post, prior, out_post, m_gt):
    return bce(out_post.m_pred, m_gt), gaussian_kl(post, prior)


def cvae_loss(model, batch, noise):
    """Single-sample estimate of ``E_q[-log p(Y | X, z)] + KL(q(z | X, Y) || p(z | X))``."""
    prior = prior_encode(model, batch.image, batch.m_pseudo, batch.e_pseudo)
    post = posterior_encode(model, batch.image, batch.m_pseudo, batch.e_pseudo, batch.m_gt)
    out_post = refine(model, batch.image, batch.m_pseudo, batch.e_pseudo, sample_latent(post, noise))
    recon, kl = _recon_and_kl(post, prior, out_post, batch.m_gt)
    return recon + kl


def refinement_loss(out_prior, out_post, batch, weights=None):
    """Weighted MSE on the corrected labels plus smoothness and structure on ``m_pred``, for both paths."""
    w = weights or RefinementWeights()
    if isinstance(w, (list, tuple)):
        if len(w) != 6:
            raise ValueError("refinement_loss needs six weights")
        w = RefinementWeights(*w)
    total = 0.0
    for out, lam_mse, lam_smooth, lam_struct in (
        (out_prior, w.mse_prior, w.smooth_prior, w.struct_prior),
        (out_post, w.mse_post, w.smooth_post, w.struct_post),
    ):
        pair_mse = mse(out.m_ref, batch.m_gt) + mse(out.e_ref, batch.e_gt)
        total = total + lam_mse * pair_mse
        total = total + lam_smooth * smoothness_loss(out.m_pred, batch.image)
        total = total + lam_struct * structure_loss(out.m_pred, batch.m_gt)
    return total


@dataclass
class UamrStep:
    cvae: torch.Tensor
    ref: torch.Tensor
    kl: torch.Tensor
    out_prior: RefinementOutput
    out_post: RefinementOutput


def uamr_losses(model, batch, noise_post, noise_prior, weights=None):
    """Both loss terms from one prior and one posterior pass."""
    prior = prior_encode(model, batch.image, batch.m_pseudo, batch.e_pseudo)
    post = posterior_encode(model, batch.image, batch.m_pseudo, batch.e_pseudo, batch.m_gt)
    out_post = refine(model, batch.image, batch.m_pseudo, batch.e_pseudo, sample_latent(post, noise_post))
    out_prior = refine(model, batch.image, batch.m_pseudo, batch.e_pseudo, sample_latent(prior, noise_prior))
    recon, kl = _recon_and_kl(post, prior, out_post, batch.m_gt)
    ref = refinement_loss(out_prior, out_post, batch, weights)
    return UamrStep(recon + kl, ref, kl, out_prior, out_post)


@torch.no_grad()
def infer(model, images, m_pseudo, e_pseudo, mode="mean", seed=0):
    """Final camouflaged maps from the prior path.

    Accepts one ``H x W x 3`` image with ``H x W`` maps, or lists of them.
    ``mode="mean"`` decodes the prior mean; ``mode="sample"`` draws one
    latent per image from a generator seeded with ``seed``.
    """
    if mode not in ("mean", "sample"):
        raise ValueError(f"mode must be 'mean' or 'sample', got {mode!r}")
    single = isinstance(images, np.ndarray) and images.ndim == 3
    if single:
        images, m_pseudo, e_pseudo = [images], [m_pseudo], [e_pseudo]
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    image_t = images_to_tensor(images, dtype)
    m_t = maps_to_tensor(m_pseudo, dtype)
    e_t = maps_to_tensor(e_pseudo, dtype)
    prior = prior_encode(model, image_t, m_t, e_t)
    if mode == "mean":
        z = prior.mean
    else:
        gen = torch.Generator().manual_seed(int(seed))
        z = sample_latent(prior, torch.randn(prior.mean.shape, generator=gen, dtype=dtype))
    out = refine(model, image_t, m_t, e_t, z).m_pred[:, 0].double().numpy()
    model.train(was_training)
    return out[0] if single else list(out)

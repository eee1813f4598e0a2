"""Training objectives.

Losses take ``(sr, hr)`` image batches on the [0, 1] scale and return a scalar
tensor that is 0 when ``sr == hr``. Region segmentation for the
three-component losses is computed on ``hr`` luminance and carries no gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, ParameterError, UsageError
from .metrics import (PSNR3_WEIGHTS, SSIM3_WEIGHTS, combine_regions, luminance,
                      segment_regions, sobel)
from .ssim import SsimParams, ms_ssim, ssim_map

LOSS_SSIM = SsimParams(data_range=1.0)
SPECIAL_ALPHA_EPS = 1e-5
SOBEL_EPS = 1e-12


def _same_shape(sr: torch.Tensor, hr: torch.Tensor) -> None:
    if sr.shape != hr.shape:
        raise UsageError(f"shape mismatch: sr {tuple(sr.shape)} vs hr {tuple(hr.shape)}")


def l1(sr: torch.Tensor, hr: torch.Tensor) -> torch.Tensor:
    _same_shape(sr, hr)
    return (sr - hr).abs().mean()


def mse(sr: torch.Tensor, hr: torch.Tensor) -> torch.Tensor:
    _same_shape(sr, hr)
    return ((sr - hr) ** 2).mean()


def ssim_loss(sr: torch.Tensor, hr: torch.Tensor, params: SsimParams = LOSS_SSIM) -> torch.Tensor:
    """``1 - mean(SSIM map)`` over all channels and valid positions."""
    return 1.0 - ssim_map(sr, hr, params).mean()


def ms_ssim_loss(sr: torch.Tensor, hr: torch.Tensor, params: SsimParams = LOSS_SSIM) -> torch.Tensor:
    _same_shape(sr, hr)
    return 1.0 - ms_ssim(sr, hr, params).mean()


def mix_l1_msssim(sr: torch.Tensor, hr: torch.Tensor, w_l1: float = 0.16,
                  w_msssim: float = 0.84, params: SsimParams = LOSS_SSIM) -> torch.Tensor:
    out = w_l1 * l1(sr, hr)
    if w_msssim:
        out = out + w_msssim * ms_ssim_loss(sr, hr, params)
    return out


def general_loss(x: torch.Tensor, alpha, c) -> torch.Tensor:
    """Elementwise robust loss rho(x, alpha, c).

    alpha = 2 gives 0.5 (x/c)^2, alpha = 0 gives log(0.5 (x/c)^2 + 1),
    alpha = -inf gives 1 - exp(-0.5 (x/c)^2); any other alpha uses
    |2-alpha|/alpha * (((x/c)^2/|2-alpha| + 1)^(alpha/2) - 1). Within
    SPECIAL_ALPHA_EPS of 0 or 2 the special-case formula is used.
    """
    alpha = torch.as_tensor(alpha, dtype=x.dtype, device=x.device)
    c = torch.as_tensor(c, dtype=x.dtype, device=x.device)
    if (c <= 0).any():
        raise ParameterError(f"scale c must be positive, got {c}")
    z = (x / c) ** 2
    near_two = (alpha - 2).abs() < SPECIAL_ALPHA_EPS
    near_zero = alpha.abs() < SPECIAL_ALPHA_EPS
    neg_inf = torch.isneginf(alpha)
    special = near_two | near_zero | neg_inf
    # Placeholder alpha in the unused general branch keeps its gradient finite.
    a = torch.where(special, torch.ones_like(alpha), alpha)
    b = (2 - a).abs()
    general = b / a * ((z / b + 1) ** (a / 2) - 1)
    loss = torch.where(near_two, 0.5 * z, general)
    loss = torch.where(near_zero, torch.log1p(0.5 * z), loss)
    return torch.where(neg_inf, -torch.expm1(-0.5 * z), loss)


def barron_loss(sr: torch.Tensor, hr: torch.Tensor, alpha, c) -> torch.Tensor:
    _same_shape(sr, hr)
    return general_loss(hr - sr, alpha, c).mean()


class AdaptiveLoss(nn.Module):
    """Robust loss with learnable shape and scale.

    ``alpha = lo + (hi - lo) * sigmoid(latent)`` stays in [0.001, 1.999] and
    ``c = c_min + softplus(latent)`` stays positive; both start at the values
    given here (alpha 1 is the Charbonnier member of the family).
    """

    def __init__(self, alpha_init: float = 1.0, scale_init: float = 0.01,
                 alpha_lo: float = 0.001, alpha_hi: float = 1.999, scale_min: float = 1e-8,
                 learnable: bool = True):
        super().__init__()
        if not alpha_lo < alpha_init < alpha_hi:
            raise ParameterError(f"alpha_init {alpha_init} outside ({alpha_lo}, {alpha_hi})")
        if scale_init <= scale_min:
            raise ParameterError(f"scale_init must exceed {scale_min}, got {scale_init}")
        self.alpha_lo, self.alpha_hi, self.scale_min = alpha_lo, alpha_hi, scale_min
        frac = (alpha_init - alpha_lo) / (alpha_hi - alpha_lo)
        alpha_latent = torch.tensor(math.log(frac / (1 - frac)))
        scale_latent = torch.tensor(math.log(math.expm1(scale_init - scale_min)))
        if learnable:
            self.alpha_latent = nn.Parameter(alpha_latent)
            self.scale_latent = nn.Parameter(scale_latent)
        else:
            self.register_buffer("alpha_latent", alpha_latent)
            self.register_buffer("scale_latent", scale_latent)

    def alpha(self) -> torch.Tensor:
        return self.alpha_lo + (self.alpha_hi - self.alpha_lo) * torch.sigmoid(self.alpha_latent)

    def scale(self) -> torch.Tensor:
        return self.scale_min + F.softplus(self.scale_latent)

    def forward(self, sr: torch.Tensor, hr: torch.Tensor) -> torch.Tensor:
        return barron_loss(sr, hr, self.alpha().to(sr.dtype), self.scale().to(sr.dtype))


def _luma(x: torch.Tensor) -> torch.Tensor:
    return luminance(x) if x.shape[1] == 3 else x


def sobel_edge_loss(sr: torch.Tensor, hr: torch.Tensor, weight_pixels: float = 1.0,
                    weight_edges: float = 1.0) -> torch.Tensor:
    """Pixel L1 plus L1 between luminance Sobel magnitude maps."""
    _same_shape(sr, hr)
    edges = l1(sobel(_luma(sr), SOBEL_EPS), sobel(_luma(hr), SOBEL_EPS))
    return weight_pixels * l1(sr, hr) + weight_edges * edges


def region_weighted_loss(sr: torch.Tensor, hr: torch.Tensor, weights=PSNR3_WEIGHTS,
                         base: str = "psnr", params: SsimParams = LOSS_SSIM) -> torch.Tensor:
    """Per-region distortion (MSE or 1-SSIM) combined with normalized region weights."""
    _same_shape(sr, hr)
    mask = segment_regions(_luma(hr).detach())
    if base == "psnr":
        per_image = combine_regions((sr - hr) ** 2, mask.labels, weights)
    elif base == "ssim":
        dist = 1.0 - ssim_map(sr, hr, params)
        per_image = combine_regions(dist, mask.crop(params.win // 2).labels, weights)
    else:
        raise ConfigurationError(f"base must be 'psnr' or 'ssim', got {base!r}")
    return per_image.mean()


LOSS_NAMES = ("l1", "mse", "ssim", "ms_ssim", "mix", "barron", "adaptive", "l1_sobel",
              "adaptive_sobel", "psnr3", "ssim3")


@dataclass
class LossSpec:
    """Loss name plus flat keyword parameters, e.g. ``LossSpec("mix", {"w_l1": 0.16})``."""

    name: str = "adaptive"
    params: dict = field(default_factory=dict)


_ALLOWED = {
    "l1": set(), "mse": set(),
    "ssim": {"win", "sigma"},
    "ms_ssim": {"win", "sigma", "scales"},
    "mix": {"w_l1", "w_msssim", "win", "sigma", "scales"},
    "barron": {"alpha", "c"},
    "adaptive": {"alpha", "c"},
    "l1_sobel": {"weight_pixels", "weight_edges"},
    "adaptive_sobel": {"alpha", "c", "weight_edges"},
    "psnr3": {"w_edge", "w_texture", "w_smooth"},
    "ssim3": {"w_edge", "w_texture", "w_smooth", "win", "sigma"},
}


class Loss(nn.Module):
    """Callable objective built from a :class:`LossSpec`; owns adaptive latents if any."""

    def __init__(self, spec: LossSpec | str = "adaptive"):
        super().__init__()
        spec = LossSpec(spec) if isinstance(spec, str) else spec
        name = spec.name.lower().replace("-", "_").replace("+", "_").replace(" ", "")
        if name not in _ALLOWED:
            raise ConfigurationError(f"unknown loss {spec.name!r}; expected one of {LOSS_NAMES}")
        unknown = set(spec.params) - _ALLOWED[name]
        if unknown:
            raise ConfigurationError(f"loss {name!r} does not take {sorted(unknown)}")
        self.name = name
        p = dict(spec.params)
        self.p = p
        self.ssim_params = SsimParams(win=int(p.get("win", 11)), sigma=float(p.get("sigma", 1.5)),
                                      data_range=1.0, scales=int(p.get("scales", 5)))
        default_w = SSIM3_WEIGHTS if name == "ssim3" else PSNR3_WEIGHTS
        self.region_weights = (float(p.get("w_edge", default_w[0])),
                               float(p.get("w_texture", default_w[1])),
                               float(p.get("w_smooth", default_w[2])))
        self.adaptive = None
        if name in ("adaptive", "adaptive_sobel"):
            self.adaptive = AdaptiveLoss(float(p.get("alpha", 1.0)), float(p.get("c", 0.01)))
        if name == "barron" and float(p.get("c", 1.0)) <= 0:
            raise ParameterError("barron scale c must be positive")

    def forward(self, sr: torch.Tensor, hr: torch.Tensor) -> torch.Tensor:
        n, p = self.name, self.p
        if n == "l1":
            return l1(sr, hr)
        if n == "mse":
            return mse(sr, hr)
        if n == "ssim":
            return ssim_loss(sr, hr, self.ssim_params)
        if n == "ms_ssim":
            return ms_ssim_loss(sr, hr, self.ssim_params)
        if n == "mix":
            return mix_l1_msssim(sr, hr, float(p.get("w_l1", 0.16)),
                                 float(p.get("w_msssim", 0.84)), self.ssim_params)
        if n == "barron":
            return barron_loss(sr, hr, float(p.get("alpha", 1.0)), float(p.get("c", 1.0)))
        if n == "adaptive":
            return self.adaptive(sr, hr)
        if n == "l1_sobel":
            return sobel_edge_loss(sr, hr, float(p.get("weight_pixels", 1.0)),
                                   float(p.get("weight_edges", 1.0)))
        if n == "adaptive_sobel":
            return self.adaptive(sr, hr) + sobel_edge_loss(
                sr, hr, 0.0, float(p.get("weight_edges", 1.0)))
        if n == "psnr3":
            return region_weighted_loss(sr, hr, self.region_weights, "psnr")
        return region_weighted_loss(sr, hr, self.region_weights, "ssim", self.ssim_params)

"""Structural similarity (single- and multi-scale) shared by losses and metrics.

All statistics use a normalized Gaussian window applied without padding, so
maps are ``win - 1`` pixels smaller than the inputs in each dimension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ParameterError, UsageError
from .tensor_nn import check_tensor4

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@dataclass(frozen=True)
class SsimParams:
    win: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 255.0
    scales: int = 5
    betas: tuple[float, ...] | None = None  # None: canonical weights, renormalized to `scales`
    alpha: float | None = None  # None: equal to the last beta

    def __post_init__(self):
        if self.win < 1 or self.sigma <= 0:
            raise ParameterError(f"bad window: win={self.win} sigma={self.sigma}")
        if self.k1 <= 0 or self.k2 <= 0 or self.data_range <= 0:
            raise ParameterError("k1, k2 and data_range must be positive")
        if self.scales < 1:
            raise ParameterError(f"scales must be >= 1, got {self.scales}")
        if self.betas is not None and len(self.betas) != self.scales:
            raise ParameterError(f"{len(self.betas)} betas given for {self.scales} scales")

    @property
    def c1(self) -> float:
        return (self.k1 * self.data_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.data_range) ** 2

    def scale_weights(self) -> tuple[tuple[float, ...], float]:
        if self.betas is not None:
            betas = tuple(self.betas)
        elif self.scales <= len(MS_SSIM_WEIGHTS):
            head = MS_SSIM_WEIGHTS[:self.scales]
            total = sum(head)
            betas = tuple(b / total for b in head)
        else:
            betas = (1.0 / self.scales,) * self.scales
        alpha = betas[-1] if self.alpha is None else self.alpha
        return betas, alpha


def gaussian_window(win: int, sigma: float, dtype=torch.float64) -> torch.Tensor:
    coords = torch.arange(win, dtype=dtype) - (win - 1) / 2
    g = torch.exp(-(coords ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def _filter(x: torch.Tensor, window: torch.Tensor) -> torch.Tensor:
    ch = x.shape[1]
    kernel = window.to(x.dtype).expand(ch, 1, *window.shape)
    return F.conv2d(x, kernel, groups=ch)


def ssim_components(x: torch.Tensor, y: torch.Tensor, params: SsimParams = SsimParams()):
    """Per-pixel ``(ssim, l, cs)`` maps, each shaped ``(n, ch, h-win+1, w-win+1)``."""
    check_tensor4(x, "x")
    check_tensor4(y, "y")
    if x.shape != y.shape:
        raise UsageError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    if min(x.shape[2:]) < params.win:
        raise UsageError(f"image {tuple(x.shape[2:])} smaller than the {params.win}px window")
    window = gaussian_window(params.win, params.sigma)
    mu_x = _filter(x, window)
    mu_y = _filter(y, window)
    var_x = _filter(x * x, window) - mu_x * mu_x
    var_y = _filter(y * y, window) - mu_y * mu_y
    cov = _filter(x * y, window) - mu_x * mu_y
    c1, c2 = params.c1, params.c2
    lum = (2 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
    cs = (2 * cov + c2) / (var_x + var_y + c2)
    return lum * cs, lum, cs


def ssim_map(x: torch.Tensor, y: torch.Tensor, params: SsimParams = SsimParams()) -> torch.Tensor:
    return ssim_components(x, y, params)[0]


def ssim(x: torch.Tensor, y: torch.Tensor, params: SsimParams = SsimParams()) -> torch.Tensor:
    """Mean SSIM per image, shape ``(n,)`` (averaged over channels and positions)."""
    return ssim_map(x, y, params).mean(dim=(1, 2, 3))


def max_scales(h: int, w: int, win: int = 11) -> int:
    """Largest M such that ``min(h, w) >= 2**(M-1) * win`` (0 if even M=1 fails)."""
    side = min(h, w)
    if side < win:
        return 0
    return int(math.floor(math.log2(side / win))) + 1


def ms_ssim(x: torch.Tensor, y: torch.Tensor, params: SsimParams = SsimParams()) -> torch.Tensor:
    """Multi-scale SSIM per image, shape ``(n,)``.

    Scale j contributes ``mean(cs_j) ** beta_j`` for j < M; the coarsest scale
    contributes ``mean(l_M ** (alpha/beta_M) * cs_M) ** beta_M``, which is the
    usual ``mean(ssim_M) ** beta_M`` when ``alpha == beta_M``. Scales are built
    by 2x2 average pooling. Means are clamped at 0 before fractional powers.
    """
    check_tensor4(x, "x")
    feasible = max_scales(x.shape[2], x.shape[3], params.win)
    if params.scales > feasible:
        raise UsageError(
            f"image {tuple(x.shape[2:])} supports at most M={feasible} scales "
            f"with a {params.win}px window, {params.scales} requested")
    betas, alpha = params.scale_weights()
    result = torch.ones(x.shape[:2], dtype=x.dtype, device=x.device)
    for j, beta in enumerate(betas):
        _, lum, cs = ssim_components(x, y, params)
        if j < len(betas) - 1:
            term = cs.mean(dim=(2, 3))
            x = F.avg_pool2d(x, 2)
            y = F.avg_pool2d(y, 2)
        else:
            if alpha != beta:
                lum = lum.clamp(min=0) ** (alpha / beta)
            term = (lum * cs).mean(dim=(2, 3))
        result = result * term.clamp(min=0) ** beta
    return result.mean(dim=1)

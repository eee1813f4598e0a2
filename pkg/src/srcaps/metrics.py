"""Evaluation measures on the [0, 255] scale.

PSNR and MSE are taken on the luminance channel. SSIM-family scores in an
evaluation also use luminance. The three-component variants split the
reference image into edge, texture and smooth regions by Sobel magnitude.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .errors import ParameterError, UsageError
from .ssim import SsimParams, max_scales, ms_ssim, ssim_map
from .tensor_nn import check_tensor4

log = logging.getLogger(__name__)

EDGE, TEXTURE, SMOOTH = 0, 1, 2
REGION_NAMES = ("edge", "texture", "smooth")
PSNR3_WEIGHTS = (0.7, 0.15, 0.15)
SSIM3_WEIGHTS = (1.0, 0.0, 0.0)
LUMA = (0.299, 0.587, 0.114)

SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]], dtype=torch.float64)
SOBEL_Y = SOBEL_X.t().contiguous()


def luminance(image: torch.Tensor) -> torch.Tensor:
    """Y = 0.299 R + 0.587 G + 0.114 B, returned as ``(n, 1, h, w)``."""
    check_tensor4(image, "image")
    if image.shape[1] != 3:
        raise UsageError(f"luminance needs 3 channels, got {image.shape[1]}")
    w = torch.tensor(LUMA, dtype=image.dtype, device=image.device).view(1, 3, 1, 1)
    return (image * w).sum(dim=1, keepdim=True)


def _luma_or_single(image: torch.Tensor) -> torch.Tensor:
    check_tensor4(image, "image")
    return image if image.shape[1] == 1 else luminance(image)


def _same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise UsageError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean squared luminance difference per image, shape ``(n,)``."""
    _same_shape(a, b)
    diff = _luma_or_single(a) - _luma_or_single(b)
    return (diff * diff).mean(dim=(1, 2, 3))


def psnr_from_mse(m: torch.Tensor, peak: float = 255.0) -> torch.Tensor:
    # 10 log10(peak^2 / 0) -> +inf, which is the identical-image sentinel.
    return 10.0 * torch.log10(peak ** 2 / m)


def psnr(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return psnr_from_mse(mse(a, b))


def sobel(image: torch.Tensor, eps: float = 0.0) -> torch.Tensor:
    """Gradient magnitude ``sqrt(gx^2 + gy^2 + eps)`` with replicate padding.

    ``eps > 0`` keeps the square root differentiable on flat areas.
    """
    check_tensor4(image, "image")
    if image.shape[1] != 1:
        raise UsageError(f"sobel expects a single channel, got {image.shape[1]}")
    padded = F.pad(image, (1, 1, 1, 1), mode="replicate")
    kx = SOBEL_X.to(image.dtype).view(1, 1, 3, 3)
    ky = SOBEL_Y.to(image.dtype).view(1, 1, 3, 3)
    gx = F.conv2d(padded, kx)
    gy = F.conv2d(padded, ky)
    return torch.sqrt(gx * gx + gy * gy + eps)


@dataclass
class RegionMask:
    labels: torch.Tensor  # (n, 1, h, w) int64 in {EDGE, TEXTURE, SMOOTH}
    t_edge: torch.Tensor  # (n,)
    t_texture: torch.Tensor  # (n,)
    g_max: torch.Tensor  # (n,)

    def counts(self) -> torch.Tensor:
        """Pixel count per region, shape ``(n, 3)``."""
        flat = self.labels.flatten(1)
        return torch.stack([(flat == r).sum(dim=1) for r in (EDGE, TEXTURE, SMOOTH)], dim=1)

    def crop(self, border: int) -> "RegionMask":
        if border == 0:
            return self
        labels = self.labels[..., border:-border, border:-border]
        return RegionMask(labels, self.t_edge, self.t_texture, self.g_max)


def segment_regions(lum: torch.Tensor, edge_frac: float = 0.12,
                    texture_frac: float = 0.06) -> RegionMask:
    """Label pixels edge / texture / smooth from Sobel magnitude relative to its max.

    A flat image (max magnitude 0) is all smooth.
    """
    if not 0 <= texture_frac <= edge_frac:
        raise ParameterError(f"need 0 <= texture_frac <= edge_frac, got {texture_frac}, {edge_frac}")
    with torch.no_grad():
        g = sobel(lum.to(torch.float64))
        g_max = g.flatten(1).max(dim=1).values
        t_edge = edge_frac * g_max
        t_tex = texture_frac * g_max
        te = t_edge.view(-1, 1, 1, 1)
        tt = t_tex.view(-1, 1, 1, 1)
        labels = torch.full_like(g, TEXTURE, dtype=torch.int64)
        labels[g > te] = EDGE
        labels[g < tt] = SMOOTH
        labels[(g_max == 0).view(-1, 1, 1, 1).expand_as(g)] = SMOOTH
    return RegionMask(labels, t_edge, t_tex, g_max)


def _check_weights(weights) -> tuple[float, float, float]:
    w = tuple(float(v) for v in weights)
    if len(w) != 3 or any(v < 0 for v in w):
        raise ParameterError(f"region weights must be 3 non-negative numbers, got {weights}")
    if sum(w) <= 0:
        raise ParameterError("at least one region weight must be positive")
    return w


def combine_regions(dist: torch.Tensor, labels: torch.Tensor, weights) -> torch.Tensor:
    """Weighted mean of per-region averages of ``dist``, shape ``(n,)``.

    ``dist`` is ``(n, ch, h, w)``; ``labels`` is ``(n, 1, h, w)``. Weights are
    renormalized over the regions present in each image. If every present region
    has zero weight, the plain mean of ``dist`` is returned.
    """
    w = _check_weights(weights)
    if labels.shape[0] != dist.shape[0] or labels.shape[2:] != dist.shape[2:]:
        raise UsageError(f"mask {tuple(labels.shape)} does not cover map {tuple(dist.shape)}")
    out = []
    for i in range(dist.shape[0]):
        num = dist.new_zeros(())
        den = 0.0
        for region, weight in zip((EDGE, TEXTURE, SMOOTH), w):
            sel = (labels[i] == region).expand_as(dist[i])
            if weight == 0 or not sel.any():
                continue
            num = num + weight * dist[i][sel].mean()
            den += weight
        out.append(num / den if den > 0 else dist[i].mean())
    return torch.stack(out)


def weighted_psnr_3(sr: torch.Tensor, hr: torch.Tensor, weights=PSNR3_WEIGHTS,
                    mask: RegionMask | None = None) -> torch.Tensor:
    _same_shape(sr, hr)
    ls, lh = _luma_or_single(sr), _luma_or_single(hr)
    mask = mask or segment_regions(lh)
    diff = ls - lh
    return psnr_from_mse(combine_regions(diff * diff, mask.labels, weights))


def weighted_ssim_3(sr: torch.Tensor, hr: torch.Tensor, weights=SSIM3_WEIGHTS,
                    mask: RegionMask | None = None,
                    params: SsimParams = SsimParams()) -> torch.Tensor:
    """Region-weighted mean of the luminance SSIM map; the mask is cropped to the map."""
    _same_shape(sr, hr)
    ls, lh = _luma_or_single(sr), _luma_or_single(hr)
    mask = mask or segment_regions(lh)
    smap = ssim_map(ls, lh, params)
    return combine_regions(smap, mask.crop(params.win // 2).labels, weights)


def crop_border(image: torch.Tensor, border: int) -> torch.Tensor:
    if border <= 0:
        return image
    if min(image.shape[2:]) <= 2 * border:
        raise UsageError(f"cannot crop {border}px from image {tuple(image.shape[2:])}")
    return image[..., border:-border, border:-border]


def evaluate_pair(sr: torch.Tensor, hr: torch.Tensor, border: int = 0,
                  params: SsimParams = SsimParams()) -> dict[str, float]:
    """All report metrics for one ``(1, 3, h, w)`` pair on the [0, 255] scale."""
    _same_shape(sr, hr)
    sr = crop_border(sr.detach().to(torch.float64), border)
    hr = crop_border(hr.detach().to(torch.float64), border)
    ls, lh = luminance(sr), luminance(hr)
    mask = segment_regions(lh)
    feasible = max_scales(ls.shape[2], ls.shape[3], params.win)
    if feasible >= 1:
        ms_params = params
        if feasible < params.scales:
            log.warning("image %s supports only %d MS-SSIM scales", tuple(ls.shape[2:]), feasible)
            ms_params = SsimParams(params.win, params.sigma, params.k1, params.k2,
                                   params.data_range, feasible)
        ms = float(ms_ssim(ls, lh, ms_params)[0])
        ss = float(ssim_map(ls, lh, params).mean())
        ss3 = float(weighted_ssim_3(ls, lh, SSIM3_WEIGHTS, mask, params)[0])
    else:
        ms = ss = ss3 = math.nan
    return {
        "psnr": float(psnr(ls, lh)[0]),
        "ssim": ss,
        "ms_ssim": ms,
        "psnr3": float(weighted_psnr_3(ls, lh, PSNR3_WEIGHTS, mask)[0]),
        "ssim3": ss3,
    }


METRIC_COLUMNS = ("psnr", "ssim", "ms_ssim", "psnr3", "ssim3")


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))


@dataclass
class EvalReport:
    dataset: str
    scale: int
    rows: list[dict] = field(default_factory=list)

    def add(self, image: str, values: dict[str, float]) -> None:
        self.rows.append({"image": image, **values})

    def aggregate(self) -> dict[str, float]:
        if not self.rows:
            return {k: math.nan for k in METRIC_COLUMNS}
        cols = list(METRIC_COLUMNS) + (["flip"] if self.has_flip else [])
        return {k: math.fsum(r[k] for r in self.rows) / len(self.rows) for k in cols}

    @property
    def has_flip(self) -> bool:
        return bool(self.rows) and all("flip" in r for r in self.rows)

    def merge_flip(self, values: dict[str, float]) -> None:
        """Attach externally computed FLIP scores keyed by image id."""
        for row in self.rows:
            if row["image"] in values:
                row["flip"] = float(values[row["image"]])

    def to_csv(self) -> str:
        cols = ["image", *METRIC_COLUMNS] + (["flip"] if self.has_flip else [])
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for row in self.rows:
            writer.writerow([row["image"]] + [_fmt(row[c]) for c in cols[1:]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, dataset: str = "", scale: int = 0) -> "EvalReport":
        report = cls(dataset, scale)
        for row in csv.DictReader(io.StringIO(text)):
            image = row.pop("image")
            report.add(image, {k: float(v) for k, v in row.items()})
        return report

    def summary(self) -> dict:
        agg = {k: (_fmt(v) if math.isinf(v) else v) for k, v in self.aggregate().items()}
        return {"dataset": self.dataset, "scale": self.scale, "images": len(self.rows),
                "mean": agg}

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, allow_nan=True)

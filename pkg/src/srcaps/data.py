"""Image I/O, bicubic degradation and paired patch sampling.

Images are float tensors on the [0, 255] scale: ``(1, 3, H, W)`` when loaded,
``(3, h, w)`` inside patch pairs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterator

import numpy as np
import torch
from PIL import Image

from .errors import UsageError

log = logging.getLogger(__name__)

CUBIC_A = -0.5


def load_image(path) -> torch.Tensor:
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode != "RGB":
                if im.mode in ("L", "P", "RGBA"):
                    im = im.convert("RGB")
                else:
                    raise OSError(f"unsupported mode {im.mode}")
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read RGB image {path}: {exc}") from exc
    return torch.from_numpy(arr.copy()).permute(2, 0, 1).unsqueeze(0).to(torch.float32)


def to_uint8(image: torch.Tensor) -> np.ndarray:
    """``(1, 3, H, W)`` or ``(3, H, W)`` on [0, 255] -> ``(H, W, 3)`` uint8, rounded."""
    if image.dim() == 4:
        if image.shape[0] != 1:
            raise UsageError("to_uint8 takes a single image")
        image = image[0]
    arr = image.detach().to(torch.float64).clamp(0, 255).round().to(torch.uint8)
    return arr.permute(1, 2, 0).cpu().numpy()


def save_image(image: torch.Tensor, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image), mode="RGB").save(path, format="PNG")


def cubic(x: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    x = np.abs(x)
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def _as_fraction(factor) -> Fraction:
    f = Fraction(factor).limit_denominator(10_000) if not isinstance(factor, Fraction) else factor
    if f <= 0:
        raise UsageError(f"resize factor must be positive, got {factor}")
    return f


def resize_weights(in_len: int, factor, antialias: bool = True) -> np.ndarray:
    """``(out_len, in_len)`` interpolation matrix for one axis.

    Output sample i sits at input coordinate ``(i + 0.5) / factor - 0.5``; when
    shrinking with ``antialias`` the kernel is stretched by ``1 / factor``.
    Out-of-range taps are clamped to the nearest edge sample.
    """
    f = _as_fraction(factor)
    out_len = math.floor(in_len * f)
    if out_len < 1:
        raise UsageError(f"resizing {in_len}px by {f} gives an empty axis")
    scale = float(f)
    stretch = scale if (antialias and scale < 1) else 1.0
    support = 2.0 / stretch
    centers = (np.arange(out_len) + 0.5) / scale - 0.5
    first = np.floor(centers - support).astype(int)
    taps = int(math.ceil(2 * support)) + 2
    idx = first[:, None] + np.arange(taps)[None, :]
    w = stretch * cubic(stretch * (centers[:, None] - idx))
    w /= w.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 0, in_len - 1)
    mat = np.zeros((out_len, in_len))
    np.add.at(mat, (np.repeat(np.arange(out_len), taps), idx.ravel()), w.ravel())
    return mat


def bicubic_resize(image: torch.Tensor, factor, antialias: bool = True) -> torch.Tensor:
    """Separable cubic-convolution resize (a = -0.5), output clamped to [0, 255].

    Output size per axis is ``floor(size * factor)``.
    """
    f = _as_fraction(factor)
    if f == 1:
        return image.clone()
    squeeze = image.dim() == 3
    x = image.unsqueeze(0) if squeeze else image
    h, w = x.shape[-2:]
    wh = torch.from_numpy(resize_weights(h, f, antialias))
    ww = torch.from_numpy(resize_weights(w, f, antialias))
    out = torch.einsum("oh,nchw,pw->ncop", wh, x.to(torch.float64), ww)
    out = out.clamp(0, 255).to(image.dtype)
    return out[0] if squeeze else out


def degrade(hr: torch.Tensor, r: int) -> torch.Tensor:
    """LR counterpart of an HR image as it would be stored on disk (8-bit)."""
    return bicubic_resize(hr, Fraction(1, r)).round()


def mod_crop(image: torch.Tensor, r: int) -> torch.Tensor:
    h, w = image.shape[-2:]
    return image[..., : h - h % r, : w - w % r]


@dataclass(frozen=True)
class DatasetSpec:
    root: Path
    split: str = "train"
    scale: int = 4
    hr_dir: str = "HR"
    lr_dir: str | None = None  # defaults to LRx<scale>
    pattern: str = "*.png"

    @property
    def hr_path(self) -> Path:
        base = Path(self.root)
        flat = base / self.hr_dir
        return flat if flat.is_dir() and not (base / self.split).is_dir() else base / self.split / self.hr_dir

    @property
    def lr_path(self) -> Path:
        return self.hr_path.parent / (self.lr_dir or f"LRx{self.scale}")


@dataclass
class ImagePair:
    image_id: str
    hr: torch.Tensor  # (3, H, W)
    lr: torch.Tensor  # (3, H/r, W/r)


@dataclass
class PatchPair:
    hr: torch.Tensor
    lr: torch.Tensor
    image_id: str
    top: int
    left: int


def load_pairs(spec: DatasetSpec) -> list[ImagePair]:
    """Read HR images, pairing each with its stored LR file or a synthesized one.

    HR images are cropped to a multiple of the scale so ``LR * r == HR`` exactly.
    """
    hr_dir, lr_dir, r = spec.hr_path, spec.lr_path, spec.scale
    if not hr_dir.is_dir():
        raise FileNotFoundError(f"HR directory not found: {hr_dir}")
    files = sorted(hr_dir.glob(spec.pattern))
    if not files:
        raise FileNotFoundError(f"no images matching {spec.pattern} in {hr_dir}")
    have_lr = lr_dir.is_dir()
    if have_lr:
        lr_names = {p.name for p in lr_dir.glob(spec.pattern)}
        hr_names = {p.name for p in files}
        if lr_names != hr_names:
            raise UsageError(
                f"HR/LR filename mismatch in {hr_dir.parent}: only HR {sorted(hr_names - lr_names)}, "
                f"only LR {sorted(lr_names - hr_names)}")
    pairs = []
    for path in files:
        hr = mod_crop(load_image(path)[0], r)
        if have_lr:
            lr = load_image(lr_dir / path.name)[0]
            if tuple(lr.shape[1:]) != (hr.shape[1] // r, hr.shape[2] // r):
                raise UsageError(f"{path.name}: LR {tuple(lr.shape[1:])} is not HR "
                                 f"{tuple(hr.shape[1:])} / {r}")
        else:
            lr = degrade(hr, r)
        pairs.append(ImagePair(path.stem, hr, lr))
    return pairs


def sample_patch(pair: ImagePair, ps: int, r: int, rng: np.random.Generator) -> PatchPair:
    """Uniform random HR crop aligned to multiples of ``r`` plus the matching LR crop."""
    if ps % r:
        raise UsageError(f"patch size {ps} not divisible by scale {r}")
    _, h, w = pair.hr.shape
    if h < ps or w < ps:
        raise UsageError(f"{pair.image_id}: image {h}x{w} smaller than patch {ps}")
    top = r * int(rng.integers(0, (h - ps) // r + 1))
    left = r * int(rng.integers(0, (w - ps) // r + 1))
    lp = ps // r
    return PatchPair(pair.hr[:, top:top + ps, left:left + ps],
                     pair.lr[:, top // r:top // r + lp, left // r:left // r + lp],
                     pair.image_id, top, left)


def augment(patch: PatchPair, rng: np.random.Generator, enabled: bool = False) -> PatchPair:
    """Same random horizontal flip and 90-degree rotation applied to both images."""
    if not enabled:
        return patch
    hr, lr = patch.hr, patch.lr
    if rng.random() < 0.5:
        hr, lr = hr.flip(-1), lr.flip(-1)
    k = int(rng.integers(0, 4))
    if k:
        hr, lr = torch.rot90(hr, k, (-2, -1)), torch.rot90(lr, k, (-2, -1))
    return replace(patch, hr=hr.contiguous(), lr=lr.contiguous())


def eligible(pairs: list[ImagePair], ps: int) -> list[ImagePair]:
    keep = []
    for p in pairs:
        if min(p.hr.shape[1:]) < ps:
            log.warning("skipping %s: %s smaller than patch size %d", p.image_id,
                        tuple(p.hr.shape[1:]), ps)
        else:
            keep.append(p)
    return keep


def epoch_batches(pairs: list[ImagePair], ps: int, r: int, batch: int,
                  rng: np.random.Generator, augment_patches: bool = False
                  ) -> Iterator[tuple[torch.Tensor, torch.Tensor]]:
    """One pass over the images in seeded order, one random patch per image.

    Yields ``(lr, hr)`` batches shaped ``(N, 3, ps/r, ps/r)`` and ``(N, 3, ps, ps)``.
    """
    pool = eligible(pairs, ps)
    if not pool:
        raise UsageError(f"no training image is at least {ps}x{ps}")
    order = rng.permutation(len(pool))
    for start in range(0, len(order), batch):
        patches = [augment(sample_patch(pool[i], ps, r, rng), rng, augment_patches)
                   for i in order[start:start + batch]]
        yield (torch.stack([p.lr for p in patches]), torch.stack([p.hr for p in patches]))

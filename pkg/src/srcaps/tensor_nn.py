"""Dense tensor and layer primitives.

Feature maps are plain ``torch.Tensor`` objects laid out as
``(batch, channels, height, width)``; gradients come from torch's reverse-mode
tape. This module adds the shape/finite-value contracts on top, the
weight-normalized convolution used by every conv-based layer, the activation
menu and sub-pixel shuffling.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, DegenerateDirectionError, NumericError, UsageError

ACTIVATIONS = ("hardswish", "leakyrelu", "mish", "prelu", "relu", "tanhexp")


def check_tensor4(x: torch.Tensor, name: str = "input") -> torch.Tensor:
    if not isinstance(x, torch.Tensor):
        raise UsageError(f"{name} must be a torch.Tensor, got {type(x).__name__}")
    if x.dim() != 4:
        raise UsageError(f"{name} must be rank 4 (n, ch, h, w), got shape {tuple(x.shape)}")
    if min(x.shape) <= 0:
        raise UsageError(f"{name} has an empty dimension: {tuple(x.shape)}")
    return x


def same_padding(k: int) -> int:
    if k % 2 == 0:
        raise ConfigurationError(f"'same' padding needs an odd kernel size, got k={k}")
    return (k - 1) // 2


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None,
           stride: int = 1, padding: int = 0) -> torch.Tensor:
    """2-D cross-correlation with explicit shape and finiteness checks."""
    check_tensor4(x)
    if weight.dim() != 4:
        raise ConfigurationError(f"kernel must be (out_ch, in_ch, k, k), got {tuple(weight.shape)}")
    out_ch, in_ch, kh, kw = weight.shape
    if x.shape[1] != in_ch:
        raise ConfigurationError(
            f"input has {x.shape[1]} channels but kernel expects in_ch={in_ch}")
    if stride < 1 or padding < 0:
        raise ConfigurationError(f"invalid stride={stride} / padding={padding}")
    oh = conv_output_size(x.shape[2], kh, stride, padding)
    ow = conv_output_size(x.shape[3], kw, stride, padding)
    if oh < 1 or ow < 1:
        raise ConfigurationError(
            f"input {tuple(x.shape[2:])} too small for kernel {kh}x{kw} with padding {padding}")
    if not torch.isfinite(weight).all():
        raise NumericError("convolution kernel contains non-finite values")
    return F.conv2d(x, weight, bias, stride=stride, padding=padding)


def weight_normalize(v: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    """Effective kernel ``g * v / ||v||`` with the norm taken per output channel."""
    norm = v.flatten(1).norm(dim=1)
    if (norm == 0).any():
        bad = torch.nonzero(norm == 0).flatten().tolist()
        raise DegenerateDirectionError(f"zero kernel direction for output channel(s) {bad}")
    return v * (g / norm).view(-1, *([1] * (v.dim() - 1)))


class WNConv2d(nn.Module):
    """Convolution reparameterized as gain times unit direction.

    ``v`` is drawn uniformly in +-sqrt(1/(in_ch*k*k)) and ``g`` starts at
    ``||v||`` so the effective kernel equals ``v`` at step 0.
    """

    def __init__(self, in_ch: int, out_ch: int, k: int, stride: int = 1,
                 padding: int | str = "same", bias: bool = True):
        super().__init__()
        if min(in_ch, out_ch, k, stride) < 1:
            raise ConfigurationError(
                f"conv dims must be positive: in={in_ch} out={out_ch} k={k} st={stride}")
        self.in_ch, self.out_ch, self.k, self.stride = in_ch, out_ch, k, stride
        self.padding = same_padding(k) if padding == "same" else int(padding)
        bound = math.sqrt(1.0 / (in_ch * k * k))
        v = torch.empty(out_ch, in_ch, k, k).uniform_(-bound, bound)
        self.v = nn.Parameter(v)
        self.g = nn.Parameter(v.flatten(1).norm(dim=1).clone())
        self.bias = nn.Parameter(torch.zeros(out_ch)) if bias else None

    @property
    def weight(self) -> torch.Tensor:
        return weight_normalize(self.v, self.g)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def zero_(self) -> "WNConv2d":
        """Make the effective kernel and bias exactly zero (direction kept)."""
        with torch.no_grad():
            self.g.zero_()
            if self.bias is not None:
                self.bias.zero_()
        return self

    def extra_repr(self) -> str:
        return f"{self.in_ch}, {self.out_ch}, k={self.k}, stride={self.stride}, padding={self.padding}"


def _tanhexp(x: torch.Tensor) -> torch.Tensor:
    # exp overflows for large x; tanh saturates long before that.
    return x * torch.tanh(torch.exp(x.clamp(max=20.0)))


def activation(x: torch.Tensor, kind: str, slope: float | torch.Tensor = 0.01) -> torch.Tensor:
    """Elementwise activation by name.

    ``slope`` is the negative-side slope for ``leakyrelu`` and ``prelu``.
    ReLU-family subgradients at 0 are 0 (torch convention).
    """
    kind = kind.lower()
    if kind == "relu":
        return F.relu(x)
    if kind == "leakyrelu":
        return F.leaky_relu(x, float(slope))
    if kind == "prelu":
        w = slope if isinstance(slope, torch.Tensor) else torch.tensor([float(slope)], dtype=x.dtype)
        return F.prelu(x, w)
    if kind == "mish":
        return F.mish(x)
    if kind == "hardswish":
        return F.hardswish(x)
    if kind == "tanhexp":
        return _tanhexp(x)
    raise ConfigurationError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


class Activation(nn.Module):
    def __init__(self, kind: str = "relu"):
        super().__init__()
        kind = kind.lower()
        if kind not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")
        self.kind = kind
        # Single shared slope, initialized like torch's PReLU.
        self.slope = nn.Parameter(torch.tensor([0.25])) if kind == "prelu" else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.slope is not None:
            return activation(x, self.kind, self.slope.to(x.dtype))
        return activation(x, self.kind)

    def extra_repr(self) -> str:
        return self.kind


def pixel_shuffle(x: torch.Tensor, r: int) -> torch.Tensor:
    """Rearrange ``(n, c*r*r, h, w)`` into ``(n, c, r*h, r*w)``.

    Channel ``c*r*r + dy*r + dx`` at ``(y, x)`` lands on channel ``c`` at
    ``(r*y + dy, r*x + dx)``.
    """
    check_tensor4(x)
    if r < 1 or x.shape[1] % (r * r):
        raise ConfigurationError(f"channels ({x.shape[1]}) not divisible by r^2 (r={r})")
    return F.pixel_shuffle(x, r)


def pixel_unshuffle(x: torch.Tensor, r: int) -> torch.Tensor:
    check_tensor4(x)
    if r < 1 or x.shape[2] % r or x.shape[3] % r:
        raise ConfigurationError(f"spatial dims {tuple(x.shape[2:])} not divisible by r={r}")
    return F.pixel_unshuffle(x, r)


def backward(loss: torch.Tensor, retain_graph: bool = False) -> None:
    """Populate ``.grad`` on every leaf reachable from a scalar ``loss``.

    Repeated calls accumulate into existing gradients; pass
    ``retain_graph=True`` to run the same tape more than once.
    """
    if loss.numel() != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    loss.backward(retain_graph=retain_graph)

"""SRCaps network: head conv, residual dense capsule blocks, trailing conv, UPNet."""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields

import torch
import torch.nn as nn

from .capsules import RDCB
from .errors import ConfigurationError, UsageError
from .tensor_nn import ACTIVATIONS, Activation, WNConv2d, check_tensor4, pixel_shuffle

log = logging.getLogger(__name__)

SCALES = (2, 3, 4)


@dataclass
class ModelConfig:
    B: int = 7
    L: int = 3
    c: int = 4
    F: int = 128
    k: int = 3
    st: int = 1
    p: str = "same"
    act: str = "relu"
    res_scale: float = 0.25
    sq: float = 1.0
    r: int = 4
    in_ch: int = 3
    out_ch: int = 3
    share_across_inputs: bool = True
    use_squash: bool = True
    use_act: bool = True

    def problems(self) -> list[str]:
        out = []
        for name in ("B", "L", "c", "F", "k", "st", "in_ch", "out_ch"):
            if getattr(self, name) < 1:
                out.append(f"{name}={getattr(self, name)} must be >= 1")
        if self.p != "same":
            out.append(f"p={self.p!r}: only 'same' padding keeps the residual wiring valid")
        if self.k % 2 == 0:
            out.append(f"k={self.k} must be odd for 'same' padding")
        if self.st != 1:
            out.append(f"st={self.st}: only stride 1 keeps the residual wiring valid")
        if self.act.lower() not in ACTIVATIONS:
            out.append(f"act={self.act!r} not in {ACTIVATIONS}")
        if not 0 <= self.res_scale <= 1:
            out.append(f"res_scale={self.res_scale} must lie in [0, 1]")
        if self.sq <= 0:
            out.append(f"sq={self.sq} must be > 0")
        if self.r not in SCALES:
            out.append(f"r={self.r} must be one of {SCALES}")
        return out

    def validate(self) -> "ModelConfig":
        problems = self.problems()
        if problems:
            raise ConfigurationError("invalid model config: " + "; ".join(problems))
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ModelSummary:
    total: int
    per_module: dict[str, int] = field(default_factory=dict)
    receptive_field: float = 0.0  # in LR pixels

    def __str__(self) -> str:
        lines = [f"{name:<10} {n:>12,}" for name, n in self.per_module.items()]
        lines.append(f"{'total':<10} {self.total:>12,}")
        lines.append(f"receptive field ~{self.receptive_field:.1f} LR px")
        return "\n".join(lines)


class UPNet(nn.Module):
    """Sub-pixel upsampler: [conv F->s^2 F, shuffle(s), act] per stage, then conv F->out."""

    def __init__(self, F: int, r: int, k: int = 3, act: str = "relu", out_ch: int = 3):
        super().__init__()
        if r not in SCALES:
            raise ConfigurationError(f"unsupported scale r={r}; expected one of {SCALES}")
        self.F, self.r = F, r
        self.stages = [2, 2] if r == 4 else [r]
        self.convs = nn.ModuleList(WNConv2d(F, s * s * F, k) for s in self.stages)
        self.acts = nn.ModuleList(Activation(act) for _ in self.stages)
        self.out = WNConv2d(F, out_ch, k)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_tensor4(x)
        if x.shape[1] != self.F:
            raise ConfigurationError(f"UPNet expects {self.F} channels, got {x.shape[1]}")
        for s, conv, act in zip(self.stages, self.convs, self.acts):
            x = act(pixel_shuffle(conv(x), s))
        return self.out(x)


class SRCaps(nn.Module):
    """Image in, image out; both on the [0, 255] scale.

    Values are divided by 255 on entry and multiplied back on exit. The output
    is clamped to [0, 255] only in eval mode so training gradients stay intact.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config.validate()
        cfg = config
        self.head = WNConv2d(cfg.in_ch, cfg.F, cfg.k, cfg.st, cfg.p)
        self.head_act = Activation(cfg.act)
        self.blocks = nn.ModuleList(
            RDCB(cfg.F, cfg.L, cfg.c, cfg.k, cfg.st, cfg.p, cfg.act, cfg.res_scale, cfg.sq,
                 cfg.share_across_inputs, cfg.use_squash, cfg.use_act)
            for _ in range(cfg.B))
        self.trunk_out = WNConv2d(cfg.F, cfg.F, cfg.k, cfg.st, cfg.p)
        self.upnet = UPNet(cfg.F, cfg.r, cfg.k, cfg.act, cfg.out_ch)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """LR-space features fed to the UPNet (input on the [0, 1] scale)."""
        f0 = self.head_act(self.head(x))
        h = f0
        for block in self.blocks:
            h = block(h)
        return self.trunk_out(h) + f0

    def forward(self, lr: torch.Tensor) -> torch.Tensor:
        check_tensor4(lr, "lr image")
        cfg = self.config
        if lr.shape[1] != cfg.in_ch:
            raise UsageError(f"expected {cfg.in_ch}-channel input, got {lr.shape[1]}")
        if min(lr.shape[2:]) < cfg.k:
            raise UsageError(f"input {tuple(lr.shape[2:])} smaller than kernel size {cfg.k}")
        sr = self.upnet(self.features(lr / 255.0)) * 255.0
        if not self.training:
            sr = sr.clamp(0.0, 255.0)
        return sr

    def named_parameter_list(self) -> list[tuple[str, nn.Parameter]]:
        """Parameters in declaration order; the checkpoint layout follows this."""
        return list(self.named_parameters())

    def summary(self) -> ModelSummary:
        parts = OrderedDict()
        for name, child in self.named_children():
            parts[name] = sum(p.numel() for p in child.parameters())
        cfg = self.config
        # head + B*L capsule layers + trailing conv in LR space, UPNet convs in HR space.
        rf = 1 + (cfg.k - 1) * (2 + cfg.B * cfg.L)
        scale = 1
        for s in self.upnet.stages:
            rf += (cfg.k - 1) / scale
            scale *= s
        rf += (cfg.k - 1) / scale
        return ModelSummary(sum(parts.values()), dict(parts), float(rf))


def build(config: ModelConfig | None = None, seed: int = 0) -> SRCaps:
    """Construct a model with parameters drawn from a private generator seeded by ``seed``."""
    config = config or ModelConfig()
    config.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = SRCaps(config)
    log.info("built SRCaps with %d parameters", model.summary().total)
    return model

"""Convolutional capsules without routing, and the residual dense capsule block.

Capsule tensors are 5-D: ``(batch, types, dims, height, width)``. A plain
feature map with ``F`` channels enters a block as a single capsule type with
``F`` dims.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigurationError, ParameterError
from .tensor_nn import Activation, WNConv2d, check_tensor4, conv2d

# Guards the gradient of ||s|| at s = 0; far below float32 resolution of ||s||^2.
_NORM_EPS = 1e-30


@dataclass(frozen=True)
class CapsuleState:
    """View of a 4-D feature map as ``types`` capsules of ``dims`` each."""

    base: torch.Tensor
    types: int
    dims: int

    def __post_init__(self):
        check_tensor4(self.base, "capsule base")
        if self.types < 1 or self.dims < 1:
            raise ConfigurationError(f"capsule types/dims must be >= 1, got {self.types}/{self.dims}")
        if self.types * self.dims != self.base.shape[1]:
            raise ConfigurationError(
                f"{self.types} types x {self.dims} dims != {self.base.shape[1]} channels")

    @classmethod
    def from_poses(cls, poses: torch.Tensor) -> "CapsuleState":
        n, c, d, h, w = poses.shape
        return cls(poses.reshape(n, c * d, h, w), c, d)

    @property
    def poses(self) -> torch.Tensor:
        n, _, h, w = self.base.shape
        return self.base.view(n, self.types, self.dims, h, w)


def squash(s: torch.Tensor, sq: float = 1.0, dim: int = -1) -> torch.Tensor:
    """Shrink vectors along ``dim`` to norm ``|s|^2 / (sq + |s|^2)`` keeping direction.

    ``sq = 1`` is the classic capsule squash; the zero vector maps to zero.
    """
    if sq <= 0:
        raise ParameterError(f"squashing constant must be positive, got {sq}")
    sq_norm = (s * s).sum(dim=dim, keepdim=True)
    # |s|^2/(sq+|s|^2) * s/|s| == s * |s| / (sq + |s|^2)
    return s * torch.sqrt(sq_norm + _NORM_EPS) / (sq + sq_norm)


class ConvCapsuleLayer(nn.Module):
    """Convolutional capsule layer with constant coupling 1/M.

    Every input capsule type ``i`` casts a vote for every output type ``j`` by
    convolving its pose map. With ``share_across_inputs=True`` (default) one
    kernel bank ``d_in -> M*d_out`` is shared by all input types, so the vote
    transform depends only on ``j``; otherwise each ``(i, j)`` pair owns its
    kernel. Votes are summed with coefficient 1/M and squashed per position.
    """

    def __init__(self, in_types: int, in_dims: int, out_types: int, out_dims: int,
                 k: int = 3, stride: int = 1, padding: int | str = "same",
                 sq: float = 1.0, share_across_inputs: bool = True, use_squash: bool = True):
        super().__init__()
        if min(in_types, in_dims, out_types, out_dims) < 1:
            raise ConfigurationError("capsule counts and dims must be >= 1")
        if sq <= 0:
            raise ParameterError(f"squashing constant must be positive, got {sq}")
        self.in_types, self.in_dims = in_types, in_dims
        self.out_types, self.out_dims = out_types, out_dims
        self.sq = sq
        self.share_across_inputs = share_across_inputs
        self.use_squash = use_squash
        in_ch = in_dims if share_across_inputs else in_types * in_dims
        self.conv = WNConv2d(in_ch, out_types * out_dims, k, stride, padding)

    @property
    def coupling(self) -> float:
        return 1.0 / self.out_types

    def vote_kernel(self, i: int, j: int) -> torch.Tensor:
        """Effective ``(d_out, d_in, k, k)`` kernel mapping input type i to output type j."""
        w = self.conv.weight
        rows = slice(j * self.out_dims, (j + 1) * self.out_dims)
        if self.share_across_inputs:
            return w[rows]
        return w[rows, i * self.in_dims:(i + 1) * self.in_dims]

    def vote_bias(self, j: int) -> torch.Tensor:
        return self.conv.bias[j * self.out_dims:(j + 1) * self.out_dims]

    def forward(self, x: CapsuleState) -> CapsuleState:
        if x.types != self.in_types or x.dims != self.in_dims:
            raise ConfigurationError(
                f"layer expects {self.in_types}x{self.in_dims} capsules, got {x.types}x{x.dims}")
        conv = self.conv
        # every vote carries the bias of its output type: n_in copies per j
        bias = conv.bias * self.in_types if conv.bias is not None else None
        if self.share_across_inputs:
            # sum_i conv(x_i, W_j) == conv(sum_i x_i, W_j)
            s = conv2d(x.poses.sum(dim=1), conv.weight, bias, conv.stride, conv.padding)
        else:
            s = conv2d(x.base, conv.weight, bias, conv.stride, conv.padding)
        s = s * self.coupling
        n, _, h, w = s.shape
        poses = s.view(n, self.out_types, self.out_dims, h, w)
        if self.use_squash:
            poses = squash(poses, self.sq, dim=2)
        return CapsuleState.from_poses(poses)


class RDCB(nn.Module):
    """Residual dense capsule block.

    ``L`` capsule layers (each followed by ``act`` and a residual add of its
    input) are concatenated, fused by a 1x1 convolution back to ``F`` channels,
    scaled by ``res_scale`` and added to the block input.
    """

    def __init__(self, F: int, L: int = 3, c: int = 4, k: int = 3, stride: int = 1,
                 padding: int | str = "same", act: str = "relu", res_scale: float = 0.25,
                 sq: float = 1.0, share_across_inputs: bool = True,
                 use_squash: bool = True, use_act: bool = True):
        super().__init__()
        problems = []
        if F < 1:
            problems.append(f"F={F} must be >= 1")
        if L < 1:
            problems.append(f"L={L} must be >= 1")
        if c < 1:
            problems.append(f"c={c} must be >= 1")
        if not 0 <= res_scale <= 1:
            problems.append(f"res_scale={res_scale} must lie in [0, 1]")
        if stride != 1:
            problems.append(f"stride={stride}: residual wiring needs stride 1")
        if problems:
            raise ConfigurationError("; ".join(problems))
        self.F, self.L, self.c = F, L, c
        self.res_scale = res_scale
        self.use_act = use_act
        self.layers = nn.ModuleList(
            ConvCapsuleLayer(1 if i == 0 else c, F, c, F, k, stride, padding, sq,
                             share_across_inputs, use_squash)
            for i in range(L))
        self.acts = nn.ModuleList(Activation(act) for _ in range(L))
        self.fusion = WNConv2d(L * c * F, F, 1, 1, 0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_tensor4(x)
        if x.shape[1] != self.F:
            raise ConfigurationError(f"block expects {self.F} channels, got {x.shape[1]}")
        state = CapsuleState(x, 1, self.F)
        outputs = []
        for layer, act in zip(self.layers, self.acts):
            out = layer(state).poses
            if self.use_act:
                out = act(out)
            # a single-type input broadcasts across the c output types
            out = out + state.poses
            state = CapsuleState.from_poses(out)
            outputs.append(state.base)
        fused = self.fusion(torch.cat(outputs, dim=1))
        return x + self.res_scale * fused

"""Per-vertex network primitives: shared linear maps, instance norm, AdaIN.

All operations act on feature maps shaped (..., channels, num_vertices) and
are pure tensor-to-tensor functions; statistics are always taken over the
vertex axis of a single sample, never across a batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

EPS_DEFAULT = 1e-5


@dataclass(frozen=True)
class StyleStats:
    """Channel-wise mean/std pair extracted from a style mesh's features.

    mean and std have shape (..., channels); std entries are strictly
    positive (style_stats produces sqrt(var + eps) >= sqrt(eps)).
    """

    mean: torch.Tensor
    std: torch.Tensor

    def __post_init__(self):
        if self.mean.shape != self.std.shape:
            raise ValueError(
                f"mean/std shape mismatch: {tuple(self.mean.shape)} vs {tuple(self.std.shape)}"
            )
        if not bool(torch.all(self.std > 0)):
            raise ValueError("style std entries must be strictly positive")

    @property
    def channels(self) -> int:
        return self.mean.shape[-1]


def pointwise_linear(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """Shared affine map applied to every vertex column (a 1x1 convolution).

    x: (..., in_channels, V); weight: (out_channels, in_channels); bias: (out_channels,).
    """
    if x.shape[-2] != weight.shape[1]:
        raise ValueError(
            f"channel mismatch: input has {x.shape[-2]}, weight expects {weight.shape[1]}"
        )
    return weight @ x + bias[:, None]


def instance_norm(x: torch.Tensor, eps: float = EPS_DEFAULT) -> torch.Tensor:
    """Standardize each channel over the vertex axis of one sample.

    Uses population variance; output per channel has mean ~0 and
    variance ~1 (up to the eps term).
    """
    if x.shape[-1] < 2:
        raise ValueError(f"instance_norm needs >= 2 vertices, got {x.shape[-1]}")
    mean = x.mean(dim=-1, keepdim=True)
    var = x.var(dim=-1, unbiased=False, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps)


def style_stats(x: torch.Tensor, eps: float = EPS_DEFAULT) -> StyleStats:
    """Channel mean and sqrt(population variance + eps) over the vertex axis."""
    if x.shape[-1] < 2:
        raise ValueError(f"style_stats needs >= 2 vertices, got {x.shape[-1]}")
    mean = x.mean(dim=-1)
    std = torch.sqrt(x.var(dim=-1, unbiased=False) + eps)
    return StyleStats(mean=mean, std=std)


def ada_in(x: torch.Tensor, style: StyleStats, eps: float = EPS_DEFAULT) -> torch.Tensor:
    """Re-center and re-scale normalized features with the style's statistics.

    No learnable parameters: output = style.std * instance_norm(x) + style.mean,
    so the output's channel statistics match the style's.
    """
    if x.shape[-2] != style.channels:
        raise ValueError(
            f"channel mismatch: input has {x.shape[-2]}, style has {style.channels}"
        )
    return style.std[..., :, None] * instance_norm(x, eps) + style.mean[..., :, None]


class PointwiseLinear(nn.Module):
    """Parameter container for pointwise_linear with uniform fan-in init."""

    def __init__(self, in_channels, out_channels, dtype=torch.float32, generator=None):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        weight = torch.empty(out_channels, in_channels, dtype=dtype)
        bias = torch.empty(out_channels, dtype=dtype)
        bound = 1.0 / in_channels**0.5
        weight.uniform_(-bound, bound, generator=generator)
        bias.uniform_(-bound, bound, generator=generator)
        self.weight = nn.Parameter(weight)
        self.bias = nn.Parameter(bias)

    def forward(self, x):
        return pointwise_linear(x, self.weight, self.bias)


class AdaptiveResBlock(nn.Module):
    """Channel-preserving residual block with style-conditioned normalization.

    The residual branch applies [AdaIN -> ReLU -> pointwise linear] twice;
    the skip connection is a plain addition, so zeroed branch weights make
    the block an exact identity.
    """

    def __init__(self, channels, eps=EPS_DEFAULT, dtype=torch.float32, generator=None):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.linear1 = PointwiseLinear(channels, channels, dtype=dtype, generator=generator)
        self.linear2 = PointwiseLinear(channels, channels, dtype=dtype, generator=generator)

    def forward(self, x, style: StyleStats):
        if x.shape[-2] != self.channels:
            raise ValueError(
                f"channel mismatch: input has {x.shape[-2]}, block expects {self.channels}"
            )
        h = self.linear1(torch.relu(ada_in(x, style, self.eps)))
        h = self.linear2(torch.relu(ada_in(h, style, self.eps)))
        return x + h

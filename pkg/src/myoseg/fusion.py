"""Feature fusion blocks for combining per-modality branches with the main branch.

Two decoder-level strategies are implemented. The channel-attention block
concatenates the four incoming feature maps, squeezes them to a per-channel
descriptor by global average pooling, passes that through a two-layer 1x1-conv
gate (ReLU then sigmoid) and rescales every channel of the concatenation by its
gate before a 3x3 conv + ReLU mixes the result down to the output width. The
gate values live strictly inside (0, 1), so no channel is ever fully switched
off or passed through untouched, but informative channels can dominate.

The sum-product-max block is the fixed-rule baseline: element-wise sum, product
and maximum of the three modality maps, concatenated with the main-branch map
and mixed by a single 1x1 conv with no activation.

Input order is fixed everywhere: (bssfp, lge, t2, main).
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .data import MultiModalityImage
from .errors import ParameterError, ShapeMismatchError


def _check_inputs(feats, in_channels) -> None:
    if len(feats) != len(in_channels):
        raise ShapeMismatchError(f"expected {len(in_channels)} feature maps, got {len(feats)}")
    ref = feats[0]
    for f, c in zip(feats, in_channels):
        if f.ndim != 4 or f.shape[1] != c:
            raise ShapeMismatchError(
                f"feature map has shape {tuple(f.shape)}, expected channels {c}"
            )
        if f.shape[0] != ref.shape[0] or f.shape[-2:] != ref.shape[-2:]:
            raise ShapeMismatchError("feature maps must share batch and spatial dims")


class ChannelAttentionFusion(nn.Module):
    """Gated fusion of (bssfp, lge, t2, main) feature maps at one decoder level."""

    def __init__(self, in_channels: tuple[int, int, int, int], out_channels: int, reduction: int = 4):
        super().__init__()
        if len(in_channels) != 4 or any(c < 1 for c in in_channels):
            raise ParameterError(f"in_channels must be four positive ints, got {in_channels}")
        if reduction < 1:
            raise ParameterError(f"reduction must be >= 1, got {reduction}")
        total = sum(in_channels)
        squeezed = total // reduction
        if squeezed < 1:
            raise ParameterError(
                f"reduction {reduction} leaves no channels ({total} inputs)"
            )
        self.in_channels = tuple(in_channels)
        self.out_channels = out_channels
        self.reduction = reduction
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.gate = nn.Sequential(
            nn.Conv2d(total, squeezed, kernel_size=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(squeezed, total, kernel_size=1),
            nn.Sigmoid(),
        )
        self.mix = nn.Conv2d(total, out_channels, kernel_size=3, padding=1)
        self.act = nn.ReLU(inplace=True)

    def channel_gates(self, feats) -> torch.Tensor:
        """The per-channel attention values, shape (B, sum(in_channels), 1, 1)."""
        _check_inputs(feats, self.in_channels)
        z = torch.cat(list(feats), dim=1)
        return self.gate(self.pool(z))

    def forward(self, feats) -> torch.Tensor:
        _check_inputs(feats, self.in_channels)
        z = torch.cat(list(feats), dim=1)
        gates = self.gate(self.pool(z))
        return self.act(self.mix(gates * z))


class SumProductMaxFusion(nn.Module):
    """Fixed-rule fusion baseline; the three modality maps must share one width."""

    def __init__(self, in_channels: tuple[int, int, int, int], out_channels: int):
        super().__init__()
        if len(in_channels) != 4 or any(c < 1 for c in in_channels):
            raise ParameterError(f"in_channels must be four positive ints, got {in_channels}")
        c1, c2, c3, c_main = in_channels
        if not (c1 == c2 == c3):
            raise ParameterError(
                f"modality maps must share a channel count for element-wise rules, got {in_channels[:3]}"
            )
        self.in_channels = tuple(in_channels)
        self.out_channels = out_channels
        self.mix = nn.Conv2d(3 * c1 + c_main, out_channels, kernel_size=1)

    @staticmethod
    def fuse_channels(f1: torch.Tensor, f2: torch.Tensor, f3: torch.Tensor) -> torch.Tensor:
        """Concatenated (sum, product, max) of three equally shaped maps."""
        if f1.shape != f2.shape or f1.shape != f3.shape:
            raise ShapeMismatchError("element-wise fusion needs identical shapes")
        return torch.cat([f1 + f2 + f3, f1 * f2 * f3, torch.maximum(torch.maximum(f1, f2), f3)], dim=1)

    def forward(self, feats) -> torch.Tensor:
        _check_inputs(feats, self.in_channels)
        f1, f2, f3, f_main = feats
        return self.mix(torch.cat([self.fuse_channels(f1, f2, f3), f_main], dim=1))


def input_level_fuse(image: MultiModalityImage) -> np.ndarray:
    """Early fusion for single-network baselines: stack the modalities as channels."""
    return image.stacked()

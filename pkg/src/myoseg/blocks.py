"""Shared convolutional building blocks for the segmentation networks.

All networks in the package are small 2D U-Net style encoder/decoders built
from the same pieces: double 3x3 conv blocks with instance normalization,
max-pool downsampling and transposed-conv upsampling. Channel width doubles
per level starting from ``base``.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .data import debug_checks_enabled
from .errors import ShapeMismatchError, ValidationError


def conv_block(in_ch: int, out_ch: int) -> nn.Sequential:
    """Two 3x3 conv + InstanceNorm + ReLU stages."""
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel_size=3, padding=1),
        nn.InstanceNorm2d(out_ch, affine=True),
        nn.ReLU(inplace=True),
        nn.Conv2d(out_ch, out_ch, kernel_size=3, padding=1),
        nn.InstanceNorm2d(out_ch, affine=True),
        nn.ReLU(inplace=True),
    )


def _check_finite(x: torch.Tensor, where: str) -> None:
    if debug_checks_enabled() and not torch.isfinite(x).all():
        raise ValidationError(f"non-finite activations after {where}")


class UnetEncoder(nn.Module):
    """Feature pyramid: ``levels`` conv blocks with max-pooling in between.

    ``forward`` returns the per-level features from shallow to deep, with
    channels ``base * 2**i`` at resolution ``1 / 2**i``.
    """

    def __init__(self, in_channels: int, base: int = 16, levels: int = 4):
        super().__init__()
        if levels < 2:
            raise ValidationError(f"need at least 2 levels, got {levels}")
        self.in_channels = in_channels
        self.base = base
        self.levels = levels
        blocks = []
        ch = in_channels
        for i in range(levels):
            out = base * (2 ** i)
            blocks.append(conv_block(ch, out))
            ch = out
        self.blocks = nn.ModuleList(blocks)
        self.pool = nn.MaxPool2d(2)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeMismatchError(
                f"expected (B,{self.in_channels},H,W), got {tuple(x.shape)}"
            )
        side = 2 ** (self.levels - 1)
        if x.shape[-2] % side or x.shape[-1] % side:
            raise ShapeMismatchError(
                f"spatial size {tuple(x.shape[-2:])} must be divisible by {side}"
            )
        feats = []
        for i, block in enumerate(self.blocks):
            if i > 0:
                x = self.pool(x)
            x = block(x)
            _check_finite(x, f"encoder level {i}")
            feats.append(x)
        return feats


class UnetDecoder(nn.Module):
    """Decoder half with skip connections; emits every intermediate feature map.

    ``skip_multiplier`` is the number of encoders whose per-level features were
    concatenated into each skip (the anatomy network shares one decoder across
    three modality encoders). When it is above one, a 1x1 fuse convolution
    first reduces the concatenated bottleneck back to the nominal width.

    ``forward`` takes the skip list (shallow to deep, deepest acting as the
    bottleneck) and returns the decoder features deep to shallow; the last
    entry has ``base`` channels at full resolution and feeds the task head.
    """

    def __init__(self, base: int = 16, levels: int = 4, skip_multiplier: int = 1):
        super().__init__()
        if skip_multiplier < 1:
            raise ValidationError(f"skip_multiplier must be >= 1, got {skip_multiplier}")
        self.base = base
        self.levels = levels
        self.skip_multiplier = skip_multiplier
        top = base * (2 ** (levels - 1))
        if skip_multiplier > 1:
            self.bottleneck_fuse = nn.Sequential(
                nn.Conv2d(top * skip_multiplier, top, kernel_size=1),
                nn.InstanceNorm2d(top, affine=True),
                nn.ReLU(inplace=True),
            )
        else:
            self.bottleneck_fuse = nn.Identity()
        ups, blocks = [], []
        for i in range(levels - 2, -1, -1):
            ch = base * (2 ** i)
            ups.append(nn.ConvTranspose2d(ch * 2, ch, kernel_size=2, stride=2))
            blocks.append(conv_block(ch + ch * skip_multiplier, ch))
        self.ups = nn.ModuleList(ups)
        self.blocks = nn.ModuleList(blocks)

    def forward(self, skips: list[torch.Tensor]) -> list[torch.Tensor]:
        if len(skips) != self.levels:
            raise ShapeMismatchError(f"expected {self.levels} skip levels, got {len(skips)}")
        x = self.bottleneck_fuse(skips[-1])
        feats = []
        for step, (up, block) in enumerate(zip(self.ups, self.blocks)):
            level = self.levels - 2 - step
            x = up(x)
            skip = skips[level]
            if skip.shape[-2:] != x.shape[-2:]:
                raise ShapeMismatchError(
                    f"skip level {level} is {tuple(skip.shape[-2:])}, upsampled is "
                    f"{tuple(x.shape[-2:])}"
                )
            x = block(torch.cat([x, skip], dim=1))
            _check_finite(x, f"decoder level {level}")
            feats.append(x)
        return feats

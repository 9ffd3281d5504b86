"""Anatomical structure segmentation: locate the LV epicardial region.

The network has one encoder per modality and a single shared decoder; the
per-level skip connections concatenate the features of all encoders, so the
decoder always sees every sequence. A sigmoid head produces the binary LV map.

Training variants:

* ``full``     - three encoders, loss regularized by the frozen shape prior;
* ``wo-dae``   - the same network trained with the plain Dice loss;
* ``bssfp-unet`` - a single-encoder U-Net on the cine channel only (the
  conventional one-sequence baseline).

At inference the ``full`` variant also repairs the probability map by a pass
through the auto-encoder before thresholding (the prior is used both as a
training constraint and as a test-time filter).
"""

from __future__ import annotations

import time
import warnings

import numpy as np
import torch
import torch.nn as nn
from scipy import ndimage

from .blocks import UnetDecoder, UnetEncoder
from .data import MODALITIES, BinaryMask, MultiModalityImage, lv_mask_from_labels, mask_apply
from .dae import DenoisingAutoencoder, dae_forward
from .errors import ConfigError, ShapeMismatchError
from .losses import LossWeights, assn_total_loss
from .metrics import dice_score
from .trainer import (
    TrainConfig,
    TrainLog,
    build_optimizer,
    check_finite_loss,
    epoch_batches,
    set_determinism,
)

ANATOMY_VARIANTS = ("full", "wo-dae", "bssfp-unet")


class AnatomyNet(nn.Module):
    """Multi-encoder, shared-decoder U-Net with a sigmoid LV head."""

    def __init__(self, modalities=MODALITIES, base: int = 16, levels: int = 4,
                 image_size: int = 128):
        super().__init__()
        if not modalities:
            raise ConfigError("need at least one modality")
        self.modalities = tuple(modalities)
        self.base = base
        self.levels = levels
        self.image_size = image_size
        self.encoders = nn.ModuleList(
            [UnetEncoder(1, base=base, levels=levels) for _ in self.modalities]
        )
        self.decoder = UnetDecoder(base=base, levels=levels, skip_multiplier=len(self.modalities))
        self.head = nn.Conv2d(base, 1, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != len(self.modalities):
            raise ShapeMismatchError(
                f"expected (B,{len(self.modalities)},H,W), got {tuple(x.shape)}"
            )
        per_encoder = [enc(x[:, i:i + 1]) for i, enc in enumerate(self.encoders)]
        skips = [torch.cat([f[level] for f in per_encoder], dim=1)
                 for level in range(self.levels)]
        dec_feats = self.decoder(skips)
        return torch.sigmoid(self.head(dec_feats[-1]))

    def descriptor(self) -> dict:
        return {
            "class": "AnatomyNet",
            "modalities": list(self.modalities),
            "base": self.base,
            "levels": self.levels,
            "image_size": self.image_size,
        }

    @classmethod
    def from_descriptor(cls, d: dict) -> "AnatomyNet":
        return cls(modalities=tuple(d["modalities"]), base=d["base"], levels=d["levels"],
                   image_size=d["image_size"])


def _net_input(net: AnatomyNet, image: MultiModalityImage) -> np.ndarray:
    return np.stack([image.modality(m) for m in net.modalities], axis=0)


def assn_forward(net: AnatomyNet, image: MultiModalityImage) -> np.ndarray:
    """LV probability map for one case, shape (1, H, W), eval mode."""
    x = torch.from_numpy(_net_input(net, image))[None]
    was_training = net.training
    net.eval()
    try:
        with torch.no_grad():
            probs = net(x)
    finally:
        net.train(was_training)
    return probs[0].numpy()


def largest_component(binary: np.ndarray) -> np.ndarray:
    """Keep only the largest 8-connected component of a boolean grid."""
    labeled, count = ndimage.label(binary, structure=np.ones((3, 3), dtype=int))
    if count <= 1:
        return binary.astype(bool)
    sizes = ndimage.sum_labels(np.ones_like(labeled), labeled, index=range(1, count + 1))
    return labeled == (int(np.argmax(sizes)) + 1)


def extract_candidate(
    net: AnatomyNet,
    image: MultiModalityImage,
    dae_net: DenoisingAutoencoder | None = None,
    refine: bool = True,
    threshold: float = 0.5,
) -> tuple[MultiModalityImage, BinaryMask]:
    """Candidate structure for the cascade's second stage.

    The probability map is optionally repaired by the shape prior, thresholded
    (strictly greater), and reduced to its largest connected component; the
    image masked to that region is returned alongside the mask itself. An
    all-background result is legal but suspicious, so it raises a warning.
    """
    probs = assn_forward(net, image)[0]
    if refine:
        if dae_net is None:
            raise ConfigError("refine=True needs the shape prior network")
        probs = dae_forward(dae_net, probs)
    binary = probs > threshold
    if not binary.any():
        warnings.warn(f"empty LV candidate for case {image.id or '<unnamed>'}", stacklevel=2)
        mask = BinaryMask(np.zeros(image.shape, dtype=np.uint8))
    else:
        mask = BinaryMask(largest_component(binary).astype(np.uint8))
    return mask_apply(image, mask), mask


def train_anatomy(
    cases,
    variant: str,
    cfg: TrainConfig,
    weights: LossWeights | None = None,
    dae_net: DenoisingAutoencoder | None = None,
    val_cases=None,
) -> tuple[AnatomyNet, TrainLog]:
    """Train one anatomy variant on ``(image, labels)`` pairs.

    The ``full`` variant needs a pretrained ``dae_net``; its parameters are
    frozen here and gradients only flow through its activations back into the
    segmentation network.
    """
    if variant not in ANATOMY_VARIANTS:
        raise ConfigError(f"unknown anatomy variant {variant!r}; expected one of {ANATOMY_VARIANTS}")
    if not cases:
        raise ConfigError("no training cases supplied")
    weights = weights or LossWeights()
    use_prior = variant == "full"
    if use_prior and weights.beta > 0 and dae_net is None:
        raise ConfigError("variant 'full' requires a pretrained shape prior network")
    if dae_net is not None:
        dae_net.requires_grad_(False)
        dae_net.eval()

    modalities = ("bssfp",) if variant == "bssfp-unet" else MODALITIES
    size = cases[0][0].shape[0]
    set_determinism(cfg.seed)
    net = AnatomyNet(modalities=modalities, base=cfg.base_channels, image_size=size)

    inputs = torch.from_numpy(np.stack([_net_input(net, img) for img, _ in cases]))
    targets = torch.from_numpy(np.stack(
        [lv_mask_from_labels(lab).mask for _, lab in cases]
    ).astype(np.float32))[:, None]

    opt = build_optimizer(net, cfg.lr)
    log = TrainLog(kind=f"anatomy/{variant}", seed=cfg.seed)
    t0 = time.monotonic()
    net.train()
    for epoch in range(cfg.epochs):
        batch_rng = np.random.default_rng([cfg.seed, 104729, epoch])
        epoch_losses = []
        for batch in epoch_batches(len(cases), cfg.batch_size, batch_rng):
            idx = torch.from_numpy(batch)
            pred = net(inputs[idx])
            if use_prior and weights.beta > 0:
                recon = dae_forward(dae_net, pred)
                loss = assn_total_loss(pred, recon, targets[idx], weights)
            else:
                loss = assn_total_loss(pred, None, targets[idx], LossWeights(beta=0.0))
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_losses.append(check_finite_loss(loss, f"anatomy {variant} epoch {epoch}"))
        log.record_epoch(float(np.mean(epoch_losses)))
        if val_cases and cfg.val_every and (epoch + 1) % cfg.val_every == 0:
            dices = []
            for img, lab in val_cases:
                _, cand = extract_candidate(net, img, dae_net=dae_net, refine=use_prior)
                dices.append(dice_score(cand, lv_mask_from_labels(lab)))
            log.val_history.append((epoch + 1, float(np.mean(dices))))
            net.train()
    log.wall_time_s = time.monotonic() - t0
    net.eval()
    return net, log

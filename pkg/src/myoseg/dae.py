"""Denoising auto-encoder shape prior over binary LV masks.

The auto-encoder learns the manifold of plausible LV shapes: it is trained to
map corrupted gold masks back to the clean ones through a small dense latent
code. With no skip connections, everything the decoder produces has to pass
through that bottleneck, which is what lets the model repair holes, bites and
speckle in a predicted segmentation.

The corruption model stacks three operations, always in this order:

1. random morphology: a few erosion/dilation steps perturb the boundary;
2. blob insertion/removal: discs set to 1 or 0 cut holes or add islands;
3. pixel swaps: iid flips of each pixel with a small probability.

With ``swap_prob=1`` and the other operations disabled the corruption is an
exact inversion of the mask, a handy property for tests.
"""

from __future__ import annotations

from dataclasses import dataclass
import time

import numpy as np
import torch
import torch.nn as nn
from scipy import ndimage

from .data import BinaryMask, LabelMap, lv_mask_from_labels
from .errors import ParameterError, ShapeMismatchError
from .losses import l2_reconstruction_loss
from .trainer import (
    TrainConfig,
    TrainLog,
    build_optimizer,
    check_finite_loss,
    epoch_batches,
    set_determinism,
)


@dataclass(frozen=True)
class CorruptionSpec:
    """Parameters of the mask corruption model (all counts are inclusive ranges)."""

    swap_prob: float = 0.01
    morph_ops: tuple[int, int] = (1, 2)
    blob_count: tuple[int, int] = (1, 3)
    blob_radius_range: tuple[float, float] = (3.0, 8.0)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.swap_prob <= 1.0:
            raise ParameterError(f"swap_prob must lie in [0, 1], got {self.swap_prob}")
        for name in ("morph_ops", "blob_count"):
            lo, hi = getattr(self, name)
            if lo < 0 or lo > hi:
                raise ParameterError(f"{name} must satisfy 0 <= low <= high, got ({lo}, {hi})")
        lo, hi = self.blob_radius_range
        if lo < 1.0 or lo > hi:
            raise ParameterError(f"blob_radius_range must satisfy 1 <= low <= high, got ({lo}, {hi})")

    @classmethod
    def identity(cls, seed: int = 0) -> "CorruptionSpec":
        """A spec under which corruption is a no-op."""
        return cls(swap_prob=0.0, morph_ops=(0, 0), blob_count=(0, 0), seed=seed)


def corrupt_label(gold, spec: CorruptionSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Corrupt a binary mask according to ``spec``; returns a new uint8 grid.

    The caller supplies the random stream; without one, a fresh generator
    seeded from ``spec.seed`` is used.
    """
    m = gold.astype_bool() if isinstance(gold, BinaryMask) else np.asarray(gold).astype(bool)
    if m.ndim != 2:
        raise ShapeMismatchError(f"mask must be 2D, got shape {m.shape}")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    out = m.copy()

    lo, hi = spec.morph_ops
    n_ops = int(rng.integers(lo, hi + 1)) if hi > 0 else 0
    for _ in range(n_ops):
        if rng.uniform() < 0.5:
            out = ndimage.binary_erosion(out)
        else:
            out = ndimage.binary_dilation(out)

    lo, hi = spec.blob_count
    n_blobs = int(rng.integers(lo, hi + 1)) if hi > 0 else 0
    if n_blobs:
        yy, xx = np.indices(m.shape)
        for _ in range(n_blobs):
            cy = rng.uniform(0, m.shape[0])
            cx = rng.uniform(0, m.shape[1])
            radius = rng.uniform(*spec.blob_radius_range)
            disc = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
            out[disc] = rng.uniform() < 0.5

    if spec.swap_prob > 0.0:
        flips = rng.uniform(size=m.shape) < spec.swap_prob
        out = out ^ flips

    return out.astype(np.uint8)


class DenoisingAutoencoder(nn.Module):
    """Strided-conv encoder to a dense latent code, deconv decoder, sigmoid out.

    Deliberately has no skip connections; the reconstruction can only use what
    survives the ``latent_dim`` bottleneck.
    """

    def __init__(self, image_size: int = 128, base: int = 16, latent_dim: int = 64):
        super().__init__()
        if image_size % 16 != 0:
            raise ParameterError(f"image_size must be divisible by 16, got {image_size}")
        if latent_dim < 1 or latent_dim >= image_size * image_size / 16:
            raise ParameterError(
                f"latent_dim must lie in [1, {image_size * image_size // 16}), got {latent_dim}"
            )
        self.image_size = image_size
        self.base = base
        self.latent_dim = latent_dim
        b = base
        self.enc = nn.Sequential(
            nn.Conv2d(1, b, 4, stride=2, padding=1),
            nn.InstanceNorm2d(b, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(b, 2 * b, 4, stride=2, padding=1),
            nn.InstanceNorm2d(2 * b, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(2 * b, 4 * b, 4, stride=2, padding=1),
            nn.InstanceNorm2d(4 * b, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(4 * b, 8 * b, 4, stride=2, padding=1),
            nn.InstanceNorm2d(8 * b, affine=True),
            nn.ReLU(inplace=True),
        )
        self._grid = image_size // 16
        flat = 8 * b * self._grid * self._grid
        self.to_latent = nn.Linear(flat, latent_dim)
        self.from_latent = nn.Linear(latent_dim, flat)
        self.dec = nn.Sequential(
            nn.ConvTranspose2d(8 * b, 4 * b, 4, stride=2, padding=1),
            nn.InstanceNorm2d(4 * b, affine=True),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(4 * b, 2 * b, 4, stride=2, padding=1),
            nn.InstanceNorm2d(2 * b, affine=True),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(2 * b, b, 4, stride=2, padding=1),
            nn.InstanceNorm2d(b, affine=True),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(b, 1, 4, stride=2, padding=1),
        )

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        h = self.enc(x)
        return self.to_latent(h.flatten(1))

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        h = self.from_latent(z).reshape(-1, 8 * self.base, self._grid, self._grid)
        return torch.sigmoid(self.dec(h))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[-2:] != (self.image_size, self.image_size):
            raise ShapeMismatchError(
                f"expected (B,1,{self.image_size},{self.image_size}), got {tuple(x.shape)}"
            )
        return self.decode(self.encode(x))

    def descriptor(self) -> dict:
        return {
            "class": "DenoisingAutoencoder",
            "image_size": self.image_size,
            "base": self.base,
            "latent_dim": self.latent_dim,
        }

    @classmethod
    def from_descriptor(cls, d: dict) -> "DenoisingAutoencoder":
        return cls(image_size=d["image_size"], base=d["base"], latent_dim=d["latent_dim"])


def dae_forward(net: DenoisingAutoencoder, seg):
    """Run the shape prior on a segmentation.

    Torch input: stays on the autodiff graph and respects the module's current
    train/eval mode (this is the path the anatomy loss differentiates through).
    Numpy input of shape (H, W): convenience inference path, eval mode and
    no_grad, returns a float32 (H, W) grid.
    """
    if torch.is_tensor(seg):
        if seg.ndim == 2:
            seg = seg[None, None]
        elif seg.ndim == 3:
            seg = seg[:, None]
        return net(seg)
    arr = np.asarray(seg, dtype=np.float32)
    if arr.ndim != 2:
        raise ShapeMismatchError(f"numpy input must be (H, W), got {arr.shape}")
    was_training = net.training
    net.eval()
    try:
        with torch.no_grad():
            out = net(torch.from_numpy(arr)[None, None])
    finally:
        net.train(was_training)
    return out[0, 0].numpy()


def _augment_mask(mask: np.ndarray, rng: np.random.Generator, max_shift: int = 8) -> np.ndarray:
    """Random rotation, flip, mild rescale and shift of a clean mask.

    The shape manifold is rotation and reflection symmetric and roughly scale
    free within the anatomical size range, so augmenting the pretraining masks
    multiplies the shape variety seen by the auto-encoder without leaving the
    manifold. Nearest neighbour everywhere, masks stay binary.
    """
    out = ndimage.rotate(mask.astype(np.uint8), float(rng.uniform(0.0, 360.0)),
                         reshape=False, order=0, mode="constant", cval=0)
    if rng.uniform() < 0.5:
        out = out[:, ::-1]
    scale = float(rng.uniform(0.85, 1.2))
    center = (np.asarray(out.shape, dtype=np.float64) - 1.0) / 2.0
    out = ndimage.affine_transform(
        out,
        np.eye(2) / scale,
        offset=center * (1.0 - 1.0 / scale),
        order=0,
        mode="constant",
        cval=0,
    )
    dy, dx = rng.integers(-max_shift, max_shift + 1, size=2)
    out = ndimage.shift(out, (float(dy), float(dx)), order=0, mode="constant", cval=0)
    return out.astype(np.uint8)


def _lv_masks(cases) -> list[np.ndarray]:
    masks = []
    for item in cases:
        labels = item[1] if isinstance(item, tuple) else item
        if isinstance(labels, LabelMap):
            masks.append(lv_mask_from_labels(labels).mask)
        elif isinstance(labels, BinaryMask):
            masks.append(labels.mask)
        else:
            masks.append(BinaryMask(np.asarray(labels)).mask)
    return masks


def train_dae(
    cases,
    cfg: TrainConfig,
    spec: CorruptionSpec | None = None,
    image_size: int | None = None,
    augment: bool = True,
) -> tuple[DenoisingAutoencoder, TrainLog]:
    """Pretrain the shape prior on the gold LV masks of ``cases``.

    ``cases`` may hold ``(image, labels)`` pairs, label maps or binary masks.
    Every epoch each mask is geometrically augmented (unless ``augment`` is
    off) and freshly corrupted, both from streams keyed by (seed, epoch, case),
    so runs are reproducible and no two epochs see the same corruption.
    """
    if spec is None:
        spec = CorruptionSpec()
    masks = _lv_masks(cases)
    if not masks:
        raise ParameterError("no training masks supplied")
    size = image_size or masks[0].shape[0]
    for m in masks:
        if m.shape != (size, size):
            raise ShapeMismatchError(f"all masks must be ({size}, {size}), got {m.shape}")

    set_determinism(cfg.seed)
    net = DenoisingAutoencoder(image_size=size, base=cfg.base_channels, latent_dim=cfg.latent_dim)
    opt = build_optimizer(net, cfg.lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(1, cfg.epochs))
    log = TrainLog(kind="dae", seed=cfg.seed)

    t0 = time.monotonic()
    net.train()
    for epoch in range(cfg.epochs):
        batch_rng = np.random.default_rng([cfg.seed, 7919, epoch])
        epoch_losses = []
        for batch in epoch_batches(len(masks), cfg.batch_size, batch_rng):
            clean_batch, corrupted = [], []
            for i in batch:
                m = masks[i]
                if augment:
                    m = _augment_mask(m, np.random.default_rng([cfg.seed, 31337, epoch, int(i)]))
                clean_batch.append(m)
                corrupted.append(
                    corrupt_label(m, spec, np.random.default_rng([spec.seed, epoch, int(i)]))
                )
            x = torch.from_numpy(np.stack(corrupted).astype(np.float32))[:, None]
            target = torch.from_numpy(np.stack(clean_batch).astype(np.float32))[:, None]
            recon = net(x)
            loss = l2_reconstruction_loss(recon, target)
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_losses.append(check_finite_loss(loss, f"dae epoch {epoch}"))
        sched.step()
        log.record_epoch(float(np.mean(epoch_losses)))
    log.wall_time_s = time.monotonic() - t0
    net.eval()
    return net, log

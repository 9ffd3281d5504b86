"""Training losses: soft Dice variants and the two composite objectives.

Every segmentation loss here is of the form ``1 - soft Dice`` with additive
smoothing ``eps`` (default 1.0) in both numerator and denominator, computed
over the whole batch as one pixel population (not averaged per sample). A
class absent from both prediction and target therefore contributes a Dice of
exactly 1, i.e. zero loss.

The anatomy objective adds a shape-regularity term: the gold overlap of the
prediction after it is passed through a frozen denoising auto-encoder, weighted
by ``beta``. The pathology objective is the main-branch loss plus weighted
per-modality branch losses. With ``beta`` resp. all ``lambda_*`` set to zero
both reduce exactly (bitwise, not approximately) to their plain counterparts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ShapeMismatchError, ValidationError

DICE_EPS = 1.0


@dataclass(frozen=True)
class LossWeights:
    """Composite loss coefficients with their standard defaults."""

    beta: float = 0.2
    lambda_bssfp: float = 0.3
    lambda_lge: float = 0.5
    lambda_t2: float = 0.5

    def __post_init__(self):
        for name in ("beta", "lambda_bssfp", "lambda_lge", "lambda_t2"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValidationError(f"{name} must be finite and >= 0, got {v}")


def one_hot_targets(labels, num_classes: int, dtype=torch.float32) -> torch.Tensor:
    """Hard labels (B,H,W) or (H,W) with values in [0, num_classes) -> (B,K,H,W)."""
    t = torch.as_tensor(np.asarray(labels)).long()
    if t.ndim == 2:
        t = t[None]
    if t.ndim != 3:
        raise ShapeMismatchError(f"labels must be (B,H,W) or (H,W), got {tuple(t.shape)}")
    if t.numel() and (t.min() < 0 or t.max() >= num_classes):
        raise ValidationError(
            f"label values must lie in [0, {num_classes}), got [{int(t.min())}, {int(t.max())}]"
        )
    oh = torch.nn.functional.one_hot(t, num_classes)
    return oh.permute(0, 3, 1, 2).contiguous().to(dtype)


def _as_bchw(x) -> torch.Tensor:
    t = x if torch.is_tensor(x) else torch.as_tensor(np.asarray(x))
    if t.ndim == 2:
        t = t[None, None]
    elif t.ndim == 3:
        t = t[:, None]
    if t.ndim != 4:
        raise ShapeMismatchError(f"expected up to 4 dims, got shape {tuple(t.shape)}")
    return t


def soft_dice_per_class(pred: torch.Tensor, target: torch.Tensor, eps: float = DICE_EPS) -> torch.Tensor:
    """Per-channel soft Dice over the batch population; shapes (B,K,H,W) -> (K,)."""
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    if pred.ndim != 4:
        raise ShapeMismatchError(f"expected (B,K,H,W), got {tuple(pred.shape)}")
    target = target.to(pred.dtype)
    dims = (0, 2, 3)
    inter = (pred * target).sum(dim=dims)
    denom = pred.sum(dim=dims) + target.sum(dim=dims)
    return (2.0 * inter + eps) / (denom + eps)


def soft_dice_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    class_indices=None,
    eps: float = DICE_EPS,
) -> torch.Tensor:
    """Mean of (1 - Dice_k) over the selected prediction channels.

    ``class_indices`` picks the channels that enter the average (e.g. skip the
    background channel); ``None`` averages over all of them.
    """
    dice = soft_dice_per_class(pred, target, eps)
    if class_indices is not None:
        idx = list(class_indices)
        if not idx:
            raise ValidationError("class_indices must select at least one channel")
        if min(idx) < 0 or max(idx) >= dice.shape[0]:
            raise ValidationError(f"class_indices {idx} out of range for {dice.shape[0]} channels")
        dice = dice[idx]
    return (1.0 - dice).mean()


def soft_dice_loss_binary(pred, target, eps: float = DICE_EPS) -> torch.Tensor:
    """``1 - soft Dice`` for a single-channel (sigmoid) prediction."""
    p = _as_bchw(pred)
    t = _as_bchw(target)
    if p.shape[1] != 1:
        raise ShapeMismatchError(f"binary loss expects one channel, got {p.shape[1]}")
    return soft_dice_loss(p, t, eps=eps)


def l2_reconstruction_loss(recon: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean squared error over all elements (auto-encoder pretraining loss)."""
    if recon.shape != target.shape:
        raise ShapeMismatchError(f"recon {tuple(recon.shape)} vs target {tuple(target.shape)}")
    diff = recon - target.to(recon.dtype)
    return (diff * diff).mean()


def assn_total_loss(seg_pred, dae_recon, gold_lv, weights: LossWeights) -> torch.Tensor:
    """Anatomy objective: segmentation Dice loss plus ``beta`` times the Dice
    loss of the auto-encoder reconstruction of that segmentation.

    ``dae_recon`` may be ``None`` only when ``beta`` is exactly zero, in which
    case the plain Dice loss is returned unchanged.
    """
    base = soft_dice_loss_binary(seg_pred, gold_lv)
    if weights.beta == 0.0:
        return base
    if dae_recon is None:
        raise ValidationError("beta > 0 requires a shape-prior reconstruction")
    return base + weights.beta * soft_dice_loss_binary(dae_recon, gold_lv)


def prsn_total_loss(main, bssfp, lge, t2, weights: LossWeights, eps: float = DICE_EPS) -> torch.Tensor:
    """Pathology objective over the four branch heads.

    Each argument is a ``(probs, one_hot_target)`` pair; channel 0 is the
    background channel in every branch and is excluded from the Dice average,
    so the loss only scores the structures a branch actually segments. Branch
    terms with a zero coefficient are skipped entirely, which makes the
    ``lambda = 0`` case reduce exactly to the main-branch loss.
    """

    def branch_loss(pair):
        probs, target = pair
        if probs.shape[1] < 2:
            raise ShapeMismatchError("branch predictions need background + foreground channels")
        return soft_dice_loss(probs, target, class_indices=range(1, probs.shape[1]), eps=eps)

    total = branch_loss(main)
    for lam, pair in (
        (weights.lambda_bssfp, bssfp),
        (weights.lambda_lge, lge),
        (weights.lambda_t2, t2),
    ):
        if lam != 0.0:
            total = total + lam * branch_loss(pair)
    return total

"""Pathological region segmentation inside the LV candidate from stage one.

The full network runs one U-Net branch per modality on its masked channel.
Each branch carries its own softmax head (deep supervision with the labels that
modality can actually resolve: LGE sees scar, T2 sees edema, bSSFP only the
muscle outline). A main branch starts from the concatenated branch bottlenecks
and decodes upward; at every decoder level a fusion block combines the three
branch decoder maps with the main map, either by channel attention or by the
fixed sum/product/max rule.

Ablation variants cover the single-modality branches, raw-image single-task
U-Nets and an input-level fusion U-Net, so the benefit of decoder-level fusion
can be isolated. Each variant declares which classes it can emit; evaluation
leaves the rest as N/A.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .blocks import UnetDecoder, UnetEncoder
from .data import (
    CLASS_BACKGROUND,
    CLASS_EDEMA,
    CLASS_LV_POOL,
    CLASS_MYOCARDIUM,
    CLASS_SCAR,
    MODALITIES,
    BinaryMask,
    LabelMap,
    MultiModalityImage,
    mask_apply,
)
from .errors import ConfigError, ShapeMismatchError, ValidationError
from .fusion import ChannelAttentionFusion, SumProductMaxFusion
from .losses import LossWeights, one_hot_targets, prsn_total_loss, soft_dice_loss
from .trainer import (
    TrainConfig,
    TrainLog,
    build_optimizer,
    check_finite_loss,
    epoch_batches,
    set_determinism,
)

# Ordered class codes per branch head; channel index -> class code.
BRANCH_CLASSES = {
    "bssfp": (CLASS_BACKGROUND, CLASS_MYOCARDIUM),
    "lge": (CLASS_BACKGROUND, CLASS_MYOCARDIUM, CLASS_SCAR),
    "t2": (CLASS_BACKGROUND, CLASS_MYOCARDIUM, CLASS_EDEMA),
    "main": (CLASS_BACKGROUND, CLASS_MYOCARDIUM, CLASS_SCAR, CLASS_EDEMA),
}

FUSION_KINDS = ("channel-attention", "sum-product-max")


def branch_targets(labels, branch: str) -> np.ndarray:
    """Remap gold labels to the channel indices of one branch head.

    The blood pool is never a stage-two target and maps to background. A
    pathology class a branch cannot resolve folds into its myocardium channel
    (edema on LGE, scar on T2, both on bSSFP).
    """
    if branch not in BRANCH_CLASSES:
        raise ValidationError(f"unknown branch {branch!r}; expected one of {tuple(BRANCH_CLASSES)}")
    src = labels.classes if isinstance(labels, LabelMap) else LabelMap(np.asarray(labels)).classes
    out = np.zeros(src.shape, dtype=np.int64)
    classes = BRANCH_CLASSES[branch]
    myo_idx = classes.index(CLASS_MYOCARDIUM)
    for code in (CLASS_MYOCARDIUM, CLASS_SCAR, CLASS_EDEMA):
        idx = classes.index(code) if code in classes else myo_idx
        out[src == code] = idx
    out[src == CLASS_LV_POOL] = 0
    return out


class PathologyBranch(nn.Module):
    """One modality branch: U-Net with a softmax head, exposing its features."""

    def __init__(self, branch: str, base: int = 16, levels: int = 4):
        super().__init__()
        if branch not in BRANCH_CLASSES:
            raise ConfigError(f"unknown branch {branch!r}")
        self.branch = branch
        self.num_classes = len(BRANCH_CLASSES[branch])
        self.encoder = UnetEncoder(1, base=base, levels=levels)
        self.decoder = UnetDecoder(base=base, levels=levels)
        self.head = nn.Conv2d(base, self.num_classes, kernel_size=1)

    def forward(self, x: torch.Tensor):
        """Returns (probs, encoder bottleneck, decoder features deep to shallow)."""
        enc = self.encoder(x)
        dec = self.decoder(enc)
        probs = torch.softmax(self.head(dec[-1]), dim=1)
        return probs, enc[-1], dec


class PathologyNet(nn.Module):
    """Three modality branches plus a fusion-decoded main branch."""

    def __init__(self, fusion: str = "channel-attention", base: int = 16, levels: int = 4,
                 reduction: int = 4):
        super().__init__()
        if fusion not in FUSION_KINDS:
            raise ConfigError(f"unknown fusion {fusion!r}; expected one of {FUSION_KINDS}")
        self.fusion_kind = fusion
        self.base = base
        self.levels = levels
        self.reduction = reduction
        self.branches = nn.ModuleDict({m: PathologyBranch(m, base=base, levels=levels)
                                       for m in MODALITIES})
        top = base * (2 ** (levels - 1))
        self.bottleneck_fuse = nn.Sequential(
            nn.Conv2d(top * len(MODALITIES), top, kernel_size=1),
            nn.InstanceNorm2d(top, affine=True),
            nn.ReLU(inplace=True),
        )
        ups, fusions = [], []
        for i in range(levels - 2, -1, -1):
            ch = base * (2 ** i)
            ups.append(nn.ConvTranspose2d(ch * 2, ch, kernel_size=2, stride=2))
            if fusion == "channel-attention":
                fusions.append(ChannelAttentionFusion((ch,) * 4, ch, reduction=reduction))
            else:
                fusions.append(SumProductMaxFusion((ch,) * 4, ch))
        self.ups = nn.ModuleList(ups)
        self.fusions = nn.ModuleList(fusions)
        self.head = nn.Conv2d(base, len(BRANCH_CLASSES["main"]), kernel_size=1)

    def forward(self, x: torch.Tensor, return_gates: bool = False):
        """Masked (B,3,H,W) input -> dict of per-head softmax probability maps.

        With ``return_gates=True`` (channel-attention only) a list of the gate
        tensors per decoder level is returned as a second value.
        """
        if x.ndim != 4 or x.shape[1] != len(MODALITIES):
            raise ShapeMismatchError(f"expected (B,{len(MODALITIES)},H,W), got {tuple(x.shape)}")
        if return_gates and self.fusion_kind != "channel-attention":
            raise ConfigError("gates only exist for channel-attention fusion")
        outs, dec_feats, bottlenecks = {}, {}, []
        for i, name in enumerate(MODALITIES):
            probs, bottleneck, dec = self.branches[name](x[:, i:i + 1])
            outs[name] = probs
            dec_feats[name] = dec
            bottlenecks.append(bottleneck)
        x_main = self.bottleneck_fuse(torch.cat(bottlenecks, dim=1))
        gates = []
        for level, (up, fuse) in enumerate(zip(self.ups, self.fusions)):
            x_main = up(x_main)
            feats = tuple(dec_feats[m][level] for m in MODALITIES) + (x_main,)
            if return_gates:
                gates.append(fuse.channel_gates(feats))
            x_main = fuse(feats)
        outs["main"] = torch.softmax(self.head(x_main), dim=1)
        return (outs, gates) if return_gates else outs

    def descriptor(self) -> dict:
        return {
            "class": "PathologyNet",
            "fusion": self.fusion_kind,
            "base": self.base,
            "levels": self.levels,
            "reduction": self.reduction,
        }

    @classmethod
    def from_descriptor(cls, d: dict) -> "PathologyNet":
        return cls(fusion=d["fusion"], base=d["base"], levels=d["levels"],
                   reduction=d.get("reduction", 4))


class SingleBranchNet(nn.Module):
    """A plain U-Net over one branch's class set; the ablation workhorse."""

    def __init__(self, class_branch: str, in_channels: int, base: int = 16, levels: int = 4):
        super().__init__()
        if class_branch not in BRANCH_CLASSES:
            raise ConfigError(f"unknown branch {class_branch!r}")
        self.class_branch = class_branch
        self.in_channels = in_channels
        self.base = base
        self.levels = levels
        self.num_classes = len(BRANCH_CLASSES[class_branch])
        self.encoder = UnetEncoder(in_channels, base=base, levels=levels)
        self.decoder = UnetDecoder(base=base, levels=levels)
        self.head = nn.Conv2d(base, self.num_classes, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        dec = self.decoder(self.encoder(x))
        return torch.softmax(self.head(dec[-1]), dim=1)

    def descriptor(self) -> dict:
        return {
            "class": "SingleBranchNet",
            "class_branch": self.class_branch,
            "in_channels": self.in_channels,
            "base": self.base,
            "levels": self.levels,
        }

    @classmethod
    def from_descriptor(cls, d: dict) -> "SingleBranchNet":
        return cls(class_branch=d["class_branch"], in_channels=d["in_channels"],
                   base=d["base"], levels=d["levels"])


@dataclass(frozen=True)
class VariantSpec:
    """How one pathology variant is built, fed and evaluated."""

    name: str
    masked: bool  # True: input is the stage-one candidate crop, False: raw image
    input_modalities: tuple
    class_branch: str
    fusion: str | None
    predicted_classes: tuple

    def build(self, cfg: TrainConfig) -> nn.Module:
        if self.fusion is not None:
            return PathologyNet(fusion=self.fusion, base=cfg.base_channels)
        return SingleBranchNet(self.class_branch, len(self.input_modalities),
                               base=cfg.base_channels)


PATHOLOGY_VARIANTS = {
    "full": VariantSpec("full", True, MODALITIES, "main", "channel-attention",
                        (CLASS_MYOCARDIUM, CLASS_SCAR, CLASS_EDEMA)),
    "mfb": VariantSpec("mfb", True, MODALITIES, "main", "sum-product-max",
                       (CLASS_MYOCARDIUM, CLASS_SCAR, CLASS_EDEMA)),
    "fusion-unet": VariantSpec("fusion-unet", False, MODALITIES, "main", None,
                               (CLASS_MYOCARDIUM, CLASS_SCAR, CLASS_EDEMA)),
    "unet-scar": VariantSpec("unet-scar", False, ("lge",), "lge", None,
                             (CLASS_MYOCARDIUM, CLASS_SCAR)),
    "unet-edema": VariantSpec("unet-edema", False, ("t2",), "t2", None,
                              (CLASS_MYOCARDIUM, CLASS_EDEMA)),
    "lge-only": VariantSpec("lge-only", True, ("lge",), "lge", None,
                            (CLASS_MYOCARDIUM, CLASS_SCAR)),
    "t2-only": VariantSpec("t2-only", True, ("t2",), "t2", None,
                           (CLASS_MYOCARDIUM, CLASS_EDEMA)),
}


def variant_input(spec: VariantSpec, image: MultiModalityImage,
                  candidate: BinaryMask | None) -> np.ndarray:
    """Input array (C, H, W) for one variant, applying the candidate mask if any."""
    if spec.masked:
        if candidate is None:
            raise ConfigError(f"variant {spec.name!r} needs a stage-one candidate mask")
        image = mask_apply(image, candidate)
    return np.stack([image.modality(m) for m in spec.input_modalities], axis=0)


def train_pathology(
    cases,
    variant: str,
    cfg: TrainConfig,
    weights: LossWeights | None = None,
    candidates=None,
) -> tuple[nn.Module, TrainLog]:
    """Train one pathology variant on ``(image, labels)`` pairs.

    ``candidates`` must supply one stage-one mask per case for masked variants
    (use the anatomy network's predictions to train the cascade the way it will
    run, or gold LV masks for a ceiling experiment).
    """
    if variant not in PATHOLOGY_VARIANTS:
        raise ConfigError(
            f"unknown pathology variant {variant!r}; expected one of {tuple(PATHOLOGY_VARIANTS)}"
        )
    if not cases:
        raise ConfigError("no training cases supplied")
    spec = PATHOLOGY_VARIANTS[variant]
    weights = weights or LossWeights()
    if spec.masked:
        if candidates is None or len(candidates) != len(cases):
            raise ConfigError(f"variant {variant!r} needs one candidate mask per case")
    set_determinism(cfg.seed)
    net = spec.build(cfg)

    inputs = torch.from_numpy(np.stack([
        variant_input(spec, img, candidates[i] if spec.masked else None)
        for i, (img, _) in enumerate(cases)
    ]))
    if spec.fusion is not None:
        target_oh = {
            b: one_hot_targets(
                np.stack([branch_targets(lab, b) for _, lab in cases]),
                len(BRANCH_CLASSES[b]),
            )
            for b in ("main", *MODALITIES)
        }
    else:
        b = spec.class_branch
        target_oh = {b: one_hot_targets(
            np.stack([branch_targets(lab, b) for _, lab in cases]),
            len(BRANCH_CLASSES[b]),
        )}

    opt = build_optimizer(net, cfg.lr)
    log = TrainLog(kind=f"pathology/{variant}", seed=cfg.seed)
    t0 = time.monotonic()
    net.train()
    for epoch in range(cfg.epochs):
        batch_rng = np.random.default_rng([cfg.seed, 15485863, epoch])
        epoch_losses = []
        for batch in epoch_batches(len(cases), cfg.batch_size, batch_rng):
            idx = torch.from_numpy(batch)
            x = inputs[idx]
            if spec.fusion is not None:
                outs = net(x)
                loss = prsn_total_loss(
                    (outs["main"], target_oh["main"][idx]),
                    (outs["bssfp"], target_oh["bssfp"][idx]),
                    (outs["lge"], target_oh["lge"][idx]),
                    (outs["t2"], target_oh["t2"][idx]),
                    weights,
                )
            else:
                probs = net(x)
                target = target_oh[spec.class_branch][idx]
                loss = soft_dice_loss(probs, target, class_indices=range(1, probs.shape[1]))
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_losses.append(check_finite_loss(loss, f"pathology {variant} epoch {epoch}"))
        log.record_epoch(float(np.mean(epoch_losses)))
    log.wall_time_s = time.monotonic() - t0
    net.eval()
    return net, log


def predict_labels(
    net: nn.Module,
    image: MultiModalityImage,
    variant: str,
    candidate: BinaryMask | None = None,
) -> LabelMap:
    """Hard label prediction for one case under a variant's input contract.

    For masked variants the prediction is clamped to the candidate region
    (stage two only rules inside stage one's proposal), so an empty candidate
    yields an all-background map.
    """
    spec = PATHOLOGY_VARIANTS[variant]
    if spec.masked and candidate is not None and candidate.is_empty():
        warnings.warn(f"empty candidate for case {image.id or '<unnamed>'}; "
                      "prediction is all background", stacklevel=2)
        return LabelMap(np.zeros(image.shape, dtype=np.uint8), spacing=image.spacing)
    x = torch.from_numpy(variant_input(spec, image, candidate))[None]
    was_training = net.training
    net.eval()
    try:
        with torch.no_grad():
            out = net(x)
    finally:
        net.train(was_training)
    probs = out["main"] if isinstance(out, dict) else out
    channel = probs[0].argmax(dim=0).numpy()
    codes = np.asarray(BRANCH_CLASSES[spec.class_branch], dtype=np.uint8)
    labels = codes[channel]
    if spec.masked:
        labels = labels * candidate.mask
    return LabelMap(labels.astype(np.uint8), spacing=image.spacing)


def predict_pathology(
    anatomy_net,
    prsn_net: nn.Module,
    image: MultiModalityImage,
    dae_net=None,
    variant: str = "full",
    refine: bool = True,
) -> tuple[LabelMap, BinaryMask]:
    """Full cascade inference: candidate extraction, then pathology labels."""
    from .anatomy import extract_candidate

    spec = PATHOLOGY_VARIANTS[variant]
    _, candidate = extract_candidate(anatomy_net, image, dae_net=dae_net, refine=refine)
    labels = predict_labels(prsn_net, image, variant, candidate if spec.masked else None)
    return labels, candidate

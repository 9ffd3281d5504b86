"""Evaluation metrics: hard-mask Dice and boundary Hausdorff distance.

The Hausdorff distance here is the exact symmetric maximum (the 100th
percentile, not a robust variant) over boundary pixels, scaled by the pixel
spacing so results are in millimetres. Boundary pixels are mask pixels with at
least one zero 8-neighbour; pixels touching the image edge count as boundary,
which matches the padded-neighbourhood definition.

Distances are accumulated as squared terms ``(dy*di)^2 + (dx*dj)^2`` in float64
and the square root is taken only once at the end, so a brute-force double loop
over pixel pairs reproduces the chunked implementation bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import (
    CLASS_EDEMA,
    CLASS_LV_POOL,
    CLASS_MYOCARDIUM,
    CLASS_SCAR,
    BinaryMask,
    LabelMap,
    lv_mask_from_labels,
)
from .errors import EmptyMaskError, ShapeMismatchError, ValidationError

N_A = "N/A"

_FOREGROUND = (CLASS_LV_POOL, CLASS_MYOCARDIUM, CLASS_SCAR, CLASS_EDEMA)


def _as_bool_mask(m) -> np.ndarray:
    if isinstance(m, BinaryMask):
        return m.astype_bool()
    arr = np.asarray(m)
    if arr.ndim != 2:
        raise ShapeMismatchError(f"mask must be 2D, got shape {arr.shape}")
    return arr.astype(bool)


def dice_score(pred, gold) -> float:
    """Hard Dice overlap of two binary masks; two empty masks score 1.0."""
    p = _as_bool_mask(pred)
    g = _as_bool_mask(gold)
    if p.shape != g.shape:
        raise ShapeMismatchError(f"mask shapes differ: {p.shape} vs {g.shape}")
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / denom


def boundary_pixels(mask) -> np.ndarray:
    """Coordinates (N, 2) of mask pixels with a zero 8-neighbour.

    The mask is conceptually zero-padded, so mask pixels on the image edge are
    always boundary pixels.
    """
    m = _as_bool_mask(mask)
    padded = np.pad(m, 1, mode="constant", constant_values=False)
    interior = np.ones_like(m)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            interior &= padded[1 + di:1 + di + m.shape[0], 1 + dj:1 + dj + m.shape[1]]
    return np.argwhere(m & ~interior.astype(bool))


def _directed_max_min_sq(a: np.ndarray, b: np.ndarray, spacing, chunk: int) -> float:
    """max over a of (min over b) of squared physical distance."""
    dy, dx = float(spacing[0]), float(spacing[1])
    ai = a[:, 0].astype(np.float64)
    aj = a[:, 1].astype(np.float64)
    bi = b[:, 0].astype(np.float64)
    bj = b[:, 1].astype(np.float64)
    worst = 0.0
    for start in range(0, len(ai), chunk):
        ci = ai[start:start + chunk, None]
        cj = aj[start:start + chunk, None]
        d2 = (dy * (ci - bi[None, :])) ** 2 + (dx * (cj - bj[None, :])) ** 2
        worst = max(worst, float(d2.min(axis=1).max()))
    return worst


def hausdorff_distance(pred, gold, spacing=(1.0, 1.0), chunk: int = 4096) -> float:
    """Symmetric boundary Hausdorff distance in physical units (mm).

    Raises :class:`EmptyMaskError` if either mask has no pixels; callers that
    need a score for failed predictions must apply their own convention (see
    :func:`evaluate_case`).
    """
    p = _as_bool_mask(pred)
    g = _as_bool_mask(gold)
    if p.shape != g.shape:
        raise ShapeMismatchError(f"mask shapes differ: {p.shape} vs {g.shape}")
    if spacing[0] <= 0 or spacing[1] <= 0:
        raise ValidationError(f"spacing must be positive, got {spacing}")
    if not p.any() or not g.any():
        raise EmptyMaskError("Hausdorff distance is undefined for an empty mask")
    pb = boundary_pixels(p)
    gb = boundary_pixels(g)
    d2 = max(
        _directed_max_min_sq(pb, gb, spacing, chunk),
        _directed_max_min_sq(gb, pb, spacing, chunk),
    )
    return float(np.sqrt(d2))


def image_diagonal_mm(shape: tuple[int, int], spacing=(1.0, 1.0)) -> float:
    """Physical length of the grid diagonal; the failure penalty for Hausdorff."""
    return float(np.sqrt((spacing[0] * shape[0]) ** 2 + (spacing[1] * shape[1]) ** 2))


@dataclass(frozen=True)
class MetricsRecord:
    """Per-case evaluation results; ``None`` marks metrics a model cannot emit."""

    case_id: str
    dice_lv: float | None = None
    hd_lv_mm: float | None = None
    dice_myo: float | None = None
    dice_scar: float | None = None
    dice_scar_edema: float | None = None

    FIELDS = ("dice_lv", "hd_lv_mm", "dice_myo", "dice_scar", "dice_scar_edema")

    def as_row(self) -> dict:
        row = {"case_id": self.case_id}
        for f in self.FIELDS:
            v = getattr(self, f)
            row[f] = N_A if v is None else f"{v:.6f}"
        return row


def evaluate_case(
    case_id: str,
    pred,
    gold: LabelMap,
    spacing=None,
    predicted_classes=None,
) -> MetricsRecord:
    """Score one prediction against gold labels.

    ``pred`` is either a :class:`BinaryMask` (an anatomy candidate: only the LV
    metrics apply) or a :class:`LabelMap`. ``predicted_classes`` lists the class
    codes the model is able to emit; metrics over classes outside that set are
    left as ``None`` and render as ``N/A``, so single-structure baselines are
    never charged for structures they do not model. For label predictions it
    defaults to all four foreground classes.

    The LV Hausdorff convention for degenerate inputs: both masks empty scores
    0.0 (nothing to miss), exactly one empty scores the image diagonal, so a
    model that loses the structure entirely is penalized rather than skipped.
    """
    spacing = tuple(spacing) if spacing is not None else gold.spacing
    gold_lv = lv_mask_from_labels(gold)

    if isinstance(pred, BinaryMask):
        if predicted_classes is not None:
            raise ValidationError("predicted_classes only applies to label predictions")
        pred_lv = pred
        pred_classes = frozenset()
        pred_labels = None
    elif isinstance(pred, LabelMap):
        pred_labels = pred
        pred_classes = frozenset(_FOREGROUND if predicted_classes is None else predicted_classes)
        unknown = pred_classes - set(_FOREGROUND)
        if unknown:
            raise ValidationError(f"predicted_classes has non-foreground codes {sorted(unknown)}")
        pred_lv = lv_mask_from_labels(pred_labels) if CLASS_LV_POOL in pred_classes else None
    else:
        raise ValidationError(f"pred must be BinaryMask or LabelMap, got {type(pred).__name__}")

    if pred.shape != gold.shape:
        raise ShapeMismatchError(f"pred {pred.shape} vs gold {gold.shape}")

    dice_lv = hd_lv = None
    if pred_lv is not None:
        dice_lv = dice_score(pred_lv, gold_lv)
        p_empty, g_empty = pred_lv.is_empty(), not gold_lv.mask.any()
        if p_empty and g_empty:
            hd_lv = 0.0
        elif p_empty or g_empty:
            hd_lv = image_diagonal_mm(gold.shape, spacing)
        else:
            hd_lv = hausdorff_distance(pred_lv, gold_lv, spacing)

    dice_myo = dice_scar = dice_union = None
    if pred_labels is not None:
        myo_set = (CLASS_MYOCARDIUM, CLASS_SCAR, CLASS_EDEMA)
        if CLASS_MYOCARDIUM in pred_classes:
            dice_myo = dice_score(pred_labels.class_mask(myo_set), gold.class_mask(myo_set))
        if CLASS_SCAR in pred_classes:
            dice_scar = dice_score(
                pred_labels.class_mask((CLASS_SCAR,)), gold.class_mask((CLASS_SCAR,))
            )
        if CLASS_EDEMA in pred_classes:
            union = (CLASS_SCAR, CLASS_EDEMA)
            dice_union = dice_score(pred_labels.class_mask(union), gold.class_mask(union))

    return MetricsRecord(
        case_id=case_id,
        dice_lv=dice_lv,
        hd_lv_mm=hd_lv,
        dice_myo=dice_myo,
        dice_scar=dice_scar,
        dice_scar_edema=dice_union,
    )


def aggregate(records, field: str) -> tuple[float, float, int]:
    """Mean and sample std (ddof=1) of one metric over records, skipping ``None``.

    Returns ``(nan, nan, 0)`` when no record carries the metric; std is 0.0 for
    a single value.
    """
    if field not in MetricsRecord.FIELDS:
        raise ValidationError(f"unknown metric field {field!r}")
    values = [getattr(r, field) for r in records if getattr(r, field) is not None]
    if not values:
        return float("nan"), float("nan"), 0
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return float(arr.mean()), std, len(arr)

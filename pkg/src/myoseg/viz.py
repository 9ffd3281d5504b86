"""Overlay rendering for qualitative inspection.

Color convention (RGB): blood pool yellow, healthy myocardium dark red, scar
blue, edema green. Overlays paint solid class colors over the grayscale
background image at labeled pixels and leave background pixels untouched.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .data import (
    CLASS_EDEMA,
    CLASS_LV_POOL,
    CLASS_MYOCARDIUM,
    CLASS_SCAR,
    BinaryMask,
    LabelMap,
)
from .errors import ShapeMismatchError, ValidationError

LABEL_COLORS = {
    CLASS_LV_POOL: (235, 200, 80),
    CLASS_MYOCARDIUM: (190, 80, 80),
    CLASS_SCAR: (70, 90, 235),
    CLASS_EDEMA: (80, 200, 90),
}


def to_uint8_gray(image: np.ndarray) -> np.ndarray:
    g = np.asarray(image, dtype=np.float64)
    if g.ndim != 2:
        raise ShapeMismatchError(f"grayscale image must be 2D, got {g.shape}")
    return np.clip(np.round(g * 255.0), 0, 255).astype(np.uint8)


def overlay_labels(image: np.ndarray, labels, alpha: float = 1.0) -> np.ndarray:
    """RGB uint8 overlay of a label map (or binary mask) on a [0,1] image.

    ``alpha`` blends the class color with the underlying intensity; the default
    paints solid colors.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"alpha must lie in [0, 1], got {alpha}")
    if isinstance(labels, BinaryMask):
        grid = labels.mask.astype(np.uint8) * CLASS_MYOCARDIUM
    elif isinstance(labels, LabelMap):
        grid = labels.classes
    else:
        grid = LabelMap(np.asarray(labels)).classes
    gray = to_uint8_gray(image)
    if gray.shape != grid.shape:
        raise ShapeMismatchError(f"image {gray.shape} vs labels {grid.shape}")
    rgb = np.repeat(gray[:, :, None], 3, axis=2).astype(np.float64)
    for code, color in LABEL_COLORS.items():
        where = grid == code
        if where.any():
            rgb[where] = (1.0 - alpha) * rgb[where] + alpha * np.asarray(color, dtype=np.float64)
    return np.clip(np.round(rgb), 0, 255).astype(np.uint8)


def side_by_side(panels, pad: int = 4) -> np.ndarray:
    """Compose equally sized RGB panels horizontally with a white gutter."""
    if not panels:
        raise ValidationError("need at least one panel")
    shape = panels[0].shape
    for p in panels:
        if p.shape != shape:
            raise ShapeMismatchError("all panels must share one shape")
    h = shape[0]
    gutter = np.full((h, pad, 3), 255, dtype=np.uint8)
    parts = []
    for i, p in enumerate(panels):
        if i:
            parts.append(gutter)
        parts.append(p.astype(np.uint8))
    return np.concatenate(parts, axis=1)


def save_png(rgb: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb, mode="RGB").save(path)
    return path

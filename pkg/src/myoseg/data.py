"""Core domain types and dataset I/O.

Grid conventions used throughout the package:

* images are 2D ``float32`` grids with intensities normalized to ``[0, 1]``;
* label maps are 2D ``uint8`` grids holding one of the five class codes below;
* binary masks are ``uint8`` grids of exactly 0/1;
* soft predictions ("soft labels") are ``(K, H, W)`` probability grids, either
  softmax-normalized across K or per-channel sigmoid outputs — validated with
  :func:`validate_soft_probs`;
* network feature maps are plain ``(C, H, W)`` arrays/tensors; enable
  :func:`set_debug_checks` to assert finiteness after every network stage.

All value types are immutable: their arrays are defensively copied and marked
read-only, so instances can be shared freely across threads.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataFormatError, ShapeMismatchError, ValidationError

# Label class codes (fixed encoding, see README).
CLASS_BACKGROUND = 0
CLASS_LV_POOL = 1
CLASS_MYOCARDIUM = 2
CLASS_SCAR = 3
CLASS_EDEMA = 4
VALID_CLASSES = (CLASS_BACKGROUND, CLASS_LV_POOL, CLASS_MYOCARDIUM, CLASS_SCAR, CLASS_EDEMA)

# Classes whose union forms the LV epicardial region (blood pool + muscle + pathology).
LV_CLASSES = (CLASS_LV_POOL, CLASS_MYOCARDIUM, CLASS_SCAR, CLASS_EDEMA)

MODALITIES = ("bssfp", "lge", "t2")

DATASET_FORMAT_VERSION = "1"

_DEBUG_CHECKS = bool(int(os.environ.get("MYOSEG_DEBUG", "0")))


def set_debug_checks(enabled: bool) -> None:
    """Toggle per-layer finiteness assertions in network forward passes."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


def debug_checks_enabled() -> bool:
    return _DEBUG_CHECKS


def _frozen(arr: np.ndarray, dtype) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=dtype).copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class MultiModalityImage:
    """One aligned multi-sequence slice: bSSFP, LGE and T2 intensity grids.

    All three grids share the same H x W shape; intensities must already be
    normalized to [0, 1]. The standard pipeline size after cropping is 128 x 128,
    but the type itself accepts any shape so small grids can be used in tests.
    """

    bssfp: np.ndarray
    lge: np.ndarray
    t2: np.ndarray
    spacing: tuple[float, float] = (1.0, 1.0)
    id: str = ""

    def __post_init__(self):
        grids = []
        for name in MODALITIES:
            g = np.asarray(getattr(self, name))
            if g.ndim != 2:
                raise ShapeMismatchError(f"{name} grid must be 2D, got shape {g.shape}")
            grids.append(g)
        if not (grids[0].shape == grids[1].shape == grids[2].shape):
            raise ShapeMismatchError(
                "modalities must share one shape, got "
                + ", ".join(str(g.shape) for g in grids)
            )
        for name, g in zip(MODALITIES, grids):
            if not np.all(np.isfinite(g)):
                raise ValidationError(f"{name} grid contains non-finite values")
            if g.size and (g.min() < 0.0 or g.max() > 1.0):
                raise ValidationError(f"{name} intensities must lie in [0, 1]")
            object.__setattr__(self, name, _frozen(g, np.float32))
        object.__setattr__(self, "spacing", (float(self.spacing[0]), float(self.spacing[1])))

    @property
    def shape(self) -> tuple[int, int]:
        return self.bssfp.shape

    def modality(self, name: str) -> np.ndarray:
        if name not in MODALITIES:
            raise ValidationError(f"unknown modality {name!r}")
        return getattr(self, name)

    def stacked(self) -> np.ndarray:
        """Return the three modalities stacked as a (3, H, W) array."""
        return np.stack([self.bssfp, self.lge, self.t2], axis=0)


@dataclass(frozen=True)
class LabelMap:
    """Hard per-pixel class labels over the five-class encoding."""

    classes: np.ndarray
    spacing: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        c = np.asarray(self.classes)
        if c.ndim != 2:
            raise ShapeMismatchError(f"label grid must be 2D, got shape {c.shape}")
        if c.size and not np.isin(c, VALID_CLASSES).all():
            bad = sorted(set(np.unique(c)) - set(VALID_CLASSES))
            raise ValidationError(f"unknown class values {bad}; valid values are {VALID_CLASSES}")
        object.__setattr__(self, "classes", _frozen(c, np.uint8))
        object.__setattr__(self, "spacing", (float(self.spacing[0]), float(self.spacing[1])))

    @property
    def shape(self) -> tuple[int, int]:
        return self.classes.shape

    def class_mask(self, values: Iterable[int]) -> "BinaryMask":
        """Binary mask of pixels whose class is in ``values``."""
        return BinaryMask(np.isin(self.classes, list(values)).astype(np.uint8))


@dataclass(frozen=True)
class BinaryMask:
    """A {0,1} grid, e.g. the LV candidate region or a single structure."""

    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask)
        if m.ndim != 2:
            raise ShapeMismatchError(f"mask must be 2D, got shape {m.shape}")
        if m.dtype == bool:
            m = m.astype(np.uint8)
        if m.size and not np.isin(m, (0, 1)).all():
            raise ValidationError("mask values must be exactly 0 or 1")
        object.__setattr__(self, "mask", _frozen(m, np.uint8))

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    @property
    def area(self) -> int:
        return int(self.mask.sum())

    def is_empty(self) -> bool:
        return self.area == 0

    def astype_bool(self) -> np.ndarray:
        return self.mask.astype(bool)


def validate_soft_probs(probs, kind: str = "softmax", tol: float = 1e-5) -> None:
    """Check a (K, H, W) or (B, K, H, W) probability grid against its head contract.

    ``kind='softmax'``: per-pixel channel sums must equal 1 within ``tol``.
    ``kind='sigmoid'``: every channel must independently lie in [0, 1].
    """
    p = np.asarray(probs.detach().cpu() if hasattr(probs, "detach") else probs, dtype=np.float64)
    if p.ndim not in (3, 4):
        raise ShapeMismatchError(f"soft label must be (K,H,W) or (B,K,H,W), got {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValidationError("soft label contains non-finite values")
    axis = 0 if p.ndim == 3 else 1
    if kind == "softmax":
        sums = p.sum(axis=axis)
        err = np.abs(sums - 1.0).max() if sums.size else 0.0
        if err > tol:
            raise ValidationError(f"softmax channel sums deviate from 1 by {err:.3g} > {tol:g}")
    elif kind == "sigmoid":
        if p.size and (p.min() < -tol or p.max() > 1.0 + tol):
            raise ValidationError("sigmoid probabilities must lie in [0, 1]")
    else:
        raise ValidationError(f"unknown soft-label kind {kind!r}")


def mask_apply(image: MultiModalityImage, m: BinaryMask) -> MultiModalityImage:
    """Multiply every modality grid element-wise by a binary mask.

    This extracts the candidate structure: the image restricted to the mask,
    zero elsewhere. Idempotent in the mask.
    """
    if image.shape != m.shape:
        raise ShapeMismatchError(f"image {image.shape} vs mask {m.shape}")
    w = m.mask.astype(np.float32)
    return MultiModalityImage(
        bssfp=image.bssfp * w,
        lge=image.lge * w,
        t2=image.t2 * w,
        spacing=image.spacing,
        id=image.id,
    )


def lv_mask_from_labels(labels) -> BinaryMask:
    """Binary LV epicardial-region mask: union of pool, myocardium, scar and edema.

    Accepts a :class:`LabelMap` or a raw 2D integer grid (validated).
    """
    if not isinstance(labels, LabelMap):
        labels = LabelMap(np.asarray(labels))
    return labels.class_mask(LV_CLASSES)


# ---------------------------------------------------------------------------
# On-disk dataset format (version "1"), see README for the byte layout.
# One directory per case: raw little-endian row-major grids for each modality
# and the labels, plus a meta.json sidecar with spacing/shape/dtypes.
# ---------------------------------------------------------------------------

_IMAGE_DTYPE = "<f4"
_LABEL_DTYPE = "|u1"
_GRID_FILES = ("bssfp", "lge", "t2", "labels")


def write_case(root, image: MultiModalityImage, labels: LabelMap) -> Path:
    """Write one case under ``root/<case id>/``; returns the case directory."""
    if image.shape != labels.shape:
        raise ShapeMismatchError(f"image {image.shape} vs labels {labels.shape}")
    if not image.id:
        raise ValidationError("image id must be non-empty to write a case")
    case_dir = Path(root) / image.id
    case_dir.mkdir(parents=True, exist_ok=True)
    for name in MODALITIES:
        getattr(image, name).astype(_IMAGE_DTYPE).tofile(case_dir / f"{name}.bin")
    labels.classes.astype(_LABEL_DTYPE).tofile(case_dir / "labels.bin")
    meta = {
        "format_version": DATASET_FORMAT_VERSION,
        "id": image.id,
        "spacing": [image.spacing[0], image.spacing[1]],
        "shape": [int(image.shape[0]), int(image.shape[1])],
        "image_dtype": _IMAGE_DTYPE,
        "label_dtype": _LABEL_DTYPE,
    }
    (case_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return case_dir


def _read_grid(path: Path, dtype: str, shape: tuple[int, int], case_id: str, name: str) -> np.ndarray:
    if not path.exists():
        raise DataFormatError(f"case {case_id!r}: missing {name} file {path}")
    raw = np.fromfile(path, dtype=np.dtype(dtype))
    expected = shape[0] * shape[1]
    if raw.size != expected:
        raise DataFormatError(
            f"case {case_id!r}: corrupted grid {path} ({raw.size} values, expected {expected})"
        )
    return raw.reshape(shape)


def read_case(case_dir) -> tuple[MultiModalityImage, LabelMap]:
    case_dir = Path(case_dir)
    meta_path = case_dir / "meta.json"
    if not meta_path.exists():
        raise DataFormatError(f"case directory {case_dir} has no meta.json")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as e:
        raise DataFormatError(f"unparseable meta file {meta_path}: {e}") from e
    if meta.get("format_version") != DATASET_FORMAT_VERSION:
        raise DataFormatError(
            f"{meta_path}: format version {meta.get('format_version')!r} != "
            f"{DATASET_FORMAT_VERSION!r}"
        )
    case_id = meta.get("id", case_dir.name)
    shape = tuple(meta["shape"])
    spacing = tuple(meta["spacing"])
    grids = {
        name: _read_grid(case_dir / f"{name}.bin", meta["image_dtype"], shape, case_id, name)
        for name in MODALITIES
    }
    label_grid = _read_grid(case_dir / "labels.bin", meta["label_dtype"], shape, case_id, "labels")
    image = MultiModalityImage(spacing=spacing, id=case_id, **grids)
    labels = LabelMap(label_grid, spacing=spacing)
    return image, labels


def read_dataset(path) -> list[tuple[MultiModalityImage, LabelMap]]:
    """Load every case under ``path``, deterministically ordered by case id."""
    root = Path(path)
    if not root.exists():
        raise DataFormatError(f"dataset directory {root} does not exist")
    case_dirs = sorted(d for d in root.iterdir() if d.is_dir() and (d / "meta.json").exists())
    return [read_case(d) for d in case_dirs]


def write_dataset(path, cases: Sequence[tuple[MultiModalityImage, LabelMap]]) -> None:
    for image, labels in cases:
        write_case(path, image, labels)


def write_labels(root, case_id: str, labels: LabelMap) -> Path:
    """Write a labels-only case (predictions); same layout minus the images."""
    if not case_id:
        raise ValidationError("case_id must be non-empty")
    case_dir = Path(root) / case_id
    case_dir.mkdir(parents=True, exist_ok=True)
    labels.classes.astype(_LABEL_DTYPE).tofile(case_dir / "labels.bin")
    meta = {
        "format_version": DATASET_FORMAT_VERSION,
        "id": case_id,
        "content": "labels",
        "spacing": [labels.spacing[0], labels.spacing[1]],
        "shape": [int(labels.shape[0]), int(labels.shape[1])],
        "label_dtype": _LABEL_DTYPE,
    }
    (case_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return case_dir


def read_labels(case_dir) -> LabelMap:
    """Read the label grid of a case directory (works for full cases too)."""
    case_dir = Path(case_dir)
    meta_path = case_dir / "meta.json"
    if not meta_path.exists():
        raise DataFormatError(f"case directory {case_dir} has no meta.json")
    meta = json.loads(meta_path.read_text())
    if meta.get("format_version") != DATASET_FORMAT_VERSION:
        raise DataFormatError(
            f"{meta_path}: format version {meta.get('format_version')!r} != "
            f"{DATASET_FORMAT_VERSION!r}"
        )
    shape = tuple(meta["shape"])
    grid = _read_grid(case_dir / "labels.bin", meta["label_dtype"], shape,
                      meta.get("id", case_dir.name), "labels")
    return LabelMap(grid, spacing=tuple(meta["spacing"]))


MANIFEST_NAME = "manifest.json"
SPLITS = ("train", "val", "test")


def write_manifest(root, manifest: dict) -> Path:
    out = Path(root) / MANIFEST_NAME
    out.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def read_manifest(root) -> dict:
    path = Path(root) / MANIFEST_NAME
    if not path.exists():
        raise DataFormatError(f"no {MANIFEST_NAME} under {root}")
    manifest = json.loads(path.read_text())
    if manifest.get("format_version") != DATASET_FORMAT_VERSION:
        raise DataFormatError(
            f"{path}: format version {manifest.get('format_version')!r} != {DATASET_FORMAT_VERSION!r}"
        )
    return manifest


def load_split(root, split: str) -> list[tuple[MultiModalityImage, LabelMap]]:
    """Load the cases assigned to one split by the dataset manifest."""
    if split not in SPLITS:
        raise ValidationError(f"unknown split {split!r}; expected one of {SPLITS}")
    manifest = read_manifest(root)
    ids = set(manifest["splits"][split])
    return [(img, lab) for img, lab in read_dataset(root) if img.id in ids]

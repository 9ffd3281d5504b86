"""Synthetic multi-sequence cardiac phantom generator.

Each case is a short-axis-like slice: an elliptical left-ventricle blood pool
surrounded by a myocardial ring, with one angular sector of scar wrapped inside
a wider edema sector (infarct core plus perifocal edema). Per-modality
intensities come from a contrast table mimicking the real sequences: the pool
is bright on bSSFP, scar is bright on LGE, edema is bright on T2.

On top of the clean geometry a set of optional corruptions can fire per case:

* ``bssfp_degrade_prob``   - collapse the bSSFP contrast toward its mean, so the
  cine channel alone carries little anatomy signal;
* ``occlusion_prob``       - drop signal to background level in disc patches on
  the ring, in all modalities, leaving a bite that only shape knowledge fixes;
* ``lge_distractor_prob``  - bright blobs in healthy myocardium on LGE only
  (enhancement look-alikes without any T2 counterpart);
* ``t2_distractor_prob``   - the same on T2 only;
* ``modality_noise_boost_prob`` - one randomly chosen modality gets a much
  higher noise level, so the informative channel varies per case.

Generation is fully deterministic: case ``i`` of a generator with seed ``s``
uses ``np.random.default_rng([s, i])`` and a fixed draw order, so any case can
be regenerated in isolation.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .data import (
    CLASS_BACKGROUND,
    CLASS_EDEMA,
    CLASS_LV_POOL,
    CLASS_MYOCARDIUM,
    CLASS_SCAR,
    DATASET_FORMAT_VERSION,
    MODALITIES,
    LabelMap,
    MultiModalityImage,
    write_case,
    write_manifest,
)
from .errors import ParameterError

# modality -> class code -> mean intensity
DEFAULT_CONTRAST = {
    "bssfp": {CLASS_BACKGROUND: 0.10, CLASS_LV_POOL: 0.90, CLASS_MYOCARDIUM: 0.40,
              CLASS_SCAR: 0.40, CLASS_EDEMA: 0.40},
    "lge":   {CLASS_BACKGROUND: 0.10, CLASS_LV_POOL: 0.80, CLASS_MYOCARDIUM: 0.25,
              CLASS_SCAR: 0.85, CLASS_EDEMA: 0.30},
    "t2":    {CLASS_BACKGROUND: 0.10, CLASS_LV_POOL: 0.70, CLASS_MYOCARDIUM: 0.35,
              CLASS_SCAR: 0.40, CLASS_EDEMA: 0.85},
}


def _check_range(name: str, rng: tuple, low=None, high=None):
    if len(rng) != 2 or not (rng[0] <= rng[1]):
        raise ParameterError(f"{name} must be a (low, high) pair with low <= high, got {rng}")
    if low is not None and rng[0] < low:
        raise ParameterError(f"{name} lower bound must be >= {low}, got {rng[0]}")
    if high is not None and rng[1] > high:
        raise ParameterError(f"{name} upper bound must be <= {high}, got {rng[1]}")


@dataclass(frozen=True)
class PhantomParams:
    """Geometry, contrast and corruption settings for the generator."""

    image_size: int = 128
    spacing: tuple[float, float] = (1.0, 1.0)
    pool_radius_range: tuple[float, float] = (12.0, 20.0)
    myo_thickness_range: tuple[float, float] = (7.0, 12.0)
    center_offset_max: float = 10.0
    ellipticity_range: tuple[float, float] = (0.75, 1.0)
    scar_arc_range: tuple[float, float] = (50.0, 120.0)
    edema_arc_range: tuple[float, float] = (70.0, 160.0)
    edema_margin_deg: float = 15.0
    n_scar_sectors: int = 1
    noise_sigma: tuple[float, float, float] = (0.02, 0.03, 0.03)
    contrast_table: dict = field(default_factory=lambda: {m: dict(t) for m, t in DEFAULT_CONTRAST.items()})
    seed: int = 0
    # corruption knobs
    bssfp_degrade_prob: float = 0.0
    bssfp_degrade_factor: float = 0.15
    occlusion_prob: float = 0.0
    occlusion_radius_range: tuple[float, float] = (5.0, 9.0)
    lge_distractor_prob: float = 0.0
    t2_distractor_prob: float = 0.0
    distractor_radius_range: tuple[float, float] = (2.0, 4.5)
    modality_noise_boost_prob: float = 0.0
    noise_boost_factor: float = 6.0

    def __post_init__(self):
        if self.image_size < 32:
            raise ParameterError(f"image_size must be >= 32, got {self.image_size}")
        if self.spacing[0] <= 0 or self.spacing[1] <= 0:
            raise ParameterError(f"spacing must be positive, got {self.spacing}")
        _check_range("pool_radius_range", self.pool_radius_range, low=2.0)
        _check_range("myo_thickness_range", self.myo_thickness_range, low=2.0)
        _check_range("ellipticity_range", self.ellipticity_range, low=0.3)
        _check_range("scar_arc_range", self.scar_arc_range, low=5.0, high=360.0)
        _check_range("edema_arc_range", self.edema_arc_range, low=5.0, high=360.0)
        if self.edema_margin_deg < 0:
            raise ParameterError("edema_margin_deg must be >= 0")
        _check_range("occlusion_radius_range", self.occlusion_radius_range, low=1.0)
        _check_range("distractor_radius_range", self.distractor_radius_range, low=1.0)
        if self.center_offset_max < 0:
            raise ParameterError("center_offset_max must be >= 0")
        if self.n_scar_sectors < 1:
            raise ParameterError("n_scar_sectors must be >= 1")
        if len(self.noise_sigma) != 3 or any(s < 0 for s in self.noise_sigma):
            raise ParameterError(f"noise_sigma must be three non-negative values, got {self.noise_sigma}")
        for name in ("bssfp_degrade_prob", "occlusion_prob", "lge_distractor_prob",
                     "t2_distractor_prob", "modality_noise_boost_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1], got {p}")
        if not 0.0 <= self.bssfp_degrade_factor <= 1.0:
            raise ParameterError("bssfp_degrade_factor must lie in [0, 1]")
        if self.noise_boost_factor < 1.0:
            raise ParameterError("noise_boost_factor must be >= 1")
        for m in MODALITIES:
            if m not in self.contrast_table:
                raise ParameterError(f"contrast_table is missing modality {m!r}")
            table = self.contrast_table[m]
            for cls in (CLASS_BACKGROUND, CLASS_LV_POOL, CLASS_MYOCARDIUM, CLASS_SCAR, CLASS_EDEMA):
                if cls not in table:
                    raise ParameterError(f"contrast_table[{m!r}] is missing class {cls}")
                v = table[cls]
                if not 0.0 <= v <= 1.0:
                    raise ParameterError(f"contrast_table[{m!r}][{cls}] must lie in [0, 1], got {v}")
        # the deformed ring must stay inside the frame with a small margin
        stretch = max(1.0, self.ellipticity_range[1])
        extent = self.center_offset_max + stretch * (
            self.pool_radius_range[1] + self.myo_thickness_range[1]
        )
        if extent > self.image_size / 2 - 2:
            raise ParameterError(
                f"ring can leave the frame: offset+radius extent {extent:.1f} exceeds "
                f"{self.image_size / 2 - 2:.1f} for image_size={self.image_size}"
            )


def case_rng(seed: int, index: int) -> np.random.Generator:
    """The per-case random stream; independent of every other case."""
    return np.random.default_rng([int(seed), int(index)])


def _sector_mask(phi_deg: np.ndarray, center_deg: float, arc_deg: float) -> np.ndarray:
    diff = (phi_deg - center_deg + 180.0) % 360.0 - 180.0
    return np.abs(diff) <= arc_deg / 2.0


def _disc(shape: tuple[int, int], cy: float, cx: float, radius: float) -> np.ndarray:
    yy, xx = np.indices(shape)
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2


def generate_case(params: PhantomParams, index: int) -> tuple[MultiModalityImage, LabelMap]:
    """Generate phantom case ``index`` (geometry, labels, corrupted intensities).

    Draw order is fixed: pool radius, wall thickness, center offset, ellipticity,
    rotation, then per sector (center angle, scar arc, edema arc), then the
    corruption triggers in the order listed in the module docstring, then one
    noise field per modality.
    """
    n = params.image_size
    rng = case_rng(params.seed, index)

    pool_r = rng.uniform(*params.pool_radius_range)
    thickness = rng.uniform(*params.myo_thickness_range)
    cy = n / 2.0 + rng.uniform(-params.center_offset_max, params.center_offset_max)
    cx = n / 2.0 + rng.uniform(-params.center_offset_max, params.center_offset_max)
    ellipticity = rng.uniform(*params.ellipticity_range)
    theta = np.deg2rad(rng.uniform(0.0, 360.0))

    yy, xx = np.indices((n, n), dtype=np.float64)
    dy, dx = yy - cy, xx - cx
    u = np.cos(theta) * dy + np.sin(theta) * dx
    v = -np.sin(theta) * dy + np.cos(theta) * dx
    r = np.sqrt(u ** 2 + (v / ellipticity) ** 2)
    phi = np.degrees(np.arctan2(v, u))

    labels = np.full((n, n), CLASS_BACKGROUND, dtype=np.uint8)
    labels[r <= pool_r + thickness] = CLASS_MYOCARDIUM
    labels[r <= pool_r] = CLASS_LV_POOL
    ring = labels == CLASS_MYOCARDIUM

    for _ in range(params.n_scar_sectors):
        sector_center = rng.uniform(0.0, 360.0)
        scar_arc = rng.uniform(*params.scar_arc_range)
        # the edema sector always flanks the scar core by at least the margin
        edema_arc = min(360.0, max(scar_arc + params.edema_margin_deg,
                                   rng.uniform(*params.edema_arc_range)))
        in_edema = ring & _sector_mask(phi, sector_center, edema_arc)
        in_scar = ring & _sector_mask(phi, sector_center, scar_arc)
        labels[in_edema & (labels != CLASS_SCAR)] = CLASS_EDEMA
        labels[in_scar] = CLASS_SCAR

    grids = {}
    for m in MODALITIES:
        table = params.contrast_table[m]
        img = np.empty((n, n), dtype=np.float64)
        for cls, value in sorted(table.items()):
            img[labels == cls] = value
        grids[m] = img

    # corruption triggers, fixed order
    if rng.uniform() < params.bssfp_degrade_prob:
        m0 = grids["bssfp"].mean()
        grids["bssfp"] = m0 + params.bssfp_degrade_factor * (grids["bssfp"] - m0)

    if rng.uniform() < params.occlusion_prob:
        ring_coords = np.argwhere(labels != CLASS_BACKGROUND)
        n_patches = int(rng.integers(1, 3))
        for _ in range(n_patches):
            py, px = ring_coords[int(rng.integers(len(ring_coords)))]
            radius = rng.uniform(*params.occlusion_radius_range)
            patch = _disc((n, n), float(py), float(px), radius)
            for m in MODALITIES:
                grids[m][patch] = params.contrast_table[m][CLASS_BACKGROUND]

    for m, prob in (("lge", params.lge_distractor_prob), ("t2", params.t2_distractor_prob)):
        if rng.uniform() < prob:
            healthy = np.argwhere(labels == CLASS_MYOCARDIUM)
            if len(healthy):
                n_blobs = int(rng.integers(1, 3))
                bright = params.contrast_table[m][CLASS_SCAR if m == "lge" else CLASS_EDEMA]
                for _ in range(n_blobs):
                    by, bx = healthy[int(rng.integers(len(healthy)))]
                    radius = rng.uniform(*params.distractor_radius_range)
                    blob = _disc((n, n), float(by), float(bx), radius) & (labels == CLASS_MYOCARDIUM)
                    grids[m][blob] = bright

    sigma = list(params.noise_sigma)
    if rng.uniform() < params.modality_noise_boost_prob:
        boosted = int(rng.integers(0, 3))
        sigma[boosted] = sigma[boosted] * params.noise_boost_factor

    for i, m in enumerate(MODALITIES):
        noisy = grids[m] + rng.normal(0.0, sigma[i], size=(n, n))
        grids[m] = np.clip(noisy, 0.0, 1.0).astype(np.float32)

    image = MultiModalityImage(spacing=params.spacing, id=f"case_{index:03d}", **grids)
    return image, LabelMap(labels, spacing=params.spacing)


def split_sizes(n_cases: int) -> tuple[int, int, int]:
    """Train/val/test sizes: 4/9, 1/9, 4/9 of the dataset, remainder to train.

    The reference dataset of 45 cases therefore splits 20/5/20.
    """
    if n_cases < 3:
        raise ParameterError(f"need at least 3 cases to form three splits, got {n_cases}")
    train = (4 * n_cases) // 9
    val = n_cases // 9
    test = (4 * n_cases) // 9
    train += n_cases - (train + val + test)
    if min(train, val, test) < 1:
        # tiny datasets: peel one case each for val/test
        train, val, test = n_cases - 2, 1, 1
    return train, val, test


def generate_dataset(
    params: PhantomParams,
    n_cases: int = 45,
    out_dir=None,
    sizes: tuple[int, int, int] | None = None,
):
    """Generate ``n_cases`` phantoms plus a split manifest.

    Cases are split contiguously by index (train block, then val, then test);
    with a fixed seed this is reproducible down to the byte. If ``out_dir`` is
    given the cases and ``manifest.json`` are also written there.

    Returns ``(cases, manifest)`` where cases is a list of
    ``(MultiModalityImage, LabelMap)`` pairs ordered by case index.
    """
    if n_cases < 1:
        raise ParameterError(f"n_cases must be >= 1, got {n_cases}")
    if sizes is None:
        sizes = split_sizes(n_cases) if n_cases >= 3 else (n_cases, 0, 0)
    if sum(sizes) != n_cases or min(sizes) < 0:
        raise ParameterError(f"split sizes {sizes} do not partition {n_cases} cases")

    cases = [generate_case(params, i) for i in range(n_cases)]
    ids = [img.id for img, _ in cases]
    n_train, n_val, _ = sizes
    manifest = {
        "format_version": DATASET_FORMAT_VERSION,
        "n_cases": n_cases,
        "seed": params.seed,
        "splits": {
            "train": ids[:n_train],
            "val": ids[n_train:n_train + n_val],
            "test": ids[n_train + n_val:],
        },
        "params": dataclasses.asdict(params),
    }
    if out_dir is not None:
        for image, labels in cases:
            write_case(out_dir, image, labels)
        write_manifest(out_dir, manifest)
    return cases, manifest

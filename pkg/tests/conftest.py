import numpy as np
import pytest

from myoseg.data import LabelMap, MultiModalityImage
from myoseg.phantom import PhantomParams, generate_case


def small_params(seed: int = 0, **overrides) -> PhantomParams:
    """64 px phantoms sized for unit tests."""
    kwargs = dict(
        image_size=64,
        pool_radius_range=(8.0, 12.0),
        myo_thickness_range=(5.0, 8.0),
        center_offset_max=5.0,
        seed=seed,
    )
    kwargs.update(overrides)
    return PhantomParams(**kwargs)


@pytest.fixture(scope="session")
def small_cases():
    params = small_params()
    return [generate_case(params, i) for i in range(6)]


@pytest.fixture()
def one_case(small_cases):
    return small_cases[0]


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def random_blob_mask(rng: np.random.Generator, size: int) -> np.ndarray:
    """A couple of discs plus salt noise: structured but irregular test masks."""
    yy, xx = np.indices((size, size))
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(int(rng.integers(1, 3))):
        cy, cx = rng.uniform(0, size, 2)
        r = rng.uniform(1.0, max(1.5, size / 3))
        mask |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r ** 2
    mask ^= rng.random((size, size)) < 0.05
    return mask


def tiny_image(size: int = 32, seed: int = 0) -> tuple[MultiModalityImage, LabelMap]:
    rng = np.random.default_rng(seed)
    grids = {m: rng.random((size, size)).astype(np.float32) for m in ("bssfp", "lge", "t2")}
    labels = np.zeros((size, size), dtype=np.uint8)
    labels[8:24, 8:24] = 2
    labels[12:20, 12:16] = 1
    labels[14:18, 18:22] = 3
    labels[10:12, 16:20] = 4
    return (
        MultiModalityImage(spacing=(1.0, 1.0), id=f"tiny_{seed:03d}", **grids),
        LabelMap(labels),
    )

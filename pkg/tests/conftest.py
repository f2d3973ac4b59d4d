import numpy as np
import pytest

from forestreg.bsr import RasterStack
from forestreg.patches import PatchSample


def make_patch(
    name: str = "p0",
    channels: int = 2,
    size: int = 8,
    forest_cover: float = 1.0,
    labeled: bool = True,
    seed: int = 0,
    height_scale: float = 20.0,
) -> PatchSample:
    """Small synthetic patch with a deterministic forest mask and reference."""
    rng = np.random.default_rng(seed)
    values = rng.random((channels, size, size), dtype=np.float32)
    reference = (rng.random((size, size)) * height_scale).astype(np.float32)
    n_forest = int(round(forest_cover * size * size))
    mask = np.zeros(size * size, dtype=bool)
    mask[:n_forest] = True
    mask = mask.reshape(size, size)
    reference[~mask] = np.nan
    stand_ids = (rng.integers(1, 4, size=(size, size))).astype(np.int32)
    stand_ids[~mask] = 0
    return PatchSample(
        name=name,
        inputs=RasterStack(values, nodata=-9999.0, pixel_size=20.0),
        reference=reference,
        forest_mask=mask,
        stand_ids=stand_ids,
        labeled=labeled,
    )


@pytest.fixture
def patch_factory():
    return make_patch

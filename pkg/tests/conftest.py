from __future__ import annotations

import numpy as np
import pytest

from defectinject.model import Batch, DatasetIndex, ImageBuffer, Sample, SegMask
from defectinject.verify import synthetic_index

MT_DONORS = {1: 115, 2: 85, 3: 57, 4: 32, 5: 103}
MT_FREE = 952


def make_free(rng: np.random.Generator, side: int = 16, name: str = "free") -> Sample:
    return Sample(
        ImageBuffer(rng.uniform(0.1, 0.9, (3, side, side))),
        SegMask.zeros(side, side),
        name,
    )


def make_defect(
    rng: np.random.Generator,
    class_id: int,
    side: int = 16,
    blob: int = 3,
    name: str | None = None,
) -> Sample:
    labels = np.zeros((side, side), dtype=np.int32)
    r0 = int(rng.integers(1, side - 1 - blob))
    c0 = int(rng.integers(1, side - 1 - blob))
    labels[r0:r0 + blob, c0:c0 + blob] = class_id
    return Sample(
        ImageBuffer(rng.uniform(0.0, 1.0, (3, side, side))),
        SegMask(labels),
        name or f"defect_{class_id}",
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_index(rng):
    """Two defect classes, a handful of donors and frees, 16x16 rasters."""
    return DatasetIndex(
        free_pool=tuple(
            make_free(rng, name=f"free/{i}") for i in range(8)
        ),
        class_pools={
            c: tuple(
                make_defect(rng, c, name=f"class_{c}/{i}") for i in range(5)
            )
            for c in (1, 2)
        },
    )


@pytest.fixture(scope="session")
def mt_index():
    """In-memory index with the Magnetic-Tiles pool ratios on tiny rasters."""
    return synthetic_index(MT_DONORS, MT_FREE, frame=(24, 24), seed=99)


def batch_of(samples, num_classes) -> Batch:
    return Batch(samples=tuple(samples), num_classes=num_classes)

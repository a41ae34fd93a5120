"""Core domain types: rasters, samples, dataset pools, and class accounting.

Conventions used throughout the package:

* images are ``(3, H, W)`` float64 arrays with values in ``[0, 1]``
  (channel-major, grayscale inputs replicated to 3 channels);
* masks are ``(H, W)`` int32 label rasters with values in ``{0, .., C}``
  where 0 is background and each image carries defects of at most one class;
* pixel coordinates are ``(row, col)`` pairs, offsets are ``(drow, dcol)``.

All types are immutable after construction; their backing arrays are marked
read-only so samples can be shared across workers without copies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MaskValidationError


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ImageBuffer:
    """A 3-channel floating-point raster with intensities in [0, 1]."""

    data: np.ndarray  # (3, H, W) float64

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[0] != 3:
            raise ValueError(f"image data must be (3, H, W), got {data.shape}")
        if data.shape[1] < 1 or data.shape[2] < 1:
            raise ValueError(f"image must be at least 1x1, got {data.shape}")
        if not np.isfinite(data).all():
            raise ValueError("image contains non-finite values")
        lo, hi = float(data.min()), float(data.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"intensities must lie in [0, 1], got [{lo}, {hi}]")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        """(height, width) of the raster."""
        return (self.height, self.width)

    @classmethod
    def from_hwc(cls, array: np.ndarray) -> "ImageBuffer":
        """Build from an (H, W, 3) or (H, W) array; grayscale is replicated."""
        arr = np.asarray(array, dtype=np.float64)
        if arr.ndim == 2:
            arr = np.stack([arr, arr, arr], axis=0)
        elif arr.ndim == 3 and arr.shape[2] == 3:
            arr = np.moveaxis(arr, 2, 0)
        else:
            raise ValueError(f"expected (H, W) or (H, W, 3), got {arr.shape}")
        return cls(arr)

    def to_hwc(self) -> np.ndarray:
        return np.moveaxis(self.data, 0, 2).copy()


@dataclass(frozen=True)
class SegMask:
    """Per-pixel integer label raster; nonzero pixels mark the defect."""

    labels: np.ndarray  # (H, W) int32

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ValueError(f"mask labels must be (H, W), got {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            raise ValueError(f"mask labels must be integers, got {labels.dtype}")
        if labels.size and labels.min() < 0:
            raise ValueError("mask labels must be nonnegative")
        object.__setattr__(self, "labels", _frozen(labels.astype(np.int32)))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def present_classes(self) -> set[int]:
        """Distinct nonzero labels present in the raster."""
        values = np.unique(self.labels)
        return {int(v) for v in values if v != 0}

    def is_empty(self) -> bool:
        return not self.labels.any()

    def defect_class(self) -> int:
        """The single defect class, or 0 for an all-background mask."""
        present = self.present_classes()
        if not present:
            return 0
        if len(present) > 1:
            raise MaskValidationError(
                f"mask carries multiple defect classes {sorted(present)}"
            )
        return present.pop()

    @classmethod
    def zeros(cls, height: int, width: int) -> "SegMask":
        return cls(np.zeros((height, width), dtype=np.int32))


@dataclass(frozen=True)
class SingleClassReport:
    """Outcome of the single-class check; a violation is data, not a fault."""

    ok: bool
    offending_labels: tuple[int, ...] = ()


def validate_single_class(mask: SegMask) -> SingleClassReport:
    """Check that the mask's nonzero labels form at most one class."""
    present = sorted(mask.present_classes())
    if len(present) <= 1:
        return SingleClassReport(ok=True)
    return SingleClassReport(ok=False, offending_labels=tuple(present))


@dataclass(frozen=True)
class Sample:
    """An image paired with its segmentation mask."""

    image: ImageBuffer
    mask: SegMask
    source_id: str

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise ValueError(
                f"sample '{self.source_id}': image {self.image.shape} and "
                f"mask {self.mask.shape} dimensions disagree"
            )
        report = validate_single_class(self.mask)
        if not report.ok:
            raise MaskValidationError(
                f"sample '{self.source_id}': mask carries multiple classes "
                f"{list(report.offending_labels)}"
            )

    @property
    def defect_class(self) -> int:
        return self.mask.defect_class()

    def is_defect_free(self) -> bool:
        return self.mask.is_empty()


@dataclass(frozen=True)
class DatasetIndex:
    """Partition of samples into a defect-free pool and per-class pools."""

    free_pool: tuple[Sample, ...]
    class_pools: dict[int, tuple[Sample, ...]]

    def __post_init__(self):
        object.__setattr__(self, "free_pool", tuple(self.free_pool))
        object.__setattr__(
            self, "class_pools",
            {int(c): tuple(pool) for c, pool in sorted(self.class_pools.items())},
        )
        for sample in self.free_pool:
            if not sample.is_defect_free():
                raise ValueError(
                    f"free pool sample '{sample.source_id}' has defect pixels"
                )
        for class_id, pool in self.class_pools.items():
            if class_id < 1:
                raise ValueError(f"class pool ids must be >= 1, got {class_id}")
            for sample in pool:
                if sample.defect_class != class_id:
                    raise ValueError(
                        f"sample '{sample.source_id}' in pool {class_id} has "
                        f"class {sample.defect_class}"
                    )

    @property
    def num_classes(self) -> int:
        return max(self.class_pools, default=0)

    @property
    def num_samples(self) -> int:
        return len(self.free_pool) + sum(len(p) for p in self.class_pools.values())

    def pool_sizes(self) -> dict[int, int]:
        """Sizes keyed by class id, with 0 for the defect-free pool."""
        sizes = {0: len(self.free_pool)}
        sizes.update({c: len(p) for c, p in self.class_pools.items()})
        return sizes

    def all_samples(self) -> tuple[Sample, ...]:
        out: list[Sample] = list(self.free_pool)
        for class_id in sorted(self.class_pools):
            out.extend(self.class_pools[class_id])
        return tuple(out)


@dataclass(frozen=True)
class ClassHistogram:
    """Number of defective samples per class within a batch."""

    counts: dict[int, int]

    def __post_init__(self):
        counts = {int(c): int(n) for c, n in self.counts.items()}
        if counts:
            ids = sorted(counts)
            if ids != list(range(1, len(ids) + 1)):
                raise ValueError(f"histogram must cover classes 1..C, got {ids}")
        if any(n < 0 for n in counts.values()):
            raise ValueError("histogram counts must be nonnegative")
        object.__setattr__(self, "counts", counts)

    @property
    def num_classes(self) -> int:
        return len(self.counts)

    def total(self) -> int:
        return sum(self.counts.values())

    def gap(self) -> int:
        """max count minus min count across classes."""
        values = list(self.counts.values())
        return max(values) - min(values) if values else 0

    def as_list(self) -> list[int]:
        return [self.counts[c] for c in sorted(self.counts)]

    def bump(self, class_id: int) -> "ClassHistogram":
        updated = dict(self.counts)
        updated[class_id] += 1
        return ClassHistogram(updated)


@dataclass(frozen=True)
class InjectionRecord:
    """Provenance of one injected defect."""

    method: str  # "poisson" | "cut-paste"
    donor_id: str
    class_id: int
    flip_h: bool
    flip_v: bool
    rotation_deg: float
    scale: float
    placement: tuple[int, int]  # (drow, dcol) applied to donor coordinates
    seed: int

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "donor_id": self.donor_id,
            "class_id": self.class_id,
            "flip_h": self.flip_h,
            "flip_v": self.flip_v,
            "rotation_deg": self.rotation_deg,
            "scale": self.scale,
            "placement": list(self.placement),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, record: dict) -> "InjectionRecord":
        return cls(
            method=record["method"],
            donor_id=record["donor_id"],
            class_id=int(record["class_id"]),
            flip_h=bool(record["flip_h"]),
            flip_v=bool(record["flip_v"]),
            rotation_deg=float(record["rotation_deg"]),
            scale=float(record["scale"]),
            placement=tuple(record["placement"]),
            seed=int(record["seed"]),
        )


@dataclass(frozen=True)
class Batch:
    """An ordered group of samples plus per-sample injection provenance."""

    samples: tuple[Sample, ...]
    num_classes: int
    provenance: tuple[InjectionRecord | None, ...] = field(default=())

    def __post_init__(self):
        samples = tuple(self.samples)
        if not samples:
            raise ValueError("batch must be nonempty")
        if self.num_classes < 1:
            raise ValueError("batch needs at least one defect class")
        provenance = tuple(self.provenance) or (None,) * len(samples)
        if len(provenance) != len(samples):
            raise ValueError("provenance length must match sample count")
        for sample in samples:
            if sample.defect_class > self.num_classes:
                raise ValueError(
                    f"sample '{sample.source_id}' has class "
                    f"{sample.defect_class} > C={self.num_classes}"
                )
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "provenance", provenance)

    def __len__(self) -> int:
        return len(self.samples)

    def free_positions(self) -> list[int]:
        return [i for i, s in enumerate(self.samples) if s.is_defect_free()]


def class_histogram(batch: Batch) -> ClassHistogram:
    """Count defective samples per class; all-background samples count nowhere."""
    counts = {c: 0 for c in range(1, batch.num_classes + 1)}
    for sample in batch.samples:
        c = sample.defect_class
        if c > 0:
            counts[c] += 1
    return ClassHistogram(counts)


def subsample_per_class(
    index: DatasetIndex, fraction: float, seed: int
) -> DatasetIndex:
    """Reduce each pool to ceil(fraction * size) samples, without replacement.

    ceil keeps every nonempty pool nonempty at any fraction > 0, so rare
    classes survive even aggressive subsampling.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    if fraction == 1.0:
        return index

    def pick(pool: tuple[Sample, ...], rng: np.random.Generator) -> tuple[Sample, ...]:
        keep = math.ceil(fraction * len(pool))
        if keep >= len(pool):
            return pool
        chosen = np.sort(rng.choice(len(pool), size=keep, replace=False))
        return tuple(pool[int(i)] for i in chosen)

    # One child stream per pool so each pool subsamples independently.
    free_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    free = pick(index.free_pool, free_rng)
    pools = {}
    for class_id, pool in index.class_pools.items():
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(class_id,)))
        pools[class_id] = pick(pool, rng)
    return DatasetIndex(free_pool=free, class_pools=pools)


def shuffle_samples(
    samples: tuple[Sample, ...] | list[Sample], seed: int
) -> list[Sample]:
    """Seeded Fisher-Yates shuffle; the only split utility this package ships."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(samples))
    return [samples[int(i)] for i in order]

"""In-process bindings for training dataloaders.

Two operations, arrays in and arrays out:

* :func:`bind_inject` wraps a single defect injection; on identical inputs,
  config, and seed it reproduces the engine (and therefore the CLI ``inject``
  command) byte for byte.
* :func:`balanced_iterator` streams one epoch of class-balanced batches from
  a manifest as stacked arrays.

Configuration is a plain dict with exactly the field names of the CLI config
document (see ``defectinject print-config``). Engine errors surface unchanged
(:mod:`defectinject.errors` types are re-exported here), so callers can map
failure modes one to one.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from defectinject.balance import iter_balanced_batches
from defectinject.config import RunConfig
from defectinject.dataset import read_manifest, resize_sample
from defectinject.errors import (
    ConvergenceError,
    DecodeError,
    EmptyRegionError,
    EngineError,
    IngestionError,
    InjectionError,
    MaskValidationError,
    PlacementError,
    TransformError,
    UnbalanceableError,
)
from defectinject.inject import METHOD_CUT_PASTE, METHOD_POISSON, inject
from defectinject.model import (
    DatasetIndex,
    ImageBuffer,
    Sample,
    SegMask,
    validate_single_class,
)

__version__ = "0.1.0"

__all__ = [
    "ArrayBatch",
    "balanced_iterator",
    "bind_inject",
    # error types, mapped 1:1 from the engine
    "ConvergenceError",
    "DecodeError",
    "EmptyRegionError",
    "EngineError",
    "IngestionError",
    "InjectionError",
    "MaskValidationError",
    "PlacementError",
    "TransformError",
    "UnbalanceableError",
]

_METHODS = {"auto": None, "poisson": METHOD_POISSON, "cut-paste": METHOD_CUT_PASTE}


@dataclass(frozen=True)
class ArrayBatch:
    """One balanced batch as stacked arrays.

    ``images`` is (B, 3, H, W) float64 in [0, 1]; ``masks`` is (B, H, W)
    int32; ``provenance`` holds one dict per sample (None where the sample
    was not injected); ``saturated`` marks batches whose frees ran out before
    the class counts evened out.
    """

    images: np.ndarray
    masks: np.ndarray
    provenance: tuple[dict | None, ...]
    saturated: bool

    def __len__(self) -> int:
        return self.images.shape[0]

    def class_counts(self, num_classes: int | None = None) -> dict[int, int]:
        """Defective-sample count per class, recomputed from the masks."""
        per_sample = [int(m.max()) for m in self.masks]
        top = num_classes or max(max(per_sample, default=0), 1)
        return {
            c: sum(1 for v in per_sample if v == c) for c in range(1, top + 1)
        }


def _as_image(array: np.ndarray, name: str) -> ImageBuffer:
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[0] != 3 and arr.shape[2] == 3:
        arr = np.moveaxis(arr, 2, 0)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"{name} must be (3, H, W) or (H, W, 3), got {arr.shape}")
    return ImageBuffer(arr)


def _as_mask(array: np.ndarray) -> SegMask:
    arr = np.asarray(array)
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.allclose(arr, np.rint(arr)):
            raise MaskValidationError("mask array carries non-integer labels")
        arr = np.rint(arr).astype(np.int32)
    mask = SegMask(arr.astype(np.int32))
    report = validate_single_class(mask)
    if not report.ok:
        raise MaskValidationError(
            f"donor mask carries multiple classes {list(report.offending_labels)}"
        )
    return mask


def bind_inject(
    target: np.ndarray,
    donor_image: np.ndarray,
    donor_mask: np.ndarray,
    config: dict | None = None,
    seed: int = 0,
    method: str = "auto",
) -> tuple[np.ndarray, np.ndarray, dict]:
    """Inject one donor defect into a target image, arrays in and out.

    Returns (image (3, H, W) float64, mask (H, W) int32, provenance dict).
    Identical inputs, config, and seed reproduce the engine exactly.
    """
    if method not in _METHODS:
        raise ValueError(f"unknown method '{method}' (expected {list(_METHODS)})")
    cfg = RunConfig.from_dict(config or {})
    donor = Sample(
        image=_as_image(donor_image, "donor_image"),
        mask=_as_mask(donor_mask),
        source_id="bind:donor",
    )
    rng = np.random.default_rng(seed)
    sample, record = inject(
        _as_image(target, "target"),
        donor,
        cfg.injection,
        rng,
        seed=seed,
        method_override=_METHODS[method],
        target_id="bind:target",
    )
    return sample.image.data.copy(), sample.mask.labels.copy(), record.to_dict()


def _resized_index(index: DatasetIndex, size: tuple[int, int]) -> DatasetIndex:
    h, w = size
    return DatasetIndex(
        free_pool=tuple(resize_sample(s, h, w) for s in index.free_pool),
        class_pools={
            c: tuple(resize_sample(s, h, w) for s in pool)
            for c, pool in index.class_pools.items()
        },
    )


def balanced_iterator(
    manifest_path: str | Path,
    batch_size: int,
    config: dict | None = None,
    seed: int = 0,
) -> Iterator[ArrayBatch]:
    """Stream one epoch of balanced batches from a manifest.

    Every yielded batch satisfies the configured uniformity slack or carries
    ``saturated=True``. The sequence is fully determined by (manifest,
    batch_size, config, seed); two iterators never share state.
    """
    cfg = RunConfig.from_dict(config or {})
    index = read_manifest(Path(manifest_path))
    if cfg.dataset.resize is not None:
        index = _resized_index(index, cfg.dataset.resize)

    shapes = {s.image.shape for s in index.all_samples()}
    if len(shapes) > 1:
        raise ValueError(
            f"samples have mixed raster sizes {sorted(shapes)}; set "
            "dataset.resize in the config to stack them"
        )

    for _, outcome in iter_balanced_batches(
        index, batch_size, cfg.balance, seed=seed, num_batches=None
    ):
        batch = outcome.batch
        yield ArrayBatch(
            images=np.stack([s.image.data for s in batch.samples]),
            masks=np.stack([s.mask.labels for s in batch.samples]),
            provenance=tuple(
                None if r is None else r.to_dict() for r in batch.provenance
            ),
            saturated=outcome.saturated,
        )

"""Dataset ingestion: raster IO, the line-delimited manifest, and the
per-class directory adapter.

Two layouts are supported:

* ``manifest`` — a UTF-8 JSONL file, one record per line:
  ``{"image": <relpath>, "mask": <relpath or null>, "class": <0..C>}``
  with class 0 meaning defect-free. Paths resolve against the manifest's
  directory.
* ``directory`` — a root containing ``free/`` (images only) and
  ``class_<k>/imgs`` + ``class_<k>/masks`` with matching stem filenames.

Images are 8-bit PNG/JPEG, mapped to [0, 1] by division by 255. Masks are
single-channel rasters; any nonzero pixel is collapsed to the class the
record (or directory) declares.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DecodeError, IngestionError, MaskValidationError
from .model import DatasetIndex, ImageBuffer, Sample, SegMask

_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}
_CLASS_DIR_RE = re.compile(r"^class_(\d+)$")


def read_image(path: Path | str) -> ImageBuffer:
    """Decode an 8-bit raster to a [0, 1] float image (grayscale replicated)."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            arr = np.asarray(img, dtype=np.float64) / 255.0
    except FileNotFoundError:
        raise IngestionError(f"image file not found: {path}") from None
    except OSError as exc:
        raise DecodeError(f"cannot decode image {path}: {exc}") from exc
    return ImageBuffer.from_hwc(arr)


def read_mask(path: Path | str, class_id: int) -> SegMask:
    """Decode a single-channel mask; nonzero pixels become ``class_id``.

    A mask storing one nonzero value (the usual 255-on-black convention)
    collapses to the declared class; two or more distinct nonzero values are
    ambiguous and rejected.
    """
    path = Path(path)
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"))
    except FileNotFoundError:
        raise IngestionError(f"mask file not found: {path}") from None
    except OSError as exc:
        raise DecodeError(f"cannot decode mask {path}: {exc}") from exc
    distinct = sorted(int(v) for v in np.unique(arr) if v != 0)
    if len(distinct) > 1:
        raise MaskValidationError(
            f"mask {path} carries {len(distinct)} distinct nonzero labels "
            f"{distinct}; a sample may hold defects of one class only"
        )
    labels = np.where(arr > 0, np.int32(class_id), np.int32(0))
    return SegMask(labels)


def write_image(image: ImageBuffer, path: Path | str) -> None:
    """Write as 8-bit PNG/JPEG (values rounded from the [0, 1] domain)."""
    arr = np.clip(np.rint(image.to_hwc() * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(Path(path))


def write_mask(mask: SegMask, path: Path | str) -> None:
    """Write label ids as an 8-bit single-channel PNG."""
    if int(mask.labels.max(initial=0)) > 255:
        raise ValueError("mask class ids above 255 cannot be stored as 8-bit PNG")
    Image.fromarray(mask.labels.astype(np.uint8), mode="L").save(Path(path))


def _build_index(records: list[tuple[Sample, int]]) -> DatasetIndex:
    free: list[Sample] = []
    pools: dict[int, list[Sample]] = {}
    for sample, class_id in records:
        if class_id == 0:
            free.append(sample)
        else:
            pools.setdefault(class_id, []).append(sample)
    return DatasetIndex(
        free_pool=tuple(free),
        class_pools={c: tuple(p) for c, p in pools.items()},
    )


def _load_record(base: Path, image_rel: str, mask_rel: str | None,
                 class_id: int) -> tuple[Sample, int]:
    image_path = base / image_rel
    image = read_image(image_path)
    if class_id == 0:
        mask = SegMask.zeros(image.height, image.width)
    else:
        if mask_rel is None:
            raise IngestionError(
                f"sample '{image_rel}' declares class {class_id} but no mask"
            )
        mask = read_mask(base / mask_rel, class_id)
        if mask.shape != image.shape:
            raise MaskValidationError(
                f"sample '{image_rel}': mask {mask.shape} does not match "
                f"image {image.shape}"
            )
        if mask.is_empty():
            raise MaskValidationError(
                f"sample '{image_rel}': defective sample has an all-zero mask"
            )
    return Sample(image=image, mask=mask, source_id=str(image_rel)), class_id


def parse_manifest(path: Path | str) -> list[dict]:
    """Parse JSONL manifest records without touching any raster files."""
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"manifest not found: {path}")
    records: list[dict] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise IngestionError(f"{path}:{lineno}: malformed record: {exc}") from exc
        for key in ("image", "class"):
            if key not in rec:
                raise IngestionError(f"{path}:{lineno}: missing field '{key}'")
        records.append(
            {"image": rec["image"], "mask": rec.get("mask"), "class": int(rec["class"])}
        )
    if not records:
        raise IngestionError(f"no samples found in manifest {path}")
    return records


def load_records(base: Path | str, records: list[dict]) -> DatasetIndex:
    """Decode and validate every record of a scanned layout."""
    base = Path(base)
    loaded = [
        _load_record(base, rec["image"], rec["mask"], int(rec["class"]))
        for rec in records
    ]
    return _build_index(loaded)


def read_manifest(path: Path | str) -> DatasetIndex:
    """Load a JSONL manifest into a validated DatasetIndex."""
    path = Path(path)
    return load_records(path.parent, parse_manifest(path))


def write_manifest(entries: list[dict], path: Path | str) -> None:
    """Write manifest records as JSONL (one compact object per line)."""
    path = Path(path)
    lines = [json.dumps(rec, sort_keys=True) for rec in entries]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def scan_directory_tree(root: Path | str) -> list[dict]:
    """Scan the ``free/`` + ``class_<k>/imgs|masks`` convention into manifest
    records (no raster decoding)."""
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"dataset root not found: {root}")
    records: list[dict] = []

    free_dir = root / "free"
    if free_dir.is_dir():
        for image_path in sorted(free_dir.iterdir()):
            if image_path.suffix.lower() not in _IMAGE_SUFFIXES:
                continue
            records.append(
                {"image": str(image_path.relative_to(root)), "mask": None, "class": 0}
            )

    for entry in sorted(root.iterdir()):
        match = _CLASS_DIR_RE.match(entry.name)
        if not match or not entry.is_dir():
            continue
        class_id = int(match.group(1))
        imgs_dir = entry / "imgs"
        masks_dir = entry / "masks"
        if not imgs_dir.is_dir():
            raise IngestionError(f"missing imgs directory under {entry}")
        for image_path in sorted(imgs_dir.iterdir()):
            if image_path.suffix.lower() not in _IMAGE_SUFFIXES:
                continue
            candidates = [
                masks_dir / (image_path.stem + suffix) for suffix in _IMAGE_SUFFIXES
            ]
            mask_path = next((p for p in candidates if p.exists()), None)
            if mask_path is None:
                raise IngestionError(
                    f"no mask for sample '{image_path.relative_to(root)}' "
                    f"under {masks_dir}"
                )
            records.append(
                {
                    "image": str(image_path.relative_to(root)),
                    "mask": str(mask_path.relative_to(root)),
                    "class": class_id,
                }
            )

    if not records:
        raise IngestionError(f"no samples found under {root}")
    return records


def read_directory_tree(root: Path | str) -> DatasetIndex:
    """Load the per-class directory convention."""
    root = Path(root)
    return load_records(root, scan_directory_tree(root))


def load_dataset(root_path: Path | str, layout: str = "manifest") -> DatasetIndex:
    """Ingest a dataset using the named layout adapter.

    ``layout="manifest"`` expects ``root_path`` to be the manifest file (or a
    directory containing ``manifest.jsonl``); ``layout="directory"`` expects
    the per-class directory tree.
    """
    root_path = Path(root_path)
    if layout == "manifest":
        if root_path.is_dir():
            root_path = root_path / "manifest.jsonl"
        return read_manifest(root_path)
    if layout == "directory":
        return read_directory_tree(root_path)
    raise ValueError(f"unknown layout '{layout}' (expected manifest|directory)")


def resize_sample(sample: Sample, height: int, width: int) -> Sample:
    """Optional resize step: bilinear for the image, nearest for the mask.

    Injection itself runs at native resolution; callers that need a fixed
    network input size apply this explicitly.
    """
    from scipy.ndimage import zoom

    if (height, width) == sample.image.shape:
        return sample
    zh = height / sample.image.height
    zw = width / sample.image.width
    data = np.stack(
        [
            np.clip(
                zoom(sample.image.data[c], (zh, zw), order=1,
                     grid_mode=True, mode="nearest"),
                0.0,
                1.0,
            )
            for c in range(3)
        ]
    )
    # order=0 keeps labels crisp integers
    labels = zoom(
        sample.mask.labels, (zh, zw), order=0, grid_mode=True, mode="nearest"
    )
    data = data[:, :height, :width]
    labels = labels[:height, :width]
    if data.shape[1:] != (height, width) or labels.shape != (height, width):
        raise ValueError("resize produced unexpected raster dimensions")
    return Sample(
        image=ImageBuffer(data),
        mask=SegMask(labels.astype(np.int32)),
        source_id=sample.source_id,
    )

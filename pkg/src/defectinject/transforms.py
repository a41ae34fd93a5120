"""Geometric augmentation of (defect image, mask) pairs.

Flips are exact axis reversals; rotation and scaling share one affine resample
about the frame center (bilinear for the image, nearest-neighbor for the mask,
so labels stay crisp integers). Positive angles rotate the content
counterclockwise as displayed (row 0 on top). Translation is not handled
here: placement inside the target is the injector's job.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import affine_transform

from .errors import TransformError
from .model import ImageBuffer, Sample, SegMask


@dataclass(frozen=True)
class TransformParams:
    """Sampling ranges for the augmentation draw.

    ``flip_h``/``flip_v`` are Bernoulli probabilities; rotation is drawn
    uniformly from [-rotation, rotation] degrees; scale uniformly from
    ``scale_range``. Set a probability to 0, rotation to 0, or the range to
    (1, 1) to switch an operation off. ``translate`` toggles randomized
    placement downstream (off means centered placement).
    """

    flip_h: float = 0.5
    flip_v: float = 0.5
    rotation: float = 180.0
    scale_range: tuple[float, float] = (0.8, 1.25)
    translate: bool = True

    def __post_init__(self):
        if not 0.0 <= self.flip_h <= 1.0 or not 0.0 <= self.flip_v <= 1.0:
            raise ValueError("flip probabilities must lie in [0, 1]")
        if self.rotation < 0:
            raise ValueError("rotation bound must be >= 0")
        smin, smax = self.scale_range
        if smin <= 0 or smin > smax:
            raise ValueError(f"invalid scale range {self.scale_range}")


@dataclass(frozen=True)
class TransformDraw:
    """One concrete parameter draw, recorded for provenance."""

    flip_h: bool
    flip_v: bool
    rotation_deg: float
    scale: float


def draw_transform(params: TransformParams, rng: np.random.Generator) -> TransformDraw:
    flip_h = bool(rng.random() < params.flip_h)
    flip_v = bool(rng.random() < params.flip_v)
    rotation = float(rng.uniform(-params.rotation, params.rotation)) \
        if params.rotation > 0 else 0.0
    smin, smax = params.scale_range
    scale = float(rng.uniform(smin, smax)) if smin < smax else float(smin)
    return TransformDraw(flip_h=flip_h, flip_v=flip_v,
                         rotation_deg=rotation, scale=scale)


def _rotate_scale(plane: np.ndarray, angle_deg: float, scale: float,
                  order: int) -> np.ndarray:
    """Resample one 2D plane rotated/scaled about its center.

    scipy's affine_transform maps output coords to input coords, so the
    matrix below is the inverse of the forward (rotate CCW by angle, then
    scale) map.
    """
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    # inverse map in (row, col) coordinates
    matrix = np.array([[cos_t, sin_t], [-sin_t, cos_t]]) / scale
    center = (np.asarray(plane.shape, dtype=np.float64) - 1.0) / 2.0
    offset = center - matrix @ center
    return affine_transform(
        plane, matrix, offset=offset, order=order,
        mode="constant", cval=0.0, prefilter=False,
    )


def apply_draw(image: ImageBuffer, mask: SegMask, draw: TransformDraw
               ) -> tuple[ImageBuffer, SegMask]:
    """Apply one draw to an image/mask pair with identical geometry."""
    data = image.data
    labels = mask.labels
    if draw.flip_h:
        data = data[:, :, ::-1]
        labels = labels[:, ::-1]
    if draw.flip_v:
        data = data[:, ::-1, :]
        labels = labels[::-1, :]
    if draw.rotation_deg != 0.0 or draw.scale != 1.0:
        data = np.stack(
            [_rotate_scale(data[c], draw.rotation_deg, draw.scale, order=1)
             for c in range(3)]
        )
        data = np.clip(data, 0.0, 1.0)
        labels = _rotate_scale(
            labels.astype(np.float64), draw.rotation_deg, draw.scale, order=0
        )
        labels = labels.astype(np.int32)
    return ImageBuffer(np.ascontiguousarray(data)), SegMask(np.ascontiguousarray(labels))


def transform_defect(
    donor: Sample,
    params: TransformParams,
    rng: np.random.Generator,
    max_retries: int = 16,
) -> tuple[Sample, TransformDraw]:
    """Draw and apply an augmentation, redrawing while the mask degenerates.

    A strong rotation or upscale can push the whole defect out of frame; such
    draws are discarded and redrawn up to ``max_retries`` times before a
    TransformError is raised.
    """
    if donor.mask.is_empty():
        raise TransformError(f"donor '{donor.source_id}' has an empty mask")
    last_draw: TransformDraw | None = None
    for _ in range(max_retries):
        draw = draw_transform(params, rng)
        last_draw = draw
        image, labels = apply_draw(donor.image, donor.mask, draw)
        if labels.is_empty():
            continue
        return (
            Sample(image=image, mask=labels, source_id=donor.source_id),
            draw,
        )
    raise TransformError(
        f"augmentation emptied the mask of '{donor.source_id}' "
        f"{max_retries} times in a row (last draw: {last_draw})"
    )

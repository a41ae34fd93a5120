"""Defect transfer: cut-paste and Poisson-backed injection of a donor defect
into a defect-free target.

Both methods move the donor mask's support by a placement offset into the
target frame and write only under that support (cut-paste verbatim, Poisson
via the seamless-clone solve), so every pixel outside the injected mask is
bit-identical to the target. ``inject`` drives the full pipeline: augment the
donor, sample an in-bounds placement, pick a method, and record provenance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConvergenceError,
    InjectionError,
    PlacementError,
    TransformError,
)
from .model import ImageBuffer, InjectionRecord, Sample, SegMask
from .poisson import SolverConfig, build_region, guidance_field, solve
from .transforms import TransformDraw, TransformParams, transform_defect

METHOD_POISSON = "poisson"
METHOD_CUT_PASTE = "cut-paste"


@dataclass(frozen=True)
class InjectionConfig:
    """Knobs for one injection: method mix, augmentation, solver, retries."""

    poisson_probability: float = 0.5
    transform: TransformParams = field(default_factory=TransformParams)
    solver: SolverConfig = field(default_factory=SolverConfig)
    max_placement_retries: int = 16

    def __post_init__(self):
        if not 0.0 <= self.poisson_probability <= 1.0:
            raise ValueError("poisson_probability must lie in [0, 1]")
        if self.max_placement_retries < 1:
            raise ValueError("max_placement_retries must be >= 1")


def _mask_support(mask: SegMask) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.nonzero(mask.labels)
    if rows.size == 0:
        raise PlacementError("donor mask is empty")
    return rows, cols


def _shifted_mask(
    mask: SegMask,
    rows: np.ndarray,
    cols: np.ndarray,
    offset: tuple[int, int],
    shape: tuple[int, int],
) -> SegMask:
    out = np.zeros(shape, dtype=np.int32)
    out[rows + offset[0], cols + offset[1]] = mask.labels[rows, cols]
    return SegMask(out)


def cut_paste(
    target: ImageBuffer, donor: Sample, placement_offset: tuple[int, int]
) -> tuple[ImageBuffer, SegMask]:
    """Copy donor pixels verbatim under the translated mask support."""
    rows, cols = _mask_support(donor.mask)
    dr, dc = int(placement_offset[0]), int(placement_offset[1])
    t_rows, t_cols = rows + dr, cols + dc
    if (
        t_rows.min() < 0
        or t_rows.max() >= target.height
        or t_cols.min() < 0
        or t_cols.max() >= target.width
    ):
        raise PlacementError(
            f"mask leaves the {target.height}x{target.width} target "
            f"at offset ({dr}, {dc})"
        )
    out = target.data.copy()
    out[:, t_rows, t_cols] = donor.image.data[:, rows, cols]
    out_mask = _shifted_mask(donor.mask, rows, cols, (dr, dc), target.shape)
    return ImageBuffer(out), out_mask


def poisson_inject(
    target: ImageBuffer,
    donor: Sample,
    placement_offset: tuple[int, int],
    solver: SolverConfig = SolverConfig(),
) -> tuple[ImageBuffer, SegMask]:
    """Seamlessly clone the donor defect region into the target.

    The donor image is aligned to target coordinates by the placement offset;
    source values for the guidance stencil are read with edge clamping so a
    defect touching the donor frame border still has gradient data.
    """
    rows, cols = _mask_support(donor.mask)
    dr, dc = int(placement_offset[0]), int(placement_offset[1])
    region = build_region(donor.mask, (dr, dc), target.shape)

    # source aligned to the target frame over interior + 4-neighborhood
    aligned = np.zeros_like(target.data)
    lo_r = region.interior[:, 0].min() - 1
    hi_r = region.interior[:, 0].max() + 1
    lo_c = region.interior[:, 1].min() - 1
    hi_c = region.interior[:, 1].max() + 1
    tr = np.arange(lo_r, hi_r + 1)
    tc = np.arange(lo_c, hi_c + 1)
    src_r = np.clip(tr - dr, 0, donor.image.height - 1)
    src_c = np.clip(tc - dc, 0, donor.image.width - 1)
    aligned[:, lo_r:hi_r + 1, lo_c:hi_c + 1] = donor.image.data[
        :, src_r[:, None], src_c[None, :]
    ]

    guidance = guidance_field(aligned, region)
    blended = solve(target, guidance, region, solver)
    out_mask = _shifted_mask(donor.mask, rows, cols, (dr, dc), target.shape)
    return blended, out_mask


def _placement_bounds(
    mask: SegMask, target_shape: tuple[int, int], margin: int
) -> tuple[int, int, int, int] | None:
    """Inclusive offset ranges keeping the mask support ``margin`` pixels
    inside the target; None when the support cannot fit."""
    rows, cols = np.nonzero(mask.labels)
    height, width = target_shape
    dr_lo = margin - int(rows.min())
    dr_hi = height - 1 - margin - int(rows.max())
    dc_lo = margin - int(cols.min())
    dc_hi = width - 1 - margin - int(cols.max())
    if dr_lo > dr_hi or dc_lo > dc_hi:
        return None
    return dr_lo, dr_hi, dc_lo, dc_hi


def _centered_offset(mask: SegMask, target_shape: tuple[int, int]) -> tuple[int, int]:
    rows, cols = np.nonzero(mask.labels)
    dr = (target_shape[0] - 1) // 2 - int(rows.min() + rows.max()) // 2
    dc = (target_shape[1] - 1) // 2 - int(cols.min() + cols.max()) // 2
    return dr, dc


def inject(
    target: ImageBuffer,
    donor: Sample,
    cfg: InjectionConfig,
    rng: np.random.Generator,
    seed: int = 0,
    method_override: str | None = None,
    target_id: str = "injected",
) -> tuple[Sample, InjectionRecord]:
    """Augment the donor, place it uniformly in-bounds, and inject.

    Placement always keeps a 1-pixel border margin (required by Poisson,
    harmless for cut-paste) so the method draw never changes the offset
    distribution. Failed attempts (degenerate transform, unfittable mask,
    solver non-convergence) are retried with fresh draws up to
    ``max_placement_retries`` before an InjectionError is raised. ``seed`` is
    recorded in the provenance only; the caller owns the generator.
    """
    if method_override not in (None, METHOD_POISSON, METHOD_CUT_PASTE):
        raise ValueError(f"unknown method '{method_override}'")
    last_error: Exception | None = None
    for _ in range(cfg.max_placement_retries):
        try:
            moved, draw = transform_defect(
                donor, cfg.transform, rng, cfg.max_placement_retries
            )
        except TransformError as exc:
            last_error = exc
            continue

        bounds = _placement_bounds(moved.mask, target.shape, margin=1)
        if bounds is None:
            last_error = PlacementError(
                f"defect of '{donor.source_id}' cannot fit inside "
                f"{target.height}x{target.width} target"
            )
            continue
        dr_lo, dr_hi, dc_lo, dc_hi = bounds
        if cfg.transform.translate:
            offset = (
                int(rng.integers(dr_lo, dr_hi + 1)),
                int(rng.integers(dc_lo, dc_hi + 1)),
            )
        else:
            dr, dc = _centered_offset(moved.mask, target.shape)
            offset = (
                min(max(dr, dr_lo), dr_hi),
                min(max(dc, dc_lo), dc_hi),
            )

        if method_override is not None:
            method = method_override
        else:
            method = (
                METHOD_POISSON
                if rng.random() < cfg.poisson_probability
                else METHOD_CUT_PASTE
            )
        try:
            if method == METHOD_POISSON:
                image, mask = poisson_inject(target, moved, offset, cfg.solver)
            else:
                image, mask = cut_paste(target, moved, offset)
        except (PlacementError, ConvergenceError) as exc:
            last_error = exc
            continue

        record = _make_record(donor, draw, method, offset, seed)
        sample = Sample(image=image, mask=mask, source_id=target_id)
        return sample, record

    raise InjectionError(
        f"no valid injection of '{donor.source_id}' after "
        f"{cfg.max_placement_retries} attempts"
    ) from last_error


def _make_record(
    donor: Sample,
    draw: TransformDraw,
    method: str,
    offset: tuple[int, int],
    seed: int,
) -> InjectionRecord:
    return InjectionRecord(
        method=method,
        donor_id=donor.source_id,
        class_id=donor.defect_class,
        flip_h=draw.flip_h,
        flip_v=draw.flip_v,
        rotation_deg=draw.rotation_deg,
        scale=draw.scale,
        placement=offset,
        seed=seed,
    )

"""Discrete Poisson seamless cloning on mask-defined regions.

The cloning region is the set of nonzero mask pixels translated into the
target frame; its boundary is the 4-neighborhood ring around it. Blending
solves, per color channel, the 5-point Laplacian system

    4 g(p) - sum_{q in N4(p), q interior} g(q)
        = guidance(p) + sum_{q in N4(p), q boundary} target(q)

where ``guidance`` is the discrete Laplacian of the source patch, so interior
gradients follow the source while the result meets the target exactly on the
boundary ring. The matrix is symmetric positive definite; conjugate gradient
(Jacobi-preconditioned, warm-started from the target values) is the default
backend, with a dense LAPACK factorization as an independent oracle and
fallback.

Sign convention: the operator above is the *negated* 5-point Laplacian, and
``guidance_field`` evaluates the matching stencil on the source, so the two
sides agree without extra signs anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConvergenceError, EmptyRegionError, PlacementError
from .model import ImageBuffer, SegMask

# 4-neighborhood, (drow, dcol): up, down, left, right
_N4 = np.array([(-1, 0), (1, 0), (0, -1), (0, 1)], dtype=np.int64)

MAX_ITERATIONS_CAP = 20000


@dataclass(frozen=True)
class SolverConfig:
    """Linear-solver knobs shared by cloning and verification paths."""

    rel_tolerance: float = 1e-8
    max_iterations: int | None = None  # None -> min(10 * |interior|, cap)
    backend: str = "cg"  # "cg" | "dense-direct"

    def __post_init__(self):
        if self.rel_tolerance <= 0:
            raise ValueError("rel_tolerance must be positive")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.backend not in ("cg", "dense-direct"):
            raise ValueError(f"unknown backend '{self.backend}'")

    def iteration_budget(self, interior_size: int) -> int:
        if self.max_iterations is not None:
            return self.max_iterations
        return min(10 * interior_size, MAX_ITERATIONS_CAP)


@dataclass(frozen=True)
class RegionTopology:
    """Interior/boundary pixel structure of a cloning region.

    ``interior`` is ordered (row-major); ``neighbor_ranks[i, d]`` is the
    interior index of pixel i's d-th 4-neighbor, or -1 when that neighbor is
    boundary. ``neighbor_coords[i, d]`` holds the neighbor's (row, col).
    Disconnected regions are supported; the system simply becomes
    block-diagonal.
    """

    interior: np.ndarray  # (n, 2) int64, row-major order
    neighbor_ranks: np.ndarray  # (n, 4) int64
    neighbor_coords: np.ndarray  # (n, 4, 2) int64
    target_shape: tuple[int, int]

    @property
    def size(self) -> int:
        return self.interior.shape[0]

    @property
    def interior_rank(self) -> dict[tuple[int, int], int]:
        return {(int(r), int(c)): i for i, (r, c) in enumerate(self.interior)}

    @property
    def boundary(self) -> frozenset[tuple[int, int]]:
        mask = self.neighbor_ranks < 0
        coords = self.neighbor_coords[mask]
        return frozenset((int(r), int(c)) for r, c in coords)

    def interior_set(self) -> frozenset[tuple[int, int]]:
        return frozenset((int(r), int(c)) for r, c in self.interior)

    def exterior_mask(self) -> np.ndarray:
        """Boolean (H, W) raster, True outside the interior."""
        out = np.ones(self.target_shape, dtype=bool)
        out[self.interior[:, 0], self.interior[:, 1]] = False
        return out


@dataclass(frozen=True)
class GuidanceField:
    """Right-hand-side stencil values, one scalar per (channel, interior pixel)."""

    values: np.ndarray  # (3, n) float64

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != 3:
            raise ValueError(f"guidance must be (3, n), got {values.shape}")
        if not np.isfinite(values).all():
            raise ValueError("guidance contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def size(self) -> int:
        return self.values.shape[1]


def build_region(
    mask: SegMask,
    placement_offset: tuple[int, int],
    target_shape: tuple[int, int],
) -> RegionTopology:
    """Translate the mask's support into the target frame and index it.

    Every translated pixel must sit strictly inside the target (>= 1 pixel
    from each border) so the Dirichlet ring exists; violations raise
    PlacementError and the caller re-translates or shrinks.
    """
    height, width = target_shape
    rows, cols = np.nonzero(mask.labels)
    if rows.size == 0:
        raise EmptyRegionError("cannot build a cloning region from an empty mask")
    dr, dc = int(placement_offset[0]), int(placement_offset[1])
    interior = np.stack([rows + dr, cols + dc], axis=1).astype(np.int64)

    bad = (
        (interior[:, 0] < 1)
        | (interior[:, 0] >= height - 1)
        | (interior[:, 1] < 1)
        | (interior[:, 1] >= width - 1)
    )
    if bad.any():
        r, c = interior[np.argmax(bad)]
        raise PlacementError(
            f"region pixel ({r}, {c}) touches or leaves the {height}x{width} "
            f"target border at offset ({dr}, {dc})"
        )

    # np.nonzero already yields row-major order
    rank_grid = np.full(target_shape, -1, dtype=np.int64)
    rank_grid[interior[:, 0], interior[:, 1]] = np.arange(interior.shape[0])

    neighbor_coords = interior[:, None, :] + _N4[None, :, :]  # (n, 4, 2)
    neighbor_ranks = rank_grid[neighbor_coords[..., 0], neighbor_coords[..., 1]]

    return RegionTopology(
        interior=interior,
        neighbor_ranks=neighbor_ranks,
        neighbor_coords=neighbor_coords,
        target_shape=(height, width),
    )


def _as_chw(image: ImageBuffer | np.ndarray) -> np.ndarray:
    data = image.data if isinstance(image, ImageBuffer) else np.asarray(image)
    if data.ndim != 3 or data.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) raster, got {data.shape}")
    return data.astype(np.float64, copy=False)


def guidance_field(
    source: ImageBuffer | np.ndarray, region: RegionTopology
) -> GuidanceField:
    """Stencil values of the source over the interior: 4*s(p) - sum s(q).

    The source must already be aligned to target coordinates and cover the
    interior plus its 4-neighbors.
    """
    data = _as_chw(source)
    rows, cols = region.interior[:, 0], region.interior[:, 1]
    center = data[:, rows, cols]
    # summed as per-neighbor differences: exactly zero on constant sources
    acc = np.zeros_like(center)
    for d in range(4):
        nr = region.neighbor_coords[:, d, 0]
        nc = region.neighbor_coords[:, d, 1]
        acc += center - data[:, nr, nc]
    return GuidanceField(values=acc)


def system_matrix(region: RegionTopology) -> sp.csr_matrix:
    """Assemble the SPD 5-point operator restricted to the interior."""
    n = region.size
    diag_rows = np.arange(n, dtype=np.int64)
    inner = region.neighbor_ranks >= 0
    off_rows = np.repeat(diag_rows, 4)[inner.ravel()]
    off_cols = region.neighbor_ranks.ravel()[inner.ravel()]
    rows = np.concatenate([diag_rows, off_rows])
    cols = np.concatenate([diag_rows, off_cols])
    data = np.concatenate([np.full(n, 4.0), np.full(off_rows.size, -1.0)])
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def boundary_rhs(target_data: np.ndarray, region: RegionTopology) -> np.ndarray:
    """Dirichlet contribution: per channel, sum of target values over the
    boundary neighbors of each interior pixel."""
    rhs = np.zeros((3, region.size), dtype=np.float64)
    outer = region.neighbor_ranks < 0
    for d in range(4):
        sel = outer[:, d]
        if not sel.any():
            continue
        nr = region.neighbor_coords[sel, d, 0]
        nc = region.neighbor_coords[sel, d, 1]
        rhs[:, sel] += target_data[:, nr, nc]
    return rhs


def _pcg(
    matrix: sp.csr_matrix,
    b: np.ndarray,
    x0: np.ndarray,
    rel_tolerance: float,
    max_iterations: int,
) -> tuple[np.ndarray, float, int]:
    """Jacobi-preconditioned conjugate gradient.

    Stops when ||b - A x||_2 <= rel_tolerance * ||b - A x0||_2. Returns
    (solution, residual_ratio, iterations); raises ConvergenceError when the
    iteration budget is exhausted first.
    """
    inv_diag = 1.0 / matrix.diagonal()
    x = x0.astype(np.float64, copy=True)
    r = b - matrix @ x
    r0_norm = float(np.linalg.norm(r))
    if r0_norm == 0.0:
        return x, 0.0, 0
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    for iteration in range(1, max_iterations + 1):
        ap = matrix @ p
        alpha = rz / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        ratio = float(np.linalg.norm(r)) / r0_norm
        if ratio <= rel_tolerance:
            return x, ratio, iteration
        z = inv_diag * r
        rz_next = float(r @ z)
        p = z + (rz_next / rz) * p
        rz = rz_next
    ratio = float(np.linalg.norm(b - matrix @ x)) / r0_norm
    raise ConvergenceError(
        f"conjugate gradient stalled at residual ratio {ratio:.3e} "
        f"(> {rel_tolerance:.3e}) after {max_iterations} iterations",
        residual_ratio=ratio,
        iterations=max_iterations,
    )


def solve_region_values(
    target: ImageBuffer | np.ndarray,
    guidance: GuidanceField,
    region: RegionTopology,
    cfg: SolverConfig = SolverConfig(),
) -> np.ndarray:
    """Solve the blending system; returns raw (3, n) interior values, unclamped.

    CG warm-starts from the target's own interior values, which makes the
    identity clone (source == target) and pure membrane cases exact.
    """
    if guidance.size != region.size:
        raise ValueError(
            f"guidance size {guidance.size} does not match region {region.size}"
        )
    target_data = _as_chw(target)
    if target_data.shape[1:] != region.target_shape:
        raise ValueError(
            f"target {target_data.shape[1:]} does not match region frame "
            f"{region.target_shape}"
        )
    matrix = system_matrix(region)
    rhs = guidance.values + boundary_rhs(target_data, region)
    rows, cols = region.interior[:, 0], region.interior[:, 1]

    out = np.empty((3, region.size), dtype=np.float64)
    if cfg.backend == "dense-direct":
        dense = matrix.toarray()
        out[:] = np.linalg.solve(dense, rhs.T).T
        return out

    budget = cfg.iteration_budget(region.size)
    for ch in range(3):
        x0 = target_data[ch, rows, cols]
        out[ch], _, _ = _pcg(matrix, rhs[ch], x0, cfg.rel_tolerance, budget)
    return out


def compose_solution(
    target: ImageBuffer | np.ndarray,
    region: RegionTopology,
    values: np.ndarray,
    clamp: bool = False,
) -> np.ndarray:
    """Write interior values into a copy of the target frame."""
    target_data = _as_chw(target)
    out = target_data.copy()
    vals = np.clip(values, 0.0, 1.0) if clamp else values
    out[:, region.interior[:, 0], region.interior[:, 1]] = vals
    return out


def solve(
    target: ImageBuffer,
    guidance: GuidanceField,
    region: RegionTopology,
    cfg: SolverConfig = SolverConfig(),
) -> ImageBuffer:
    """Seamless-clone solve: interior replaced by the blended solution
    (clamped to [0, 1]); every pixel outside the region is bit-identical to
    the target."""
    values = solve_region_values(target, guidance, region, cfg)
    return ImageBuffer(compose_solution(target, region, values, clamp=True))


def residual(
    solution: ImageBuffer | np.ndarray,
    guidance: GuidanceField,
    region: RegionTopology,
) -> float:
    """Max-abs stencil residual of a candidate solution over the interior.

    Boundary values are taken from the solution raster itself, so an exact
    solve (which leaves the boundary at target values) scores 0. Accepts raw
    (3, H, W) arrays so pre-clamp solutions can be checked.
    """
    data = _as_chw(solution)
    lap = guidance_field(data, region).values
    return float(np.abs(lap - guidance.values).max())

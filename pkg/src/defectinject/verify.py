"""Self-verification suites: solver oracle equivalence, loss-gradient checks,
and balancer loop properties, all on synthetic fixtures.

Each check returns a CheckResult with the measured value and its threshold so
the CLI can print one line per property. A ConvergenceError raised by a
deliberately starved solver config is allowed to propagate: surfacing it is
the point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .balance import BalanceConfig, balance_batch
from .metrics import bce_loss, dice_loss
from .model import (
    Batch,
    DatasetIndex,
    ImageBuffer,
    Sample,
    SegMask,
    validate_single_class,
)
from .poisson import (
    SolverConfig,
    build_region,
    compose_solution,
    guidance_field,
    residual,
    solve_region_values,
)

DENSE_RESIDUAL_BOUND = 1e-9
ORACLE_EQUIVALENCE_BOUND = 1e-4
GRADIENT_RELATIVE_BOUND = 1e-4
FD_STEP = 1e-5


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    measured: float
    threshold: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return (
            f"[{status}] {self.name}: measured {self.measured:.3e} "
            f"vs bound {self.threshold:.3e}{extra}"
        )


def random_region_mask(
    rng: np.random.Generator, frame: tuple[int, int], max_side: int = 32
) -> SegMask:
    """Mask of 1-2 random rectangles, total interior <= max_side**2, placed
    with a 1-pixel margin inside the frame."""
    height, width = frame
    labels = np.zeros(frame, dtype=np.int32)
    blocks = 1 if rng.random() < 0.5 else 2
    side_cap = max_side if blocks == 1 else max_side // 2
    for _ in range(blocks):
        h = int(rng.integers(1, min(side_cap, height - 2) + 1))
        w = int(rng.integers(1, min(side_cap, width - 2) + 1))
        r0 = int(rng.integers(1, height - 1 - h + 1))
        c0 = int(rng.integers(1, width - 1 - w + 1))
        labels[r0:r0 + h, c0:c0 + w] = 1
    return SegMask(labels)


def random_clone_instance(
    rng: np.random.Generator, frame: tuple[int, int] = (40, 40), max_side: int = 32
):
    """(target, source, region, guidance) with |interior| <= max_side**2."""
    mask = random_region_mask(rng, frame, max_side)
    target = ImageBuffer(rng.uniform(0.0, 1.0, (3, *frame)))
    source = ImageBuffer(rng.uniform(0.0, 1.0, (3, *frame)))
    region = build_region(mask, (0, 0), frame)
    guidance = guidance_field(source, region)
    return target, source, region, guidance


def solver_oracle_suite(
    cfg: SolverConfig = SolverConfig(),
    instances: int = 100,
    seed: int = 20240,
) -> list[CheckResult]:
    """CG vs dense factorization on random clone instances, pre-clamp, plus
    residual bounds for both backends."""
    rng = np.random.default_rng(seed)
    dense_cfg = SolverConfig(
        rel_tolerance=cfg.rel_tolerance,
        max_iterations=cfg.max_iterations,
        backend="dense-direct",
    )
    cg_cfg = SolverConfig(
        rel_tolerance=cfg.rel_tolerance,
        max_iterations=cfg.max_iterations,
        backend="cg",
    )
    worst_gap = 0.0
    worst_dense_res = 0.0
    worst_cg_ratio = 0.0
    for _ in range(instances):
        target, _, region, guidance = random_clone_instance(rng)
        v_cg = solve_region_values(target, guidance, region, cg_cfg)
        v_dense = solve_region_values(target, guidance, region, dense_cfg)
        worst_gap = max(worst_gap, float(np.abs(v_cg - v_dense).max()))

        dense_full = compose_solution(target, region, v_dense)
        worst_dense_res = max(worst_dense_res, residual(dense_full, guidance, region))

        # CG's stencil residual against its own convergence contract
        cg_full = compose_solution(target, region, v_cg)
        initial = _initial_residual_norm(target, guidance, region)
        if initial > 0:
            ratio = residual(cg_full, guidance, region) / initial
            worst_cg_ratio = max(worst_cg_ratio, ratio)
    return [
        CheckResult(
            "solver-oracle-equivalence",
            worst_gap <= ORACLE_EQUIVALENCE_BOUND,
            worst_gap,
            ORACLE_EQUIVALENCE_BOUND,
            f"{instances} instances",
        ),
        CheckResult(
            "dense-direct-residual",
            worst_dense_res <= DENSE_RESIDUAL_BOUND,
            worst_dense_res,
            DENSE_RESIDUAL_BOUND,
        ),
        CheckResult(
            "cg-residual-contract",
            worst_cg_ratio <= cfg.rel_tolerance,
            worst_cg_ratio,
            cfg.rel_tolerance,
            "max-abs stencil residual / initial residual norm",
        ),
    ]


def _initial_residual_norm(target, guidance, region) -> float:
    """||b - A x0||_2 with the warm start x0 = target interior values: this
    equals the norm of (guidance - target stencil values)."""
    start = guidance_field(target, region).values
    return float(np.linalg.norm(guidance.values - start))


def gradient_suite(
    instances: int = 100, side: int = 8, seed: int = 777
) -> list[CheckResult]:
    """Central finite differences against the analytic gradients."""
    rng = np.random.default_rng(seed)
    worst = {"bce": 0.0, "dice": 0.0}
    for _ in range(instances):
        pred = rng.uniform(0.02, 0.98, (side, side))
        gt = rng.integers(0, 2, (side, side)).astype(np.float64)
        for name, fn in (("bce", bce_loss), ("dice", dice_loss)):
            _, grad = fn(pred, gt)
            fd = np.zeros_like(pred)
            for idx in np.ndindex(pred.shape):
                hi = pred.copy()
                hi[idx] += FD_STEP
                lo = pred.copy()
                lo[idx] -= FD_STEP
                fd[idx] = (fn(hi, gt)[0] - fn(lo, gt)[0]) / (2.0 * FD_STEP)
            rel = float(np.linalg.norm(grad - fd) / np.linalg.norm(fd))
            worst[name] = max(worst[name], rel)
    return [
        CheckResult(
            f"{name}-gradient-check",
            value <= GRADIENT_RELATIVE_BOUND,
            value,
            GRADIENT_RELATIVE_BOUND,
            f"{instances} random {side}x{side} instances",
        )
        for name, value in worst.items()
    ]


def synthetic_index(
    donors_per_class: dict[int, int],
    free_count: int,
    frame: tuple[int, int] = (24, 24),
    defect_side: int = 3,
    seed: int = 99,
) -> DatasetIndex:
    """In-memory index with the requested pool sizes (tiny random rasters)."""
    rng = np.random.default_rng(seed)
    height, width = frame

    def make_free(i: int) -> Sample:
        return Sample(
            ImageBuffer(rng.uniform(0.1, 0.9, (3, height, width))),
            SegMask.zeros(height, width),
            f"free/{i:04d}",
        )

    def make_defect(class_id: int, i: int) -> Sample:
        labels = np.zeros(frame, dtype=np.int32)
        r0 = int(rng.integers(1, height - 1 - defect_side))
        c0 = int(rng.integers(1, width - 1 - defect_side))
        labels[r0:r0 + defect_side, c0:c0 + defect_side] = class_id
        return Sample(
            ImageBuffer(rng.uniform(0.0, 1.0, (3, height, width))),
            SegMask(labels),
            f"class_{class_id}/{i:04d}",
        )

    return DatasetIndex(
        free_pool=tuple(make_free(i) for i in range(free_count)),
        class_pools={
            c: tuple(make_defect(c, i) for i in range(n))
            for c, n in donors_per_class.items()
        },
    )


def balancer_suite(
    cfg: BalanceConfig | None = None,
    batches: int = 50,
    batch_size: int = 15,
    seed: int = 424242,
) -> list[CheckResult]:
    """Balance crafted batches on Magnetic-Tiles-ratio pools and audit the
    loop: exact uniformity, argmin targeting, gap monotonicity, single-class
    masks, and byte-identical re-runs."""
    from .balance import select_minority_class  # local to keep imports light
    from .model import class_histogram

    cfg = cfg or BalanceConfig(uniformity_slack=0)
    index = synthetic_index(
        {1: 115, 2: 85, 3: 57, 4: 32, 5: 103}, free_count=952, seed=seed
    )
    num_classes = index.num_classes
    rng = np.random.default_rng(seed)
    per_class = batch_size // num_classes

    uniform_failures = 0
    argmin_failures = 0
    gap_failures = 0
    mask_failures = 0
    determinism_failures = 0
    for b in range(batches):
        # 3 donors of one seeded class + frees: initial max equals the
        # uniformity target batch_size / C, so exact balance is reachable
        class_id = int(rng.integers(1, num_classes + 1))
        donors = [
            index.class_pools[class_id][int(rng.integers(len(index.class_pools[class_id])))]
            for _ in range(per_class)
        ]
        frees = [
            index.free_pool[int(rng.integers(len(index.free_pool)))]
            for _ in range(batch_size - per_class)
        ]
        batch = Batch(samples=tuple(donors + frees), num_classes=num_classes)
        outcome = balance_batch(batch, index, cfg, seed=seed + b)
        counts = outcome.histogram.as_list()
        # slack 0 on these crafted batches must land exactly on the target
        exact_ok = (
            counts == [per_class] * num_classes
            if cfg.uniformity_slack == 0
            else outcome.histogram.gap() <= cfg.uniformity_slack
        )
        if not exact_ok or outcome.saturated:
            uniform_failures += 1
        running = class_histogram(batch)
        for event in outcome.trace:
            if event.class_id != select_minority_class(running):
                argmin_failures += 1
            if not event.bootstrap and event.gap_after > event.gap_before:
                gap_failures += 1
            running = running.bump(event.class_id)
        for sample in outcome.batch.samples:
            if not validate_single_class(sample.mask).ok:
                mask_failures += 1
        rerun = balance_batch(batch, index, cfg, seed=seed + b)
        if rerun.trace != outcome.trace or any(
            not np.array_equal(a.image.data, b2.image.data)
            for a, b2 in zip(outcome.batch.samples, rerun.batch.samples)
        ):
            determinism_failures += 1

    def check(name: str, failures: int, detail: str = "") -> CheckResult:
        return CheckResult(name, failures == 0, float(failures), 0.0, detail)

    return [
        check("balancer-exact-uniformity", uniform_failures, f"{batches} batches"),
        check("balancer-argmin-targeting", argmin_failures),
        check("balancer-monotone-gap", gap_failures),
        check("balancer-single-class-masks", mask_failures),
        check("balancer-determinism", determinism_failures),
    ]


def starved_solver_probe(cfg: SolverConfig, seed: int = 5) -> None:
    """Solve one 32x32 region with the given config; propagates
    ConvergenceError when the iteration budget cannot reach tolerance."""
    rng = np.random.default_rng(seed)
    frame = (40, 40)
    mask = SegMask(np.ones((32, 32), dtype=np.int32))
    region = build_region(mask, (2, 2), frame)
    target = ImageBuffer(rng.uniform(0.0, 1.0, (3, *frame)))
    source = ImageBuffer(rng.uniform(0.0, 1.0, (3, *frame)))
    guidance = guidance_field(source, region)
    solve_region_values(target, guidance, region, cfg)


def run_all(
    solver_cfg: SolverConfig = SolverConfig(),
    balance_cfg: BalanceConfig | None = None,
    solver_instances: int = 100,
    gradient_instances: int = 100,
    balancer_batches: int = 50,
    seed: int = 20240,
) -> list[CheckResult]:
    if solver_cfg.backend == "cg":
        starved_solver_probe(solver_cfg)
    results = solver_oracle_suite(solver_cfg, solver_instances, seed)
    results += gradient_suite(gradient_instances, seed=seed + 1)
    results += balancer_suite(balance_cfg, batches=balancer_batches, seed=seed + 2)
    return results

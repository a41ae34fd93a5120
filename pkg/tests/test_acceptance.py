"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line with the measured value at its pinned tolerance.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the report lines.
"""

from __future__ import annotations

import time

import numpy as np
import pytest

from defectinject.balance import (
    BalanceConfig,
    balance_batch,
    select_minority_class,
)
from defectinject.cli import main
from defectinject.inject import (
    METHOD_POISSON,
    InjectionConfig,
    inject,
    poisson_inject,
)
from defectinject.metrics import (
    ConfusionCounts,
    accumulate,
    bce_loss,
    dataset_iou,
    dice_loss,
    wce_loss,
)
from defectinject.model import (
    Batch,
    ImageBuffer,
    Sample,
    SegMask,
    class_histogram,
    validate_single_class,
)
from defectinject.poisson import (
    SolverConfig,
    compose_solution,
    guidance_field,
    residual,
    solve_region_values,
)
from defectinject.transforms import TransformParams
from defectinject.verify import random_clone_instance, random_region_mask

from conftest import MT_FREE
from test_dataset import build_tree


def report(name: str, passed: bool, detail: str) -> None:
    print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
    assert passed, f"{name}: {detail}"


def fast_transform() -> TransformParams:
    return TransformParams(rotation=25.0, scale_range=(0.9, 1.1))


# ---------------------------------------------------------------------------
# solver criteria


def test_solver_oracle_equivalence():
    """CG vs dense-direct within 1e-4 max-abs (pre-clamp) on 100 random
    instances with |interior| <= 1024, in under 60 s."""
    rng = np.random.default_rng(101)
    start = time.time()
    worst = 0.0
    for _ in range(100):
        target, _, region, g = random_clone_instance(rng)
        assert region.size <= 1024
        v_cg = solve_region_values(target, g, region, SolverConfig(backend="cg"))
        v_dense = solve_region_values(
            target, g, region, SolverConfig(backend="dense-direct")
        )
        worst = max(worst, float(np.abs(v_cg - v_dense).max()))
    elapsed = time.time() - start
    report(
        "solver-oracle-equivalence",
        worst <= 1e-4 and elapsed <= 60.0,
        f"max |cg - dense| = {worst:.3e} (<= 1e-4), runtime {elapsed:.1f}s (<= 60s)",
    )


def test_discrete_residual_bounds():
    """Dense solutions: stencil residual <= 1e-9. CG solutions: residual
    <= rel_tolerance x initial residual norm."""
    rng = np.random.default_rng(102)
    cfg = SolverConfig()
    worst_dense = 0.0
    worst_cg_ratio = 0.0
    for _ in range(50):
        target, _, region, g = random_clone_instance(rng)
        v_dense = solve_region_values(
            target, g, region, SolverConfig(backend="dense-direct")
        )
        worst_dense = max(
            worst_dense, residual(compose_solution(target, region, v_dense), g, region)
        )
        v_cg = solve_region_values(target, g, region, cfg)
        initial = float(
            np.linalg.norm(g.values - guidance_field(target, region).values)
        )
        if initial > 0:
            ratio = residual(compose_solution(target, region, v_cg), g, region) / initial
            worst_cg_ratio = max(worst_cg_ratio, ratio)
    report(
        "discrete-residual",
        worst_dense <= 1e-9 and worst_cg_ratio <= cfg.rel_tolerance,
        f"dense max residual {worst_dense:.3e} (<= 1e-9), "
        f"cg ratio {worst_cg_ratio:.3e} (<= {cfg.rel_tolerance:.0e})",
    )


def test_identity_clone():
    """Poisson-injecting an image into itself stays within 1e-6 per channel
    on 20 random masks."""
    rng = np.random.default_rng(103)
    worst = 0.0
    for _ in range(20):
        frame = (24, 24)
        target = ImageBuffer(rng.uniform(0, 1, (3, *frame)))
        mask = random_region_mask(rng, frame, max_side=10)
        labels = np.where(mask.labels > 0, 2, 0).astype(np.int32)
        donor = Sample(target, SegMask(labels), "self")
        blended, _ = poisson_inject(target, donor, (0, 0))
        worst = max(worst, float(np.abs(blended.data - target.data).max()))
    report(
        "identity-clone",
        worst <= 1e-6,
        f"max |clone - target| = {worst:.3e} (<= 1e-6) over 20 masks",
    )


# ---------------------------------------------------------------------------
# injection criteria


def test_exterior_immutability_both_methods():
    """100 random injections: every pixel outside the injected mask support
    is bit-identical to the target."""
    rng = np.random.default_rng(104)
    cfg = InjectionConfig(poisson_probability=0.5, transform=fast_transform())
    clean = 0
    total = 100
    for k in range(total):
        frame = 20
        target = ImageBuffer(rng.uniform(0, 1, (3, frame, frame)))
        labels = np.zeros((frame, frame), dtype=np.int32)
        side = int(rng.integers(2, 6))
        r0 = int(rng.integers(1, frame - side - 1))
        c0 = int(rng.integers(1, frame - side - 1))
        labels[r0:r0 + side, c0:c0 + side] = int(rng.integers(1, 6))
        donor = Sample(
            ImageBuffer(rng.uniform(0, 1, (3, frame, frame))),
            SegMask(labels),
            f"d{k}",
        )
        sample, record = inject(target, donor, cfg, np.random.default_rng(k), seed=k)
        outside = sample.mask.labels == 0
        if np.array_equal(sample.image.data[:, outside], target.data[:, outside]):
            clean += 1
    report(
        "exterior-immutability",
        clean == total,
        f"{clean}/{total} injections bit-identical outside the mask "
        "(zero tolerance)",
    )


def test_method_mix_statistics():
    """poisson_probability=0.5 over >= 2000 injections: observed share in
    [0.45, 0.55]."""
    rng = np.random.default_rng(105)
    target = ImageBuffer(rng.uniform(0, 1, (3, 16, 16)))
    labels = np.zeros((16, 16), dtype=np.int32)
    labels[7:9, 7:9] = 1
    donor = Sample(ImageBuffer(rng.uniform(0, 1, (3, 16, 16))), SegMask(labels), "d")
    cfg = InjectionConfig(
        poisson_probability=0.5,
        transform=TransformParams(flip_h=0, flip_v=0, rotation=0.0,
                                  scale_range=(1.0, 1.0)),
    )
    stream = np.random.default_rng(55)
    draws = 2000
    poisson_count = sum(
        inject(target, donor, cfg, stream)[1].method == METHOD_POISSON
        for _ in range(draws)
    )
    share = poisson_count / draws
    report(
        "method-mix",
        0.45 <= share <= 0.55,
        f"poisson share {share:.4f} over {draws} injections (within [0.45, 0.55])",
    )


# ---------------------------------------------------------------------------
# balancer criteria (shared 200-batch run on the benchmark-ratio index)


@pytest.fixture(scope="module")
def mt_balancing_run(mt_index):
    """200 batches of 15 on the Magnetic-Tiles-ratio index, slack 0.

    Batches carry 3 donors of one seeded class plus 12 frees, so the
    target count (batch_size / C = 3) is reachable exactly.
    """
    cfg = BalanceConfig(
        injection=InjectionConfig(transform=fast_transform()),
        uniformity_slack=0,
    )
    rng = np.random.default_rng(2025)
    runs = []
    for b in range(200):
        class_id = int(rng.integers(1, 6))
        pool = mt_index.class_pools[class_id]
        donors = [pool[int(rng.integers(len(pool)))] for _ in range(3)]
        frees = [
            mt_index.free_pool[int(rng.integers(MT_FREE))] for _ in range(12)
        ]
        batch = Batch(samples=tuple(donors + frees), num_classes=5)
        outcome = balance_batch(batch, mt_index, cfg, seed=9000 + b)
        rerun = balance_batch(batch, mt_index, cfg, seed=9000 + b)
        runs.append((batch, outcome, rerun))
    return runs


def test_balancer_uniformity(mt_balancing_run):
    """All 200 batches terminate with exactly 3 samples per class, and the
    same seed reproduces byte-identical outputs."""
    exact = 0
    identical = 0
    for _, outcome, rerun in mt_balancing_run:
        if outcome.histogram.as_list() == [3, 3, 3, 3, 3] and not outcome.saturated:
            exact += 1
        same = outcome.trace == rerun.trace and all(
            np.array_equal(a.image.data, b.image.data)
            and np.array_equal(a.mask.labels, b.mask.labels)
            for a, b in zip(outcome.batch.samples, rerun.batch.samples)
        )
        identical += same
    report(
        "balancer-uniformity",
        exact == 200 and identical == 200,
        f"{exact}/200 batches exactly [3,3,3,3,3]; {identical}/200 "
        "seed-identical re-runs",
    )


def test_monotone_gap_property(mt_balancing_run):
    """Every injection in every trace targets the argmin class and never
    increases max - min of the working histogram."""
    events = 0
    violations = 0
    for batch, outcome, _ in mt_balancing_run:
        running = class_histogram(batch)
        for event in outcome.trace:
            events += 1
            if event.class_id != select_minority_class(running):
                violations += 1
            if event.gap_after > event.gap_before:
                violations += 1
            running = running.bump(event.class_id)
    report(
        "monotone-gap",
        violations == 0 and events == 200 * 12,
        f"{events} injections, {violations} violations",
    )


def test_single_class_preservation(mt_balancing_run):
    """Every mask in every emitted batch passes the single-class check."""
    checked = 0
    bad = 0
    for _, outcome, _ in mt_balancing_run:
        for sample in outcome.batch.samples:
            checked += 1
            if not validate_single_class(sample.mask).ok:
                bad += 1
    report(
        "single-class-preservation",
        bad == 0,
        f"{checked} masks checked, {bad} violations",
    )


# ---------------------------------------------------------------------------
# metric criteria


def test_gradient_checks():
    """BCE and Dice analytic gradients vs central differences (step 1e-5):
    relative error <= 1e-4 on 100 random 8x8 instances."""
    rng = np.random.default_rng(106)
    step = 1e-5
    worst = 0.0
    for _ in range(100):
        pred = rng.uniform(0.02, 0.98, (8, 8))
        gt = rng.integers(0, 2, (8, 8)).astype(np.float64)
        for fn in (bce_loss, dice_loss):
            _, grad = fn(pred, gt)
            fd = np.zeros_like(pred)
            for idx in np.ndindex(pred.shape):
                hi = pred.copy()
                hi[idx] += step
                lo = pred.copy()
                lo[idx] -= step
                fd[idx] = (fn(hi, gt)[0] - fn(lo, gt)[0]) / (2 * step)
            worst = max(worst, float(np.linalg.norm(grad - fd) / np.linalg.norm(fd)))
    report(
        "gradient-checks",
        worst <= 1e-4,
        f"worst relative error {worst:.3e} (<= 1e-4) over 100 instances x 2 losses",
    )


def test_metric_fixtures():
    """Hand-enumerable confusion fixture gives IoU 0.5 exactly; pred == gt
    gives 1.0; WCE with unit weights equals mean BCE within 1e-12."""
    half = dataset_iou(
        accumulate(np.ones((2, 2)), np.array([[1, 0], [0, 1]]), ConfusionCounts())
    )
    gt = np.array([[1, 1], [0, 1]])
    perfect = dataset_iou(accumulate(gt, gt, ConfusionCounts()))

    rng = np.random.default_rng(107)
    pred = rng.uniform(0.01, 0.99, (3, 6, 6))
    labels = rng.integers(0, 4, (6, 6))
    wce = wce_loss(pred, labels, {c: 1.0 for c in range(4)})
    mean_bce = float(
        np.mean(
            [bce_loss(pred[c - 1], (labels == c).astype(float))[0] for c in (1, 2, 3)]
        )
    )
    gap = abs(wce - mean_bce)
    report(
        "metric-fixtures",
        half == 0.5 and perfect == 1.0 and gap <= 1e-12,
        f"IoU fixture {half} (= 0.5), identity IoU {perfect} (= 1.0), "
        f"|wce - bce| = {gap:.2e} (<= 1e-12)",
    )


# ---------------------------------------------------------------------------
# end-to-end criterion


def test_cmd_balance_end_to_end_determinism(tmp_path):
    """Two cmd_balance runs with the same config and seed write
    byte-identical output trees."""
    rng = np.random.default_rng(108)
    root = tmp_path / "data"
    build_tree(root, rng, free=20, per_class={1: 4, 2: 4, 3: 4}, side=14)
    manifest = tmp_path / "manifest.jsonl"
    assert main(["index", str(root), "--layout", "directory",
                 "--output", str(manifest)]) == 0

    def run(name: str) -> dict[str, bytes]:
        out = tmp_path / name
        assert main([
            "balance", str(manifest), "--batch-size", "8",
            "--num-batches", "5", "--seed", "31", "--output", str(out),
        ]) == 0
        return {
            str(p.relative_to(out)): p.read_bytes()
            for p in sorted(out.rglob("*"))
            if p.is_file()
        }

    first = run("run_a")
    second = run("run_b")
    same = first == second
    report(
        "end-to-end-determinism",
        same and len(first) > 0,
        f"{len(first)} files compared, byte-identical: {same}",
    )

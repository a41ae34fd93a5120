from __future__ import annotations

import math

import numpy as np
import pytest

from defectinject.metrics import (
    EPSILON,
    ConfusionCounts,
    accumulate,
    accumulate_per_class,
    bce_loss,
    combined_loss,
    dataset_iou,
    dice_loss,
    inverse_frequency_weights,
    wce_loss,
)


def scripted_bce(pred, gt, eps=EPSILON):
    """Independent re-evaluation: literal sum over pixels."""
    total = 0.0
    h, w = pred.shape
    for r in range(h):
        for c in range(w):
            p = min(max(pred[r, c], eps), 1 - eps)
            total += gt[r, c] * math.log(p) + (1 - gt[r, c]) * math.log(1 - p)
    return -total / (h * w)


def scripted_dice(pred, gt, s=1e-6):
    inter = 0.0
    p_sum = 0.0
    g_sum = 0.0
    h, w = pred.shape
    for r in range(h):
        for c in range(w):
            inter += pred[r, c] * gt[r, c]
            p_sum += pred[r, c]
            g_sum += gt[r, c]
    return 1 - (2 * inter + s) / (p_sum + g_sum + s)


class TestBce:
    def test_half_probability_gives_ln2(self, rng):
        gt = rng.integers(0, 2, (4, 4)).astype(float)
        loss, _ = bce_loss(np.full((4, 4), 0.5), gt)
        assert loss == pytest.approx(math.log(2), abs=1e-15)

    def test_perfect_prediction_is_tiny(self, rng):
        gt = rng.integers(0, 2, (6, 6)).astype(float)
        loss, _ = bce_loss(gt, gt)
        assert loss <= -math.log(1 - EPSILON) + 1e-12

    def test_matches_scripted_sum(self, rng):
        for _ in range(5):
            pred = rng.uniform(0.001, 0.999, (4, 4))
            gt = rng.integers(0, 2, (4, 4)).astype(float)
            loss, _ = bce_loss(pred, gt)
            assert loss == pytest.approx(scripted_bce(pred, gt), rel=1e-9)

    def test_nonnegative(self, rng):
        for _ in range(20):
            pred = rng.uniform(0, 1, (5, 5))
            gt = rng.integers(0, 2, (5, 5)).astype(float)
            assert bce_loss(pred, gt)[0] >= 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            bce_loss(np.zeros((2, 2)), np.zeros((3, 3)))


class TestDice:
    def test_perfect_overlap(self, rng):
        gt = rng.integers(0, 2, (6, 6)).astype(float)
        if not gt.any():
            gt[0, 0] = 1.0
        loss, _ = dice_loss(gt, gt)
        assert loss <= 1e-6

    def test_zero_overlap_tends_to_one(self):
        gt = np.zeros((4, 4))
        gt[:2] = 1.0
        loss, _ = dice_loss(np.zeros((4, 4)), gt)
        assert loss == pytest.approx(1.0, abs=1e-5)

    def test_matches_scripted_sum(self, rng):
        for _ in range(5):
            pred = rng.uniform(0, 1, (4, 4))
            gt = rng.integers(0, 2, (4, 4)).astype(float)
            loss, _ = dice_loss(pred, gt)
            assert loss == pytest.approx(scripted_dice(pred, gt), rel=1e-9)

    def test_bounded_in_unit_interval(self, rng):
        for _ in range(20):
            pred = rng.uniform(0, 1, (5, 5))
            gt = rng.integers(0, 2, (5, 5)).astype(float)
            loss, _ = dice_loss(pred, gt)
            assert 0.0 <= loss <= 1.0


class TestGradients:
    @pytest.mark.parametrize("fn", [bce_loss, dice_loss, combined_loss])
    def test_matches_central_differences(self, fn, rng):
        step = 1e-5
        for _ in range(5):
            pred = rng.uniform(0.02, 0.98, (8, 8))
            gt = rng.integers(0, 2, (8, 8)).astype(float)
            _, grad = fn(pred, gt)
            fd = np.zeros_like(pred)
            for idx in np.ndindex(pred.shape):
                hi = pred.copy()
                hi[idx] += step
                lo = pred.copy()
                lo[idx] -= step
                fd[idx] = (fn(hi, gt)[0] - fn(lo, gt)[0]) / (2 * step)
            rel = np.linalg.norm(grad - fd) / np.linalg.norm(fd)
            assert rel <= 1e-4


class TestWce:
    def test_unit_weights_equal_mean_bce(self, rng):
        pred = rng.uniform(0.01, 0.99, (4, 6, 6))
        gt = rng.integers(0, 5, (6, 6))
        weights = {c: 1.0 for c in range(5)}
        wce = wce_loss(pred, gt, weights)
        mean_bce = np.mean(
            [bce_loss(pred[c - 1], (gt == c).astype(float))[0] for c in (1, 2, 3, 4)]
        )
        assert abs(wce - mean_bce) <= 1e-12

    def test_homogeneous_in_weights(self, rng):
        pred = rng.uniform(0.01, 0.99, (2, 5, 5))
        gt = rng.integers(0, 3, (5, 5))
        w1 = {c: 1.0 for c in range(3)}
        w2 = {c: 2.0 for c in range(3)}
        assert wce_loss(pred, gt, w2) == pytest.approx(
            2 * wce_loss(pred, gt, w1), rel=1e-12
        )

    def test_missing_weight_errors(self, rng):
        pred = rng.uniform(0.1, 0.9, (2, 4, 4))
        gt = np.zeros((4, 4), dtype=int)
        gt[0, 0] = 2
        with pytest.raises(ValueError, match=r"missing weights.*\[2\]"):
            wce_loss(pred, gt, {0: 1.0, 1: 1.0})

    def test_inverse_frequency_helper(self):
        # pixel counts 90/10: weights proportional to 1/90 and 1/10, mean 1
        weights = inverse_frequency_weights({1: 90, 2: 10})
        assert weights[2] / weights[1] == pytest.approx(9.0, rel=1e-12)
        assert (weights[1] + weights[2]) / 2 == pytest.approx(1.0, abs=1e-12)


class TestIoU:
    def test_perfect_prediction(self):
        gt = np.array([[1, 0], [1, 1]])
        counts = accumulate(gt, gt, ConfusionCounts())
        assert dataset_iou(counts) == 1.0

    def test_two_by_two_half(self):
        # pred all ones, gt has 2 ones: tp=2, fp=2, fn=0 -> 0.5 exactly
        counts = accumulate(
            np.ones((2, 2)), np.array([[1, 0], [0, 1]]), ConfusionCounts()
        )
        assert counts == ConfusionCounts(tp=2, fp=2, fn=0)
        assert dataset_iou(counts) == 0.5

    def test_empty_empty_convention(self):
        assert dataset_iou(ConfusionCounts()) == 1.0

    def test_bounds(self, rng):
        counts = ConfusionCounts()
        for _ in range(10):
            counts = accumulate(
                rng.integers(0, 2, (6, 6)), rng.integers(0, 2, (6, 6)), counts
            )
        assert 0.0 <= dataset_iou(counts) <= 1.0

    def test_accumulation_is_order_independent(self, rng):
        pairs = [
            (rng.integers(0, 2, (5, 5)), rng.integers(0, 2, (5, 5)))
            for _ in range(6)
        ]
        forward = ConfusionCounts()
        for p, g in pairs:
            forward = accumulate(p, g, forward)
        backward = ConfusionCounts()
        for p, g in reversed(pairs):
            backward = accumulate(p, g, backward)
        assert forward == backward

    def test_per_class_accumulation(self, rng):
        pred = rng.uniform(0, 1, (3, 6, 6))
        gt = rng.integers(0, 4, (6, 6))
        by_class = accumulate_per_class(pred, gt, {})
        for c in (1, 2, 3):
            expected = accumulate(pred[c - 1] >= 0.5, gt == c, ConfusionCounts())
            assert by_class[c] == expected


def test_combined_loss_is_sum_of_parts(rng):
    pred = rng.uniform(0.05, 0.95, (6, 6))
    gt = rng.integers(0, 2, (6, 6)).astype(float)
    total, grad = combined_loss(pred, gt)
    b, gb = bce_loss(pred, gt)
    d, gd = dice_loss(pred, gt)
    assert total == pytest.approx(b + d, rel=1e-12)
    assert np.allclose(grad, gb + gd)

import math

import numpy as np
import pytest
import torch

from changedet import bce_loss, dice_loss, total_loss
from changedet.losses import DICE_SMOOTH, PROB_EPS


def bce_oracle(probs: np.ndarray, target: np.ndarray) -> float:
    """Per-pixel scalar loop, double precision."""
    total = 0.0
    p_flat = probs.reshape(-1).astype(np.float64)
    t_flat = target.reshape(-1).astype(np.float64)
    for p, t in zip(p_flat, t_flat):
        p = min(max(p, PROB_EPS), 1.0 - PROB_EPS)
        total += -(t * math.log(p) + (1.0 - t) * math.log(1.0 - p))
    return total / p_flat.size


def dice_oracle(probs: np.ndarray, target: np.ndarray) -> float:
    inter = p_sum = t_sum = 0.0
    for p, t in zip(probs.reshape(-1).astype(np.float64),
                    target.reshape(-1).astype(np.float64)):
        inter += p * t
        p_sum += p
        t_sum += t
    return 1.0 - (2.0 * inter + DICE_SMOOTH) / (p_sum + t_sum + DICE_SMOOTH)


class TestBceLoss:
    def test_matches_scalar_loop(self, rng):
        for _ in range(20):
            probs = rng.uniform(0.0, 1.0, size=(2, 1, 8, 8))
            target = rng.integers(0, 2, size=(2, 1, 8, 8)).astype(np.float64)
            ours = bce_loss(torch.from_numpy(probs), torch.from_numpy(target))
            assert abs(ours.item() - bce_oracle(probs, target)) < 1e-9

    def test_finite_at_extremes(self):
        probs = torch.tensor([0.0, 1.0, 0.0, 1.0])
        target = torch.tensor([0.0, 1.0, 1.0, 0.0])
        val = bce_loss(probs, target)
        assert torch.isfinite(val)

    def test_perfect_confident_prediction_is_tiny(self):
        target = torch.tensor([0.0, 1.0])
        assert bce_loss(target.clone(), target).item() < 1e-5

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            bce_loss(torch.rand(2, 4), torch.rand(2, 5))


class TestDiceLoss:
    def test_matches_scalar_loop(self, rng):
        for _ in range(20):
            probs = rng.uniform(0.0, 1.0, size=(3, 8, 8))
            target = rng.integers(0, 2, size=(3, 8, 8)).astype(np.float64)
            ours = dice_loss(torch.from_numpy(probs), torch.from_numpy(target))
            assert abs(ours.item() - dice_oracle(probs, target)) < 1e-9

    def test_bounded_in_unit_interval(self, rng):
        for _ in range(50):
            probs = rng.uniform(0.0, 1.0, size=(4, 4))
            target = rng.integers(0, 2, size=(4, 4)).astype(np.float64)
            val = dice_loss(torch.from_numpy(probs), torch.from_numpy(target)).item()
            assert 0.0 <= val <= 1.0

    def test_exact_binary_match_is_near_zero(self, rng):
        target = torch.from_numpy(
            rng.integers(0, 2, size=(16, 16)).astype(np.float64))
        assert dice_loss(target.clone(), target).item() < 1e-3

    def test_total_miss_is_near_one(self):
        probs = torch.ones(16, 16)
        target = torch.zeros(16, 16)
        assert dice_loss(probs, target).item() > 0.9


class TestTotalLoss:
    def test_sums_over_levels(self, rng):
        probs = [torch.from_numpy(rng.uniform(0.01, 0.99, size=(1, 1, 4, 4)))
                 for _ in range(4)]
        target = torch.from_numpy(
            rng.integers(0, 2, size=(1, 1, 4, 4)).astype(np.float64))
        report = total_loss(probs, target)
        expected_bce = sum(bce_loss(p, target) for p in probs)
        expected_dice = sum(dice_loss(p, target) for p in probs)
        assert torch.allclose(report.bce, expected_bce)
        assert torch.allclose(report.dice, expected_dice)
        assert torch.allclose(report.total, expected_bce + expected_dice)

    def test_gradients_flow_to_every_level(self, rng):
        probs = [torch.rand(1, 1, 4, 4, dtype=torch.float64, requires_grad=True)
                 for _ in range(4)]
        target = torch.randint(0, 2, (1, 1, 4, 4), dtype=torch.float64)
        total_loss(probs, target).total.backward()
        for p in probs:
            assert p.grad is not None
            assert p.grad.abs().sum() > 0

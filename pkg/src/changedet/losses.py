"""Deep-supervision training loss.

Every decoder level is supervised against the same ground-truth mask with a
binary cross-entropy term plus a dice term; the total is the plain sum over
the four levels, no weighting.
"""
from __future__ import annotations

from typing import NamedTuple, Sequence

import torch

PROB_EPS = 1e-7
DICE_SMOOTH = 1.0


class LossReport(NamedTuple):
    total: torch.Tensor
    bce: torch.Tensor
    dice: torch.Tensor


def bce_loss(probs: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy over all pixels.

    Inputs are probabilities, not logits; they are clamped away from {0, 1}
    so the log terms stay finite.
    """
    if probs.shape != target.shape:
        raise ValueError(f"probs {tuple(probs.shape)} vs target {tuple(target.shape)}")
    p = probs.clamp(PROB_EPS, 1.0 - PROB_EPS)
    t = target.to(p.dtype)
    return -(t * torch.log(p) + (1.0 - t) * torch.log(1.0 - p)).mean()


def dice_loss(probs: torch.Tensor, target: torch.Tensor,
              smooth: float = DICE_SMOOTH) -> torch.Tensor:
    """1 - dice overlap, computed over the whole batch as one region."""
    if probs.shape != target.shape:
        raise ValueError(f"probs {tuple(probs.shape)} vs target {tuple(target.shape)}")
    p = probs.reshape(-1)
    t = target.reshape(-1).to(p.dtype)
    inter = (p * t).sum()
    return 1.0 - (2.0 * inter + smooth) / (p.sum() + t.sum() + smooth)


def total_loss(level_probs: Sequence[torch.Tensor], target: torch.Tensor) -> LossReport:
    """Sum of per-level bce and dice terms against a shared target."""
    bce = sum(bce_loss(p, target) for p in level_probs)
    dice = sum(dice_loss(p, target) for p in level_probs)
    return LossReport(total=bce + dice, bce=bce, dice=dice)

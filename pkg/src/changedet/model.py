"""Bitemporal change detection network.

Two co-registered images pass through one shared encoder; each feature
pyramid is enriched by cross-stage aggregation, the two pyramids are fused by
absolute difference, and a u-shape decoder emits one change probability map
per pyramid level at full input resolution.
"""
from __future__ import annotations

from typing import List, NamedTuple

import torch
from torch import nn

from .backbone import Encoder, FeaturePyramid
from .config import ModelConfig
from .csa import CrossStageAggregation, DifferencePyramid, temporal_difference
from .decoder import UShapeDecoder
from .validation import check_same_shape


class PredictionSet(NamedTuple):
    """Per-level change probability maps, all [B, 1, H, W]. p1 comes from the
    finest pyramid level and is the map thresholded for the final output."""

    p1: torch.Tensor
    p2: torch.Tensor
    p3: torch.Tensor
    p4: torch.Tensor


class ChangeNet(nn.Module):
    """Siamese encoder + cross-stage aggregation + difference + decoder."""

    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        cfg.validate()
        self.cfg = cfg
        self.threshold = cfg.threshold
        self.encoder = Encoder(cfg.encoder)
        if cfg.use_csa:
            self.aggregate = CrossStageAggregation(
                cfg.encoder.stage_channels, cfg.csa_branches)
        else:
            self.aggregate = None
        self.decoder = UShapeDecoder(
            cfg.encoder.stage_channels, msf_cfg=cfg.msf, esa_cfg=cfg.esa,
            use_msf=cfg.use_msf, use_esa=cfg.use_esa)

    def difference_pyramid(self, t1, t2) -> DifferencePyramid:
        check_same_shape(t1, t2)
        f1 = self.encoder(t1, name="t1")
        f2 = self.encoder(t2, name="t2")
        if self.aggregate is not None:
            f1 = self.aggregate(f1)
            f2 = self.aggregate(f2)
        return temporal_difference(f1, f2)

    def forward(self, t1, t2) -> PredictionSet:
        diffs = self.difference_pyramid(t1, t2)
        out_size = t1.shape[-2:]
        return PredictionSet(*self.decoder(diffs, out_size))

    @torch.no_grad()
    def predict(self, t1, t2):
        """Binary change map [B, 1, H, W] from the finest-level probability."""
        was_training = self.training
        self.eval()
        try:
            probs = self.forward(t1, t2).p1
        finally:
            self.train(was_training)
        return (probs >= self.threshold).to(torch.uint8)


def build_model(cfg: ModelConfig | None = None) -> ChangeNet:
    return ChangeNet(cfg)


def predictions_as_list(preds: PredictionSet) -> List[torch.Tensor]:
    return [preds.p1, preds.p2, preds.p3, preds.p4]

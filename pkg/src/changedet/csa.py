"""Cross-stage aggregation: every branch fuses all four encoder stages into
one enriched map at its own stage's resolution, after which the two temporal
pyramids are collapsed into absolute-difference features."""
from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

from .backbone import FeaturePyramid
from .config import CsaBranchConfig
from .validation import check_same_shape


class AggregatedPyramid(NamedTuple):
    c1: torch.Tensor
    c2: torch.Tensor
    c3: torch.Tensor
    c4: torch.Tensor


class DifferencePyramid(NamedTuple):
    diff1: torch.Tensor
    diff2: torch.Tensor
    diff3: torch.Tensor
    diff4: torch.Tensor


class StageAlign(nn.Module):
    """Bring a source-stage map to a target stage's resolution and channels.

    Finer sources are max-pooled once per octave then 3x3-convolved; the
    same-stage source is convolved only; coarser sources are convolved and
    bilinearly upsampled 2x per octave.
    """

    def __init__(self, in_channels, out_channels, source_stage, target_stage):
        super().__init__()
        self.octaves = target_stage - source_stage  # >0: pool, <0: upsample
        self.conv = nn.Conv2d(in_channels, out_channels, 3, padding=1)

    def forward(self, x):
        if self.octaves > 0:
            for _ in range(self.octaves):
                x = F.max_pool2d(x, 2)
            return self.conv(x)
        x = self.conv(x)
        for _ in range(-self.octaves):
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        return x


class CsaBranch(nn.Module):
    """One aggregation branch.

    All four stages are aligned, concatenated and fused by a 3x3 conv with
    batch norm and ReLU; the branch's own stage is projected by a 1x1 conv and
    interacts with the fused map through a pixel-affinity matrix product.
    """

    def __init__(self, stage_channels, cfg: CsaBranchConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        k = cfg.branch_index
        self.aligns = nn.ModuleList([
            StageAlign(stage_channels[j - 1], cfg.aligned_channels[j - 1],
                       source_stage=j, target_stage=k)
            for j in (1, 2, 3, 4)
        ])
        self.fuse = nn.Sequential(
            nn.Conv2d(sum(cfg.aligned_channels), cfg.out_channels, 3, padding=1,
                      bias=False),
            nn.BatchNorm2d(cfg.out_channels),
            nn.ReLU(inplace=True),
        )
        self.project = nn.Conv2d(stage_channels[k - 1], cfg.out_channels, 1)

    def forward(self, pyramid: FeaturePyramid) -> torch.Tensor:
        own = pyramid[self.cfg.branch_index - 1]
        aligned = [align(f) for align, f in zip(self.aligns, pyramid)]
        fused = self.fuse(torch.cat(aligned, dim=1))

        b, c, h, w = fused.shape
        n = h * w
        v = self.project(own).flatten(2).transpose(1, 2)  # [B, N, C]
        g = fused.flatten(2).transpose(1, 2)              # [B, N, C]
        # Pixel-affinity interaction: an N x N map built from the projected
        # stage features redistributes the fused map; 1/N keeps magnitudes
        # independent of the stage size.
        affinity = torch.bmm(v, g.transpose(1, 2)) / n    # [B, N, N]
        out = torch.bmm(affinity, g)                      # [B, N, C]
        return out.transpose(1, 2).reshape(b, c, h, w)


class CrossStageAggregation(nn.Module):
    """Four parallel branches; parameters are shared across the two temporal
    inputs by running the same module on each pyramid."""

    def __init__(self, stage_channels, branch_cfgs):
        super().__init__()
        self.branches = nn.ModuleList(
            CsaBranch(stage_channels, cfg) for cfg in branch_cfgs)

    def forward(self, pyramid: FeaturePyramid) -> AggregatedPyramid:
        return AggregatedPyramid(*(branch(pyramid) for branch in self.branches))

    def forward_pair(self, pyr1: FeaturePyramid, pyr2: FeaturePyramid):
        for a, b in zip(pyr1, pyr2):
            check_same_shape(a, b, "pyramid t1", "pyramid t2")
        return self(pyr1), self(pyr2)


def temporal_difference(a, b) -> DifferencePyramid:
    """Element-wise |a - b| per stage; exactly commutative."""
    for x, y in zip(a, b):
        check_same_shape(x, y, "a", "b")
    return DifferencePyramid(*(torch.abs(x - y) for x, y in zip(a, b)))

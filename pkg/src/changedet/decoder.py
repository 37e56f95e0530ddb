"""U-shape decoder over the difference pyramid.

Each level refines its map with a multi-scale conv cascade and token
self-attention with sequence-reduced keys/values, then hands the result up to
the next finer level. Every level also emits a full-resolution change
probability map.
"""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .config import EsaConfig, MsfConfig
from .csa import DifferencePyramid


class MultiScaleFusion(nn.Module):
    """Cascade of four 3x3 convs; their concatenated outputs are reduced back
    to the input width and added residually, so shape is preserved."""

    def __init__(self, channels, cfg: MsfConfig | None = None):
        super().__init__()
        cfg = cfg or MsfConfig()
        mid = cfg.mid_channels or channels
        self.fourth_from_second = cfg.fourth_from_second
        self.conv1 = nn.Conv2d(channels, mid, 3, padding=1)
        self.conv2 = nn.Conv2d(mid, mid, 3, padding=1)
        self.conv3 = nn.Conv2d(mid, mid, 3, padding=1)
        self.conv4 = nn.Conv2d(mid, mid, 3, padding=1)
        self.reduce = nn.Conv2d(4 * mid, channels, 1)

    def forward(self, x):
        c1 = self.conv1(x)
        c2 = self.conv2(c1)
        c3 = self.conv3(c2)
        c4 = self.conv4(c2 if self.fourth_from_second else c3)
        return x + self.reduce(torch.cat([c1, c2, c3, c4], dim=1))


def resolve_heads(channels: int, cfg: EsaConfig) -> int:
    heads = cfg.head_count if cfg.head_count is not None else max(1, channels // 32)
    if channels % heads != 0:
        raise ValueError(f"channels {channels} not divisible by head count {heads}")
    return heads


class EfficientAttention(nn.Module):
    """Pre-norm token self-attention whose keys and values are sequence-reduced.

    The projected key/value matrices [N, C] are folded to [N/R, C*R] (groups of
    R consecutive tokens) and linearly mapped back to C channels, so the
    attention matrix is N x N/R. Token counts not divisible by R are zero-padded
    on the right before folding; no key masking is applied.
    """

    def __init__(self, channels, cfg: EsaConfig | None = None):
        super().__init__()
        cfg = cfg or EsaConfig()
        cfg.validate()
        self.reduction_ratio = cfg.reduction_ratio
        self.heads = resolve_heads(channels, cfg)
        self.head_dim = channels // self.heads
        self.norm = nn.LayerNorm(channels)
        self.q_proj = nn.Linear(channels, channels)
        self.k_proj = nn.Linear(channels, channels)
        self.v_proj = nn.Linear(channels, channels)
        self.k_reduce = nn.Linear(channels * self.reduction_ratio, channels)
        self.v_reduce = nn.Linear(channels * self.reduction_ratio, channels)
        self.out_proj = nn.Linear(channels, channels)

    def _fold(self, t, reduce_proj):
        # [B, N, C] -> [B, ceil(N/R), C*R] -> [B, ceil(N/R), C]
        b, n, c = t.shape
        r = self.reduction_ratio
        if n % r != 0:
            pad = r - n % r
            t = torch.cat([t, t.new_zeros(b, pad, c)], dim=1)
        t = t.reshape(b, -1, c * r)
        return reduce_proj(t)

    def _split_heads(self, t):
        b, n, _ = t.shape
        return t.reshape(b, n, self.heads, self.head_dim).transpose(1, 2)

    def forward(self, x, need_weights: bool = False):
        # x: [B, N, C]
        y = self.norm(x)
        q = self._split_heads(self.q_proj(y))                      # [B, h, N, d]
        k = self._split_heads(self._fold(self.k_proj(y), self.k_reduce))
        v = self._split_heads(self._fold(self.v_proj(y), self.v_reduce))

        logits = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)  # [B, h, N, M]
        attn = torch.softmax(logits, dim=-1)
        ctx = attn @ v                                             # [B, h, N, d]
        ctx = ctx.transpose(1, 2).reshape(x.shape)
        out = x + self.out_proj(ctx)
        if need_weights:
            return out, attn
        return out


class EfficientAttention2d(nn.Module):
    """Token attention applied to a [B, C, H, W] map."""

    def __init__(self, channels, cfg: EsaConfig | None = None):
        super().__init__()
        self.attention = EfficientAttention(channels, cfg)

    def forward(self, x):
        b, c, h, w = x.shape
        tokens = x.flatten(2).transpose(1, 2)
        tokens = self.attention(tokens)
        return tokens.transpose(1, 2).reshape(b, c, h, w)


class PredictionHead(nn.Module):
    """1x1 conv to a single channel, upsample to the output size, sigmoid."""

    def __init__(self, channels):
        super().__init__()
        self.cls = nn.Conv2d(channels, 1, 1)

    def forward(self, x, out_size):
        logits = self.cls(x)
        if logits.shape[-2:] != tuple(out_size):
            logits = F.interpolate(logits, size=out_size, mode="bilinear",
                                   align_corners=False)
        return torch.sigmoid(logits)


class UShapeDecoder(nn.Module):
    """Coarse-to-fine decoding of the difference pyramid.

    Level k: refine (multi-scale cascade, then attention, both optional) ->
    predict -> upsample 2x -> concatenate with the next finer difference map
    -> 1x1 conv. Attention runs at the coarser resolution of each level,
    where the token count is smallest.
    """

    def __init__(self, stage_channels, msf_cfg: MsfConfig | None = None,
                 esa_cfg: EsaConfig | None = None, use_msf=True, use_esa=True):
        super().__init__()
        c1, c2, c3, c4 = stage_channels
        self.use_msf = use_msf
        self.use_esa = use_esa
        if use_msf:
            self.msf = nn.ModuleList(
                [MultiScaleFusion(c, msf_cfg) for c in (c1, c2, c3, c4)])
        if use_esa:
            self.esa = nn.ModuleList(
                [EfficientAttention2d(c, esa_cfg) for c in (c1, c2, c3, c4)])
        # fuse[k] merges the upsampled level-(k+2) output with diff_{k+1}
        self.fuse = nn.ModuleList([
            nn.Conv2d(c2 + c1, c1, 1),
            nn.Conv2d(c3 + c2, c2, 1),
            nn.Conv2d(c4 + c3, c3, 1),
        ])
        self.heads = nn.ModuleList([PredictionHead(c) for c in (c1, c2, c3, c4)])

    def _refine(self, x, level):
        if self.use_msf:
            x = self.msf[level](x)
        if self.use_esa:
            x = self.esa[level](x)
        return x

    def forward(self, diffs: DifferencePyramid, out_size):
        """Return per-level probability maps [p1, p2, p3, p4] at out_size."""
        probs = [None] * 4
        x = self._refine(diffs.diff4, 3)
        probs[3] = self.heads[3](x, out_size)
        for level in (2, 1, 0):
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            x = self.fuse[level](torch.cat([x, diffs[level]], dim=1))
            x = self._refine(x, level)
            probs[level] = self.heads[level](x, out_size)
        return probs

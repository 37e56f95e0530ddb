"""Shared-weight Siamese encoder producing a four-stage feature pyramid."""
from __future__ import annotations

from typing import NamedTuple

import torch
from torch import nn

from .config import EncoderConfig
from .validation import check_divisible, check_same_shape


class FeaturePyramid(NamedTuple):
    f1: torch.Tensor  # [B, C1, H/4,  W/4]
    f2: torch.Tensor  # [B, C2, H/8,  W/8]
    f3: torch.Tensor  # [B, C3, H/16, W/16]
    f4: torch.Tensor  # [B, C4, H/32, W/32]


def conv_bn_relu(in_c, out_c, kernel=3, stride=1):
    return nn.Sequential(
        nn.Conv2d(in_c, out_c, kernel, stride=stride, padding=kernel // 2, bias=False),
        nn.BatchNorm2d(out_c),
        nn.ReLU(inplace=True),
    )


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(channels)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        out = self.act(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.act(out + x)


class Encoder(nn.Module):
    """Four downsampling stages over a stride-2 stem; one parameter set serves
    both temporal inputs."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        c1, c2, c3, c4 = cfg.stage_channels

        stem = [conv_bn_relu(cfg.input_channels, cfg.stem_channels, stride=2)]
        if cfg.stem_pool:
            stem.append(nn.MaxPool2d(3, stride=2, padding=1))
        self.stem = nn.Sequential(*stem)

        # With a pooled stem the input already sits at 1/4 resolution, so the
        # first stage keeps it; otherwise each stage halves on entry.
        stage1_stride = 1 if cfg.stem_pool else 2
        self.stage1 = self._make_stage(cfg.stem_channels, c1, stage1_stride)
        self.stage2 = self._make_stage(c1, c2, 2)
        self.stage3 = self._make_stage(c2, c3, 2)
        self.stage4 = self._make_stage(c3, c4, 2)
        self._init_weights()

    @staticmethod
    def _make_stage(in_c, out_c, stride):
        return nn.Sequential(
            conv_bn_relu(in_c, out_c, stride=stride),
            ResidualBlock(out_c),
            ResidualBlock(out_c),
        )

    def _init_weights(self):
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
            elif isinstance(m, nn.BatchNorm2d):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)

    def forward(self, x, name: str = "input") -> FeaturePyramid:
        check_divisible(x.shape[-2], x.shape[-1], name)
        x = self.stem(x)
        f1 = self.stage1(x)
        f2 = self.stage2(f1)
        f3 = self.stage3(f2)
        f4 = self.stage4(f3)
        return FeaturePyramid(f1, f2, f3, f4)


def build_encoder(cfg: EncoderConfig) -> Encoder:
    return Encoder(cfg)


def encode_pair(encoder: Encoder, t1: torch.Tensor, t2: torch.Tensor):
    """Run the same encoder over both temporal images.

    Returns (pyramid_t1, pyramid_t2); swapping the inputs swaps the outputs.
    """
    check_same_shape(t1, t2)
    return encoder(t1, name="t1"), encoder(t2, name="t2")

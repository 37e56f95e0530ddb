import math

import pytest
import torch
from torch import nn

from changedet import (ChangeNet, ModelConfig, count_parameters, estimate_flops,
                       measure_attention_macs)
from changedet.complexity import attention_product_flops, conv_flops, linear_flops
from changedet.config import EsaConfig
from changedet.decoder import EfficientAttention


class TestParameterFormulas:
    def test_conv_with_bias_closed_form(self):
        conv = nn.Conv2d(3, 16, 3)
        assert count_parameters(conv) == 3 * 3 * 3 * 16 + 16 == 448

    def test_conv_without_bias(self):
        conv = nn.Conv2d(4, 8, 5, bias=False)
        assert count_parameters(conv) == 5 * 5 * 4 * 8

    def test_linear_norm_layers(self):
        assert count_parameters(nn.Linear(10, 7)) == 10 * 7 + 7
        assert count_parameters(nn.BatchNorm2d(12)) == 24
        assert count_parameters(nn.LayerNorm(32)) == 64

    def test_composite_sums_children(self):
        block = nn.Sequential(nn.Conv2d(3, 8, 3), nn.BatchNorm2d(8),
                              nn.ReLU(), nn.Linear(4, 4))
        expected = (3 * 3 * 3 * 8 + 8) + 16 + (4 * 4 + 4)
        assert count_parameters(block) == expected

    def test_unknown_parameterized_layer_raises(self):
        class Odd(nn.Module):
            def __init__(self):
                super().__init__()
                self.w = nn.Parameter(torch.zeros(3))

        with pytest.raises(ValueError, match="no parameter formula"):
            count_parameters(Odd())

    def test_full_model_matches_substrate_enumeration(self):
        model = ChangeNet(ModelConfig())
        assert count_parameters(model) == sum(p.numel() for p in model.parameters())


class TestFlopFormulas:
    def test_single_conv_by_hand(self):
        conv = nn.Conv2d(3, 16, 3, padding=1)
        assert conv_flops(conv, 256, 256) == 2 * 9 * 3 * 16 * 256 * 256

    def test_linear_by_hand(self):
        assert linear_flops(nn.Linear(8, 4), tokens=10) == 2 * 8 * 4 * 10

    def test_attention_products_by_hand(self):
        # two products, each 2*N*M*C
        assert attention_product_flops(1024, 256, 64) == 2 * 2 * 1024 * 256 * 64

    def test_estimate_covers_both_encoder_passes(self):
        """The siamese forward runs every conv twice, so halving the input
        count halves conv flops exactly."""
        model = ChangeNet(ModelConfig())
        two = estimate_flops(model, 64, batch=2)
        one = estimate_flops(model, 64, batch=1)
        assert two["conv"] == 2 * one["conv"]
        assert two["total"] > two["conv"] > 0

    def test_attention_term_matches_token_counts(self):
        model = ChangeNet(ModelConfig())
        flops = estimate_flops(model, 64)
        expected = 0
        r = model.cfg.esa.reduction_ratio
        for k, c in enumerate(model.cfg.encoder.stage_channels):
            n = (64 // (4 * 2 ** k)) ** 2
            expected += attention_product_flops(n, math.ceil(n / r), c)
        assert flops["attention"] == expected


class TestMeasuredAttentionCost:
    def test_reduction_divides_measured_macs(self):
        base = measure_attention_macs(channels=64, n_tokens=1024, reduction=1)
        quarter = measure_attention_macs(channels=64, n_tokens=1024, reduction=4)
        assert base == 4 * quarter

    def test_macs_match_attention_shape(self):
        torch.manual_seed(0)
        attn = EfficientAttention(32, EsaConfig(reduction_ratio=2))
        x = torch.randn(1, 64, 32)
        _, weights = attn(x, need_weights=True)
        expected = 2 * weights.numel() * attn.head_dim
        assert measure_attention_macs(32, 64, 2) == expected

    def test_padding_rounds_reduced_length_up(self):
        macs = measure_attention_macs(channels=32, n_tokens=10, reduction=4)
        # 10 tokens pad to 12, reduced length 3
        heads = max(1, 32 // 32)
        assert macs == 2 * (heads * 10 * 3) * (32 // heads)

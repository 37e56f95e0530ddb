"""Parameter counting and FLOP estimation.

Parameters are counted from closed-form expressions per layer type, not by
enumerating tensors, so tests can cross-check the two routes against each
other. FLOPs are accumulated by forward hooks using the documented formulas:

    conv:      2 * K_h * K_w * (C_in / groups) * C_out * H_out * W_out
    linear:    2 * in_features * out_features * tokens
    attention: 2 * N * M * C per matrix product (two products), with
               M = ceil(N / R) reduced key/value positions

Elementwise work (activations, norms, additions) is excluded; it is linear
in the tensor sizes and does not move the totals.
"""
from __future__ import annotations

import math
from typing import Dict

import torch
from torch import nn

from .decoder import EfficientAttention


def _conv_params(m: nn.Conv2d) -> int:
    kh, kw = m.kernel_size
    count = kh * kw * (m.in_channels // m.groups) * m.out_channels
    if m.bias is not None:
        count += m.out_channels
    return count


def _linear_params(m: nn.Linear) -> int:
    count = m.in_features * m.out_features
    if m.bias is not None:
        count += m.out_features
    return count


def _norm_params(m) -> int:
    if isinstance(m, nn.BatchNorm2d):
        return 2 * m.num_features if m.affine else 0
    return 2 * math.prod(m.normalized_shape) if m.elementwise_affine else 0


_COUNTERS = {
    nn.Conv2d: _conv_params,
    nn.Linear: _linear_params,
    nn.BatchNorm2d: _norm_params,
    nn.LayerNorm: _norm_params,
}


def count_parameters(module: nn.Module) -> int:
    """Closed-form parameter count over all leaf layers.

    Raises on a parameterized layer type without a formula, so the count can
    never silently drift from the model.
    """
    total = 0
    for m in module.modules():
        counter = _COUNTERS.get(type(m))
        if counter is not None:
            total += counter(m)
        elif any(True for _ in m.parameters(recurse=False)):
            raise ValueError(f"no parameter formula for layer type {type(m).__name__}")
    return total


def conv_flops(m: nn.Conv2d, out_h: int, out_w: int) -> int:
    kh, kw = m.kernel_size
    return 2 * kh * kw * (m.in_channels // m.groups) * m.out_channels * out_h * out_w


def linear_flops(m: nn.Linear, tokens: int) -> int:
    return 2 * m.in_features * m.out_features * tokens


def attention_product_flops(n_tokens: int, reduced: int, channels: int) -> int:
    # q @ k^T and attn @ v, each 2*N*M*C across all heads
    return 2 * (2 * n_tokens * reduced * channels)


def estimate_flops(model: nn.Module, input_size: int, batch: int = 1) -> Dict[str, int]:
    """FLOPs of one bitemporal forward pass at input_size x input_size.

    Returns totals per op family plus the grand total. Linear layers inside
    the attention blocks are counted by the linear hook; the two attention
    matrix products are added by the attention hook.
    """
    totals = {"conv": 0, "linear": 0, "attention": 0}
    hooks = []

    def conv_hook(m, inputs, output):
        totals["conv"] += conv_flops(m, output.shape[-2], output.shape[-1]) \
            * output.shape[0]

    def linear_hook(m, inputs, output):
        tokens = output.numel() // output.shape[-1]
        totals["linear"] += linear_flops(m, tokens)

    def attention_hook(m, inputs, output):
        x = inputs[0]
        n = x.shape[1]
        reduced = math.ceil(n / m.reduction_ratio)
        totals["attention"] += attention_product_flops(n, reduced, x.shape[-1]) \
            * x.shape[0]

    for m in model.modules():
        if isinstance(m, nn.Conv2d):
            hooks.append(m.register_forward_hook(conv_hook))
        elif isinstance(m, nn.Linear):
            hooks.append(m.register_forward_hook(linear_hook))
        elif isinstance(m, EfficientAttention):
            hooks.append(m.register_forward_hook(attention_hook))

    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            t = torch.zeros(batch, 3, input_size, input_size)
            model(t, t)
    finally:
        model.train(was_training)
        for h in hooks:
            h.remove()

    totals["total"] = sum(totals.values())
    return totals


def measure_attention_macs(channels: int, n_tokens: int, reduction: int,
                           head_count: int | None = None, seed: int = 0) -> int:
    """Multiply-accumulate count of the two attention products, measured from
    the shape of the attention matrix an actual forward pass produces."""
    from .config import EsaConfig

    torch.manual_seed(seed)
    attn_module = EfficientAttention(
        channels, EsaConfig(reduction_ratio=reduction, head_count=head_count))
    x = torch.randn(1, n_tokens, channels)
    _, attn = attn_module(x, need_weights=True)
    head_dim = attn_module.head_dim
    # q @ k^T does attn.numel() * head_dim MACs; attn @ v does the same
    return 2 * attn.numel() * head_dim

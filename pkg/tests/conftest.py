"""Shared fixtures and numeric oracles for the test suite."""
from __future__ import annotations

import dataclasses

import numpy as np
import pytest
import torch

from changedet import ChangeDataset, DataConfig, SynthConfig, generate_synthetic


def central_difference_gradient(fn, x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Gradient of scalar fn at x by central differences, one entry at a time.

    x must be double precision; fn must not mutate it.
    """
    assert x.dtype == torch.float64
    grad = torch.zeros_like(x)
    flat = x.reshape(-1)
    grad_flat = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        hi = float(fn(x))
        flat[i] = orig - eps
        lo = float(fn(x))
        flat[i] = orig
        grad_flat[i] = (hi - lo) / (2.0 * eps)
    return grad


def relative_gradient_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    denom = analytic.norm() + numeric.norm() + 1e-12
    return float((analytic - numeric).norm() / denom)


def check_input_gradient(module_fn, x: torch.Tensor, tol: float = 1e-3) -> float:
    """Compare autograd input-gradients of scalar module_fn(x) against central
    differences. Returns the relative error; asserts it is below tol."""
    x = x.detach().clone().requires_grad_(True)
    value = module_fn(x)
    value.backward()
    analytic = x.grad.detach().clone()
    numeric = central_difference_gradient(
        lambda t: module_fn(t.detach()), x.detach().clone())
    err = relative_gradient_error(analytic, numeric)
    assert err < tol, f"gradient mismatch: relative error {err:.3e} >= {tol}"
    return err


def dense_attention_oracle(x: np.ndarray, weights: dict, heads: int) -> np.ndarray:
    """Plain dense self-attention with explicit loops, double precision.

    Mirrors the attention block contract end to end: layer norm, q/k/v
    projections, per-head scaled dot products with a full key set, context,
    output projection, residual add. Reduction is assumed identity (R=1).
    """
    x = x.astype(np.float64)
    n, c = x.shape
    d = c // heads

    mean = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    y = (x - mean) / np.sqrt(var + 1e-5)
    y = y * weights["norm_w"] + weights["norm_b"]

    def project(t, name):
        return t @ weights[f"{name}_w"].T + weights[f"{name}_b"]

    q, k, v = project(y, "q"), project(y, "k"), project(y, "v")
    ctx = np.zeros((n, c))
    for h in range(heads):
        sl = slice(h * d, (h + 1) * d)
        qh, kh, vh = q[:, sl], k[:, sl], v[:, sl]
        for i in range(n):
            logits = np.array([qh[i] @ kh[j] / np.sqrt(d) for j in range(n)])
            weights_row = np.exp(logits - logits.max())
            weights_row /= weights_row.sum()
            ctx[i, sl] = sum(weights_row[j] * vh[j] for j in range(n))
    return x + ctx @ weights["out_w"].T + weights["out_b"]


def attention_weights_as_numpy(module) -> dict:
    sd = {k: v.detach().numpy().astype(np.float64) for k, v in module.state_dict().items()}
    return {
        "norm_w": sd["norm.weight"], "norm_b": sd["norm.bias"],
        "q_w": sd["q_proj.weight"], "q_b": sd["q_proj.bias"],
        "k_w": sd["k_proj.weight"], "k_b": sd["k_proj.bias"],
        "v_w": sd["v_proj.weight"], "v_b": sd["v_proj.bias"],
        "out_w": sd["out_proj.weight"], "out_b": sd["out_proj.bias"],
    }


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_synth_root(tmp_path_factory):
    """A few small samples for data/CLI round trips."""
    root = tmp_path_factory.mktemp("synth_small")
    cfg = SynthConfig(patch_size=64, num_train=6, num_val=3, num_test=3, seed=7)
    generate_synthetic(cfg, root)
    return root


DESK_TIMES = {}


@pytest.fixture(scope="session")
def desk_synth_root(tmp_path_factory):
    """The desk-scale dataset used by the end-to-end acceptance runs."""
    import time

    root = tmp_path_factory.mktemp("synth_desk")
    started = time.monotonic()
    generate_synthetic(SynthConfig(), root)
    DESK_TIMES["synth"] = time.monotonic() - started
    return root


@pytest.fixture(scope="session")
def desk_run(desk_synth_root, tmp_path_factory):
    """Full desk-scale training run: dataset, checkpoints, test metrics."""
    import time

    from changedet import desk_preset, evaluate_dataset, train_loop
    from changedet.training import load_model_from_checkpoint

    run_dir = tmp_path_factory.mktemp("desk_run")
    cfg = desk_preset()
    cfg = dataclasses.replace(
        cfg,
        data=dataclasses.replace(cfg.data, root=str(desk_synth_root)),
        train=dataclasses.replace(cfg.train, checkpoint_dir=str(run_dir)))

    started = time.monotonic()
    train_data = ChangeDataset(desk_synth_root, "train", cfg.data)
    val_data = ChangeDataset(desk_synth_root, "val", cfg.data)
    final = train_loop(cfg, train_data, val_data)
    DESK_TIMES["train"] = time.monotonic() - started

    model, _, best = load_model_from_checkpoint(run_dir / "best.pt")
    test_data = ChangeDataset(desk_synth_root, "test", no_augment(cfg.data))
    test_report = evaluate_dataset(model, test_data, cfg.train.batch_size)
    DESK_TIMES["total"] = DESK_TIMES["synth"] + (time.monotonic() - started)
    return {
        "cfg": cfg,
        "root": desk_synth_root,
        "run_dir": run_dir,
        "best_path": run_dir / "best.pt",
        "best_val_f1": best.best_f1,
        "test_report": test_report,
        "final_iteration": final.iteration,
    }


@pytest.fixture
def small_dataset(small_synth_root):
    return ChangeDataset(small_synth_root, "train",
                         DataConfig(root=str(small_synth_root)))


def no_augment(cfg: DataConfig) -> DataConfig:
    return dataclasses.replace(cfg, augment=False)

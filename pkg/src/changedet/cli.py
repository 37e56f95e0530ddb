"""Command line: train, eval, predict, synth-data, inspect.

One config file drives everything; `--set a.b.c=value` overrides single
fields. Exit codes: 0 success, 1 config/validation error, 2 runtime failure.
"""
from __future__ import annotations

import dataclasses
import functools
import json
import sys
from pathlib import Path

import click
import numpy as np
import torch
from PIL import Image

from .complexity import count_parameters, estimate_flops
from .config import (ConfigError, RunConfig, apply_ablation, desk_preset,
                     full_preset, load_run_config, run_config_from_dict,
                     save_run_config, set_by_path)
from .data import ChangeDataset
from .metrics import METRIC_NAMES, ConfusionCounts, compute_metrics, format_report
from .model import ChangeNet
from .synth import generate_synthetic
from .training import (DivergenceError, evaluate_dataset,
                       load_model_from_checkpoint, train_loop)
from .validation import (DimensionError, ShapeMismatchError, as_float_image,
                         check_divisible)

VALIDATION_ERRORS = (ConfigError, DimensionError, ShapeMismatchError,
                     FileNotFoundError, ValueError)


def handle_errors(fn):
    """Map documented error families onto the exit-code contract."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except VALIDATION_ERRORS as exc:
            click.echo(f"error: {exc}")
            sys.exit(1)
        except (DivergenceError, RuntimeError, OSError) as exc:
            click.echo(f"runtime failure: {exc}")
            sys.exit(2)

    return wrapper


def config_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(), default=None,
                      help="YAML run config; defaults to the chosen preset.")(fn)
    fn = click.option("--preset", type=click.Choice(["desk", "full"]),
                      default="desk", show_default=True,
                      help="Base config when no file is given.")(fn)
    fn = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                      help="Override a config field by dotted path, "
                           "e.g. --set train.max_iters=200")(fn)
    return fn


def resolve_config(config_path, preset, overrides) -> RunConfig:
    if config_path is not None:
        cfg = load_run_config(config_path)
    else:
        cfg = desk_preset() if preset == "desk" else full_preset()
    if overrides:
        data = cfg.to_dict()
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            set_by_path(data, key, value)
        cfg = run_config_from_dict(data)
    return cfg


@click.group()
def main():
    """Bitemporal change detection toolkit."""


@main.command()
@config_options
@click.option("--echo-every", default=50, show_default=True,
              help="Print one progress line every N iterations (0 silences).")
@handle_errors
def train(config_path, preset, overrides, echo_every):
    """Train a model and write checkpoints, logs and a metrics report."""
    cfg = resolve_config(config_path, preset, overrides)
    train_data = ChangeDataset(cfg.data.root, "train", cfg.data)
    val_data = ChangeDataset(cfg.data.root, "val", cfg.data)
    out_dir = Path(cfg.train.checkpoint_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_run_config(cfg, out_dir / "run_config.yaml")

    ckpt = train_loop(cfg, train_data, val_data, echo_every=echo_every)
    click.echo(f"finished {ckpt.iteration} iterations, best val f1 "
               f"{max(ckpt.best_f1, 0.0):.4f}")

    model, _, _ = load_model_from_checkpoint(out_dir / "best.pt")
    eval_cfg = dataclasses.replace(cfg.data, augment=False)
    report = evaluate_dataset(model, ChangeDataset(cfg.data.root, "test", eval_cfg),
                              cfg.train.batch_size)
    with open(out_dir / "metrics.json", "w") as f:
        json.dump(report.as_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    click.echo(format_report(report))


@main.command("eval")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--data-root", default=None, type=click.Path(),
              help="Dataset root; defaults to the checkpoint's data root.")
@click.option("--split", default="test", show_default=True,
              type=click.Choice(["train", "val", "test"]))
@click.option("--out", default=None, type=click.Path(),
              help="Write the metric report as JSON here.")
@handle_errors
def eval_cmd(checkpoint, data_root, split, out):
    """Evaluate a checkpoint; print percentages, write a JSON report."""
    model, cfg, _ = load_model_from_checkpoint(checkpoint)
    eval_cfg = dataclasses.replace(cfg.data, augment=False)
    dataset = ChangeDataset(data_root or cfg.data.root, split, eval_cfg)
    report = evaluate_dataset(model, dataset, cfg.train.batch_size)

    click.echo(f"{split} split, {len(dataset)} patches")
    for name in METRIC_NAMES:
        click.echo(f"{name:<10} {100.0 * getattr(report, name):6.2f}")
    if report.degenerate:
        click.echo("note: a zero-denominator score was pinned to 0")
    if out:
        with open(out, "w") as f:
            json.dump(report.as_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


def _read_image(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def _pad_to_multiple(x: torch.Tensor, multiple: int):
    h, w = x.shape[-2:]
    ph = (multiple - h % multiple) % multiple
    pw = (multiple - w % multiple) % multiple
    if ph or pw:
        x = torch.nn.functional.pad(x, (0, pw, 0, ph), mode="reflect")
    return x


OVERLAY_COLORS = {  # outcome -> RGB
    "tp": (255, 255, 255),
    "tn": (0, 0, 0),
    "fp": (255, 0, 0),
    "fn": (0, 0, 255),
}


def outcome_overlay(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Color-coded comparison image: white tp, black tn, red fp, blue fn."""
    overlay = np.zeros(pred.shape + (3,), dtype=np.uint8)
    p = pred.astype(bool)
    t = target.astype(bool)
    overlay[p & t] = OVERLAY_COLORS["tp"]
    overlay[~p & ~t] = OVERLAY_COLORS["tn"]
    overlay[p & ~t] = OVERLAY_COLORS["fp"]
    overlay[~p & t] = OVERLAY_COLORS["fn"]
    return overlay


@main.command()
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--t1", "t1_path", required=True, type=click.Path())
@click.option("--t2", "t2_path", required=True, type=click.Path())
@click.option("--label", "label_path", default=None, type=click.Path(),
              help="Ground-truth mask; enables the outcome overlay.")
@click.option("--out-dir", default="predictions", show_default=True,
              type=click.Path())
@click.option("--save-stages", is_flag=True,
              help="Also write the four per-level probability maps.")
@click.option("--pad", is_flag=True,
              help="Reflect-pad inputs up to a multiple of 32, crop the "
                   "output back, instead of rejecting odd sizes.")
@handle_errors
def predict(checkpoint, t1_path, t2_path, label_path, out_dir, save_stages, pad):
    """Predict a binary change map for one image pair."""
    model, cfg, _ = load_model_from_checkpoint(checkpoint)
    t1 = as_float_image(_read_image(t1_path), "t1")
    t2 = as_float_image(_read_image(t2_path), "t2")
    if t1.shape != t2.shape:
        raise ShapeMismatchError(f"t1 {t1.shape} vs t2 {t2.shape}")
    h, w = t1.shape[:2]
    if not pad:
        check_divisible(h, w, name="input (use --pad to allow)")

    mean = np.asarray(cfg.data.mean, dtype=np.float32)
    std = np.asarray(cfg.data.std, dtype=np.float32)
    to_tensor = lambda img: torch.from_numpy(  # noqa: E731
        ((img - mean) / std).transpose(2, 0, 1).copy())[None]
    x1 = _pad_to_multiple(to_tensor(t1), 32)
    x2 = _pad_to_multiple(to_tensor(t2), 32)

    with torch.no_grad():
        preds = model(x1, x2)
    probs = [p[0, 0, :h, :w].numpy() for p in preds]
    change = (probs[0] >= model.threshold).astype(np.uint8)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    Image.fromarray(change * 255).save(out / "change_map.png")
    if save_stages:
        for i, p in enumerate(probs, start=1):
            Image.fromarray((p * 255).round().astype(np.uint8)).save(
                out / f"prob_level{i}.png")
    if label_path:
        with Image.open(label_path) as img:
            target = (np.asarray(img.convert("L")) >= 128).astype(np.uint8)
        if target.shape != (h, w):
            raise ShapeMismatchError(f"label {target.shape} vs image {(h, w)}")
        Image.fromarray(outcome_overlay(change, target)).save(out / "overlay.png")
        report = compute_metrics(ConfusionCounts().update(change, target))
        click.echo(format_report(report))
    click.echo(f"wrote {out / 'change_map.png'}")


@main.command("synth-data")
@config_options
@click.option("--root", default=None, type=click.Path(),
              help="Output directory; defaults to the config's data root.")
@handle_errors
def synth_data(config_path, preset, overrides, root):
    """Generate the synthetic bitemporal dataset."""
    cfg = resolve_config(config_path, preset, overrides)
    target = Path(root or cfg.data.root)
    manifest = generate_synthetic(cfg.synth, target)
    counts = ", ".join(f"{k}={v}" for k, v in manifest["counts"].items())
    click.echo(f"wrote {counts} samples of {cfg.synth.patch_size}px under {target}")


@main.command()
@config_options
@click.option("--input-size", default=256, show_default=True,
              help="Square input size for the FLOP estimate.")
@click.option("--out", default=None, type=click.Path(),
              help="Write the numbers as JSON here.")
@handle_errors
def inspect(config_path, preset, overrides, input_size, out):
    """Report parameter count and a FLOP estimate for one forward pass."""
    cfg = resolve_config(config_path, preset, overrides)
    check_divisible(input_size, input_size, name="--input-size")
    model = ChangeNet(apply_ablation(cfg.model, cfg.train.ablation))
    params = count_parameters(model)
    flops = estimate_flops(model, input_size)
    click.echo(f"parameters  {params:>14,}  ({params / 1e6:.2f} M)")
    click.echo(f"flops @ {input_size}px, by op family:")
    for key in ("conv", "linear", "attention"):
        click.echo(f"  {key:<9} {flops[key]:>14,}  ({flops[key] / 1e9:.2f} G)")
    click.echo(f"  {'total':<9} {flops['total']:>14,}  ({flops['total'] / 1e9:.2f} G)")
    if out:
        with open(out, "w") as f:
            json.dump({"param_count": params, "flop_estimate": flops,
                       "input_size": input_size}, f, indent=2, sort_keys=True)
            f.write("\n")


if __name__ == "__main__":
    main()

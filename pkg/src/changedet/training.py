"""Training loop: optimizer, poly learning-rate decay, checkpointing, eval.

The loop is iteration-based (not epoch-based) and deterministic for a given
config: one numpy generator drives batch sampling and augmentation, and its
state is checkpointed, so a resumed run continues the exact sample stream of
an uninterrupted one.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .config import RunConfig, apply_ablation
from .data import augment, collate
from .losses import total_loss
from .metrics import ConfusionCounts, MetricReport, compute_metrics
from .model import ChangeNet, predictions_as_list


class DivergenceError(RuntimeError):
    """Training aborted on a non-finite loss."""


def poly_lr(iteration: int, lr0: float, max_iters: int, power: float = 0.9) -> float:
    """lr0 * (1 - iteration / max_iters) ** power."""
    if not 0 <= iteration <= max_iters:
        raise ValueError(f"iteration {iteration} outside [0, {max_iters}]")
    return lr0 * (1.0 - iteration / max_iters) ** power


@dataclass
class Checkpoint:
    model_state: dict
    optimizer_state: dict
    iteration: int
    config: dict
    config_hash: str
    best_f1: float
    numpy_rng_state: dict
    torch_rng_state: torch.Tensor

    def save(self, path: str | Path):
        torch.save(self.__dict__, path)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        if not Path(path).exists():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        return cls(**torch.load(path, weights_only=False))


def build_optimizer(model: torch.nn.Module, cfg) -> torch.optim.Optimizer:
    return torch.optim.AdamW(model.parameters(), lr=cfg.lr0,
                             betas=(cfg.beta1, cfg.beta2),
                             weight_decay=cfg.weight_decay)


@torch.no_grad()
def evaluate_dataset(model: ChangeNet, dataset, batch_size: int = 8) -> MetricReport:
    """Micro-averaged metrics of thresholded finest-level predictions."""
    was_training = model.training
    model.eval()
    counts = ConfusionCounts()
    try:
        for start in range(0, len(dataset), batch_size):
            pairs = [dataset[i] for i in range(start, min(start + batch_size, len(dataset)))]
            t1, t2, g = collate(pairs)
            probs = model(t1, t2).p1
            pred = (probs >= model.threshold).to(torch.uint8)
            counts.update(pred, g.to(torch.uint8))
    finally:
        model.train(was_training)
    return compute_metrics(counts)


class TrainLogger:
    """One JSON record per line; stdout echo is optional."""

    def __init__(self, path: Optional[Path], echo_every: int = 0):
        self.file = open(path, "a") if path else None
        self.echo_every = echo_every

    def log(self, record: dict):
        if self.file:
            self.file.write(json.dumps(record) + "\n")
            self.file.flush()
        step = record.get("iter")
        if self.echo_every and step is not None and step % self.echo_every == 0:
            print("  ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                            for k, v in record.items()))

    def close(self):
        if self.file:
            self.file.close()


def train_loop(cfg: RunConfig, train_data, val_data=None,
               resume_from: str | Path | None = None,
               echo_every: int = 0, stop_after: int | None = None) -> Checkpoint:
    """Run the configured number of iterations; return the final checkpoint.

    Writes `latest.pt`, `best.pt` (highest validation f1 on the finest head)
    and `train_log.jsonl` under the checkpoint directory. `stop_after`
    interrupts the run at that iteration while keeping the full schedule, so
    a later `resume_from` continues exactly where it stopped.
    """
    cfg.validate()
    if len(train_data) == 0:
        raise ValueError("training dataset is empty")
    tcfg = cfg.train
    out_dir = Path(tcfg.checkpoint_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(tcfg.seed)
    model_cfg = apply_ablation(cfg.model, tcfg.ablation)
    model = ChangeNet(model_cfg)
    optimizer = build_optimizer(model, tcfg)
    rng = np.random.default_rng(tcfg.seed)
    start_iter = 0
    best_f1 = -1.0

    if resume_from is not None:
        ckpt = Checkpoint.load(resume_from)
        if ckpt.config_hash != cfg.config_hash():
            raise ValueError("checkpoint was written with a different config "
                             f"(hash {ckpt.config_hash[:12]} != {cfg.config_hash()[:12]})")
        model.load_state_dict(ckpt.model_state)
        optimizer.load_state_dict(ckpt.optimizer_state)
        rng.bit_generator.state = ckpt.numpy_rng_state
        torch.set_rng_state(ckpt.torch_rng_state)
        start_iter = ckpt.iteration
        best_f1 = ckpt.best_f1

    logger = TrainLogger(out_dir / "train_log.jsonl", echo_every)
    augment_cfg = cfg.data if cfg.data.augment else None

    def snapshot(iteration: int) -> Checkpoint:
        return Checkpoint(
            model_state=model.state_dict(),
            optimizer_state=optimizer.state_dict(),
            iteration=iteration,
            config=cfg.to_dict(),
            config_hash=cfg.config_hash(),
            best_f1=best_f1,
            numpy_rng_state=rng.bit_generator.state,
            torch_rng_state=torch.get_rng_state(),
        )

    last_iter = tcfg.max_iters if stop_after is None else min(stop_after, tcfg.max_iters)
    model.train()
    started = time.monotonic()
    try:
        for iteration in range(start_iter, last_iter):
            lr = poly_lr(iteration, tcfg.lr0, tcfg.max_iters, tcfg.poly_power)
            for group in optimizer.param_groups:
                group["lr"] = lr

            indices = rng.integers(0, len(train_data), size=tcfg.batch_size)
            pairs = [train_data[int(i)] for i in indices]
            if augment_cfg is not None:
                pairs = [augment(p, rng, augment_cfg) for p in pairs]
            t1, t2, g = collate(pairs)

            preds = model(t1, t2)
            report = total_loss(predictions_as_list(preds), g)
            if not torch.isfinite(report.total):
                raise DivergenceError(
                    f"non-finite loss at iteration {iteration}: {report.total.item()}")
            optimizer.zero_grad()
            report.total.backward()
            optimizer.step()
            done = iteration + 1

            record = {"iter": done, "lr": lr, "bce": report.bce.item(),
                      "dice": report.dice.item(), "total": report.total.item()}
            if val_data is not None and (done % tcfg.eval_every == 0
                                         or done == tcfg.max_iters):
                metrics = evaluate_dataset(model, val_data, tcfg.batch_size)
                record.update(val_f1=metrics.f1, val_iou=metrics.iou)
                if metrics.f1 > best_f1:
                    best_f1 = metrics.f1
                    snapshot(done).save(out_dir / "best.pt")
            logger.log(record)

            if done % tcfg.eval_every == 0 or done == tcfg.max_iters:
                snapshot(done).save(out_dir / "latest.pt")
    finally:
        logger.close()

    final = snapshot(last_iter)
    final.save(out_dir / "latest.pt")
    if stop_after is None:
        if best_f1 < 0:  # no validation data: best == latest
            final.save(out_dir / "best.pt")
        done_record = {"event": "done", "iters": tcfg.max_iters,
                       "seconds": round(time.monotonic() - started, 3),
                       "best_f1": max(best_f1, 0.0)}
        with open(out_dir / "train_log.jsonl", "a") as f:
            f.write(json.dumps(done_record) + "\n")
    return final


def load_model_from_checkpoint(path: str | Path):
    """Rebuild the model (with ablation applied) from a checkpoint file."""
    from .config import run_config_from_dict

    ckpt = Checkpoint.load(path)
    cfg = run_config_from_dict(ckpt.config)
    model = ChangeNet(apply_ablation(cfg.model, cfg.train.ablation))
    model.load_state_dict(ckpt.model_state)
    model.eval()
    return model, cfg, ckpt

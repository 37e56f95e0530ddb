"""Estimator-style wrapper: fit on arrays of image pairs, predict change maps.

This is the in-memory front door for small experiments and the test suite;
the command line drives the same training loop from files on disk.
"""
from __future__ import annotations

import dataclasses
import tempfile
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator

from .config import RunConfig, desk_preset
from .data import BitemporalPair
from .metrics import ConfusionCounts, compute_metrics
from .training import evaluate_dataset, load_model_from_checkpoint, train_loop
from .validation import as_float_image, check_binary, check_same_shape


def _standardize(img: np.ndarray, mean, std) -> np.ndarray:
    return ((img - np.asarray(mean, dtype=np.float32))
            / np.asarray(std, dtype=np.float32)).astype(np.float32)


def pairs_from_arrays(X, y=None, mean=(0.5, 0.5, 0.5), std=(0.5, 0.5, 0.5)
                      ) -> List[BitemporalPair]:
    """Build standardized pairs from (t1, t2) tuples and optional masks.

    Accepts a sequence of (t1, t2) array tuples or one array of shape
    [n, 2, H, W, 3]; images may be uint8 or floats in [0, 1].
    """
    pairs = []
    n = len(X)
    for i in range(n):
        t1, t2 = X[i][0], X[i][1]
        t1 = as_float_image(np.asarray(t1), f"X[{i}][0]")
        t2 = as_float_image(np.asarray(t2), f"X[{i}][1]")
        check_same_shape(t1, t2, f"X[{i}][0]", f"X[{i}][1]")
        if y is not None:
            g = np.asarray(y[i])
            check_binary(g, f"y[{i}]")
            if g.shape != t1.shape[:2]:
                raise ValueError(f"y[{i}]: mask shape {g.shape} does not match "
                                 f"image shape {t1.shape[:2]}")
            g = g.astype(np.uint8)
        else:
            g = np.zeros(t1.shape[:2], dtype=np.uint8)
        pairs.append(BitemporalPair(_standardize(t1, mean, std),
                                    _standardize(t2, mean, std), g, f"{i:05d}"))
    return pairs


class ChangeDetector(BaseEstimator):
    """Bitemporal change detector with a fit/predict surface.

    Parameters
    ----------
    config : RunConfig, optional
        Full run configuration. Defaults to the desk-scale preset.
    max_iters, batch_size, lr0, seed : optional overrides applied on top of
        the config's training section.
    val_fraction : float
        Tail fraction of the training pairs held out to pick the best
        checkpoint. 0 keeps the final iterate.
    """

    def __init__(self, config: Optional[RunConfig] = None, max_iters: Optional[int] = None,
                 batch_size: Optional[int] = None, lr0: Optional[float] = None,
                 seed: Optional[int] = None, val_fraction: float = 0.1):
        self.config = config
        self.max_iters = max_iters
        self.batch_size = batch_size
        self.lr0 = lr0
        self.seed = seed
        self.val_fraction = val_fraction

    def _resolved_config(self) -> RunConfig:
        cfg = self.config if self.config is not None else desk_preset()
        train = cfg.train
        overrides = {k: v for k, v in (("max_iters", self.max_iters),
                                       ("batch_size", self.batch_size),
                                       ("lr0", self.lr0),
                                       ("seed", self.seed)) if v is not None}
        if overrides:
            train = dataclasses.replace(train, **overrides)
        return dataclasses.replace(cfg, train=train)

    def fit(self, X, y):
        """Train on pairs X (sequence of (t1, t2)) and binary masks y."""
        cfg = self._resolved_config()
        pairs = pairs_from_arrays(X, y, cfg.data.mean, cfg.data.std)
        if not pairs:
            raise ValueError("X is empty")
        n_val = int(len(pairs) * self.val_fraction)
        train_pairs = pairs[:len(pairs) - n_val] if n_val else pairs
        val_pairs = pairs[len(pairs) - n_val:] if n_val else None

        with tempfile.TemporaryDirectory(prefix="changedet_fit_") as tmp:
            cfg = dataclasses.replace(
                cfg, train=dataclasses.replace(cfg.train, checkpoint_dir=tmp))
            train_loop(cfg, train_pairs, val_pairs)
            which = "best.pt" if val_pairs else "latest.pt"
            model, _, ckpt = load_model_from_checkpoint(f"{tmp}/{which}")
        self.model_ = model
        self.config_ = cfg
        self.best_f1_ = ckpt.best_f1
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("this ChangeDetector instance is not fitted yet")

    def predict_proba(self, X) -> np.ndarray:
        """Finest-level change probabilities, shape [n, H, W]."""
        self._check_fitted()
        import torch

        from .data import collate

        cfg = self.config_
        pairs = pairs_from_arrays(X, None, cfg.data.mean, cfg.data.std)
        self.model_.eval()
        out = []
        with torch.no_grad():
            for start in range(0, len(pairs), cfg.train.batch_size):
                t1, t2, _ = collate(pairs[start:start + cfg.train.batch_size])
                out.append(self.model_(t1, t2).p1[:, 0].numpy())
        return np.concatenate(out, axis=0)

    def predict(self, X) -> np.ndarray:
        """Binary change maps, shape [n, H, W], values in {0, 1}."""
        probs = self.predict_proba(X)
        return (probs >= self.config_.model.threshold).astype(np.uint8)

    def score(self, X, y) -> float:
        """Micro-averaged f1 of the predicted change maps against y."""
        preds = self.predict(X)
        counts = ConfusionCounts()
        for i in range(len(preds)):
            g = np.asarray(y[i])
            check_binary(g, f"y[{i}]")
            counts.update(preds[i], g.astype(np.uint8))
        return compute_metrics(counts).f1

    def evaluate(self, dataset) -> "MetricReport":
        """Metric report over a dataset of BitemporalPair items."""
        self._check_fitted()
        return evaluate_dataset(self.model_, dataset,
                                self.config_.train.batch_size)

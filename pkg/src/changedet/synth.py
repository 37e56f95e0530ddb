"""Synthetic bitemporal dataset generator.

Each sample is a textured background with a handful of colored shapes.
Between the two timestamps a subset of shapes appears or disappears; the
ground-truth mask is exactly the set of pixels whose visible shape (or
background) differs. The second image additionally gets a global
illumination shift and pixel noise, so the network has to learn that
photometric variation is not change.

Generation is a pure function of the config: every sample derives its own
generator from (seed, split, index), and regenerating with the same config
writes byte-identical files.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import List

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .config import SynthConfig

SPLIT_COUNTS = ("num_train", "num_val", "num_test")

# role: present in t1 only (removed), t2 only (added), or both (persists)
ROLES = ("persist", "add", "remove")


@dataclass
class _Shape:
    kind: str          # "ellipse" | "rect"
    center: np.ndarray  # (cy, cx) float
    half: np.ndarray    # (hy, hx) float half-extent
    angle: float
    color: np.ndarray   # (3,) float in [0, 1]
    role: str


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    """Low-frequency texture: coarse random grid upsampled bilinearly.

    Values stay inside a mid-gray band so shape colors remain separable.
    """
    coarse = rng.uniform(0.3, 0.7, size=(3, 5, 5)).astype(np.float32)
    up = F.interpolate(torch.from_numpy(coarse)[None], size=(size, size),
                       mode="bilinear", align_corners=False)[0]
    return up.numpy().transpose(1, 2, 0)


def _sample_shape(rng: np.random.Generator, size: int) -> _Shape:
    kind = "ellipse" if rng.random() < 0.5 else "rect"
    center = rng.uniform(0.15 * size, 0.85 * size, size=2)
    half = rng.uniform(0.08 * size, 0.2 * size, size=2)
    angle = rng.uniform(0.0, np.pi)
    # saturated color away from the mid-gray background band
    color = rng.uniform(0.0, 1.0, size=3)
    color[rng.integers(0, 3)] = rng.choice([0.0, 1.0])
    role = ROLES[rng.integers(0, len(ROLES))]
    return _Shape(kind, center, half, angle, color.astype(np.float32), role)


def _footprint(shape: _Shape, size: int) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    dy = ys - shape.center[0]
    dx = xs - shape.center[1]
    cos, sin = np.cos(shape.angle), np.sin(shape.angle)
    u = (cos * dx + sin * dy) / shape.half[1]
    v = (-sin * dx + cos * dy) / shape.half[0]
    if shape.kind == "ellipse":
        return u * u + v * v <= 1.0
    return (np.abs(u) <= 1.0) & (np.abs(v) <= 1.0)


def _compose(background: np.ndarray, shapes: List[_Shape],
             footprints: List[np.ndarray], present: List[bool]):
    """Render the visible shapes over the background, last drawn on top.

    Returns the image and the per-pixel index of the visible shape
    (-1 for background), which defines exact change footprints.
    """
    img = background.copy()
    visible = np.full(background.shape[:2], -1, dtype=np.int32)
    for i, (shape, mask) in enumerate(zip(shapes, footprints)):
        if not present[i]:
            continue
        img[mask] = shape.color
        visible[mask] = i
    return img, visible


def _to_u8(img: np.ndarray) -> np.ndarray:
    return (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def generate_sample(cfg: SynthConfig, rng: np.random.Generator):
    """One (t1, t2, g) triple as uint8 arrays."""
    size = cfg.patch_size
    background = _background(rng, size)
    lo, hi = cfg.shape_count_range
    count = int(rng.integers(lo, hi + 1))
    shapes = [_sample_shape(rng, size) for _ in range(count)]
    footprints = [_footprint(s, size) for s in shapes]

    in_t1 = [s.role in ("persist", "remove") for s in shapes]
    in_t2 = [s.role in ("persist", "add") for s in shapes]
    t1, vis1 = _compose(background, shapes, footprints, in_t1)
    t2, vis2 = _compose(background, shapes, footprints, in_t2)
    g = (vis1 != vis2).astype(np.uint8)

    shift = rng.uniform(-cfg.illumination_shift_range, cfg.illumination_shift_range)
    t2 = t2 * (1.0 + shift)
    if cfg.noise_level > 0:
        t2 = t2 + rng.normal(0.0, cfg.noise_level, size=t2.shape)
    return _to_u8(t1), _to_u8(t2), g


def generate_synthetic(cfg: SynthConfig, root: str | Path) -> dict:
    """Write the train/val/test splits under root; return the manifest."""
    cfg.validate()
    root = Path(root)
    counts = {}
    for split_index, (split, field_name) in enumerate(
            zip(("train", "val", "test"), SPLIT_COUNTS)):
        num = getattr(cfg, field_name)
        counts[split] = num
        dirs = {name: root / split / name for name in ("A", "B", "label")}
        for d in dirs.values():
            d.mkdir(parents=True, exist_ok=True)
        for index in range(num):
            rng = np.random.default_rng(
                np.random.SeedSequence([cfg.seed, split_index, index]))
            t1, t2, g = generate_sample(cfg, rng)
            sample_id = f"{index:05d}"
            Image.fromarray(t1).save(dirs["A"] / f"{sample_id}.png")
            Image.fromarray(t2).save(dirs["B"] / f"{sample_id}.png")
            Image.fromarray(g * 255).save(dirs["label"] / f"{sample_id}.png")
    manifest = {"config": dataclasses.asdict(cfg), "counts": counts,
                "layout": "<split>/{A,B,label}/<id>.png, label 0/255"}
    with open(root / "synth_manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest

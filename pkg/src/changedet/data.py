"""Dataset ingestion and augmentation for bitemporal image pairs.

Expected directory layout (one folder per split):

    <root>/<split>/A/<id>.png       image at time 1, 8-bit RGB
    <root>/<split>/B/<id>.png       image at time 2, 8-bit RGB
    <root>/<split>/label/<id>.png   change mask, 8-bit single channel

Masks are binarized at 128. Images are scaled to [0, 1] and standardized
with the configured per-channel constants. When a patch size is set, larger
sources are tiled into non-overlapping patches (stride = patch size).
"""
from __future__ import annotations

from pathlib import Path
from typing import List, NamedTuple, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .config import DataConfig
from .validation import ShapeMismatchError

SPLITS = ("train", "val", "test")


class BitemporalPair(NamedTuple):
    t1: np.ndarray  # [H, W, 3] float32, standardized
    t2: np.ndarray  # [H, W, 3] float32, standardized
    g: np.ndarray   # [H, W] uint8 in {0, 1}
    id: str


class _Item(NamedTuple):
    pair_id: str
    top: int
    left: int


def _read_size(path: Path) -> Tuple[int, int]:
    with Image.open(path) as img:
        w, h = img.size
    return h, w


def _load_rgb(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def _load_mask(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        raw = np.asarray(img.convert("L"))
    return (raw >= 128).astype(np.uint8)


class ChangeDataset:
    """Lazy sequence of standardized bitemporal pairs for one split.

    File presence and sizes are checked up front; pixels are read on access.
    """

    def __init__(self, root: str | Path, split: str, cfg: DataConfig | None = None):
        if split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
        self.cfg = cfg or DataConfig()
        self.split_dir = Path(root) / split
        self.dirs = {name: self.split_dir / name for name in ("A", "B", "label")}
        for name, d in self.dirs.items():
            if not d.is_dir():
                raise FileNotFoundError(f"missing directory: {d}")
        self.items = self._scan()

    def _scan(self) -> List[_Item]:
        ids = sorted(p.stem for p in self.dirs["A"].glob("*.png"))
        items: List[_Item] = []
        ps = self.cfg.patch_size
        for pair_id in ids:
            paths = {name: d / f"{pair_id}.png" for name, d in self.dirs.items()}
            for name in ("B", "label"):
                if not paths[name].exists():
                    raise FileNotFoundError(f"missing counterpart file: {paths[name]}")
            sizes = {name: _read_size(p) for name, p in paths.items()}
            if len(set(sizes.values())) != 1:
                detail = ", ".join(f"{n}={s}" for n, s in sizes.items())
                raise ShapeMismatchError(f"size mismatch for id {pair_id!r}: {detail}")
            h, w = sizes["A"]
            if ps is None or (h, w) == (ps, ps):
                items.append(_Item(pair_id, 0, 0))
            else:
                if h < ps or w < ps:
                    raise ShapeMismatchError(
                        f"id {pair_id!r} is {h}x{w}, smaller than patch size {ps}")
                for top in range(0, h - ps + 1, ps):
                    for left in range(0, w - ps + 1, ps):
                        items.append(_Item(pair_id, top, left))
        return items

    def __len__(self) -> int:
        return len(self.items)

    def standardize(self, img: np.ndarray) -> np.ndarray:
        x = img.astype(np.float32) / 255.0
        mean = np.asarray(self.cfg.mean, dtype=np.float32)
        std = np.asarray(self.cfg.std, dtype=np.float32)
        return (x - mean) / std

    def __getitem__(self, index: int) -> BitemporalPair:
        item = self.items[index]
        t1 = _load_rgb(self.dirs["A"] / f"{item.pair_id}.png")
        t2 = _load_rgb(self.dirs["B"] / f"{item.pair_id}.png")
        g = _load_mask(self.dirs["label"] / f"{item.pair_id}.png")
        ps = self.cfg.patch_size
        pair_id = item.pair_id
        if ps is not None and t1.shape[:2] != (ps, ps):
            sl = (slice(item.top, item.top + ps), slice(item.left, item.left + ps))
            t1, t2, g = t1[sl], t2[sl], g[sl]
            pair_id = f"{item.pair_id}_{item.top}_{item.left}"
        return BitemporalPair(self.standardize(t1), self.standardize(t2), g, pair_id)


# ---------------------------------------------------------------------------
# augmentation


def _resize(img: np.ndarray, size: Tuple[int, int], mode: str) -> np.ndarray:
    """Resize [H, W, C] float or [H, W] mask arrays."""
    if img.ndim == 2:
        t = torch.from_numpy(img[None, None].astype(np.float32))
    else:
        t = torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1))[None])
    kwargs = {} if mode == "nearest" else {"align_corners": False}
    out = F.interpolate(t, size=size, mode=mode, **kwargs)[0]
    if img.ndim == 2:
        return out[0].numpy()
    return out.numpy().transpose(1, 2, 0)


def crop_and_resize(pair: BitemporalPair, top: int, left: int, crop_h: int,
                    crop_w: int) -> BitemporalPair:
    """Crop the same window from all three arrays, resize back to full size.

    Images are resized bilinearly, the mask with nearest neighbor so it stays
    binary.
    """
    h, w = pair.g.shape
    sl = (slice(top, top + crop_h), slice(left, left + crop_w))
    t1 = _resize(pair.t1[sl], (h, w), "bilinear")
    t2 = _resize(pair.t2[sl], (h, w), "bilinear")
    g = _resize(pair.g[sl], (h, w), "nearest").astype(np.uint8)
    return BitemporalPair(t1, t2, g, pair.id)


def augment(pair: BitemporalPair, rng: np.random.Generator,
            cfg: DataConfig | None = None) -> BitemporalPair:
    """Randomized flips, crop-and-resize, and temporal exchange.

    Spatial transforms are applied jointly to t1, t2 and g. Temporal exchange
    swaps t1 and t2 only; the change mask is undirected, so g is untouched.
    """
    cfg = cfg or DataConfig()
    t1, t2, g = pair.t1, pair.t2, pair.g
    if rng.random() < cfg.flip_prob:
        t1, t2, g = t1[:, ::-1], t2[:, ::-1], g[:, ::-1]
    if rng.random() < cfg.flip_prob:
        t1, t2, g = t1[::-1], t2[::-1], g[::-1]
    pair = BitemporalPair(np.ascontiguousarray(t1), np.ascontiguousarray(t2),
                          np.ascontiguousarray(g), pair.id)
    if rng.random() < cfg.crop_prob:
        h, w = pair.g.shape
        scale = rng.uniform(*cfg.crop_scale)
        crop_h = max(1, round(h * scale))
        crop_w = max(1, round(w * scale))
        top = int(rng.integers(0, h - crop_h + 1))
        left = int(rng.integers(0, w - crop_w + 1))
        pair = crop_and_resize(pair, top, left, crop_h, crop_w)
    if rng.random() < cfg.exchange_prob:
        pair = temporal_exchange(pair)
    return pair


def temporal_exchange(pair: BitemporalPair) -> BitemporalPair:
    return BitemporalPair(pair.t2, pair.t1, pair.g, pair.id)


# ---------------------------------------------------------------------------
# batching


def pair_to_tensors(pair: BitemporalPair):
    """(t1, t2, g) as [3, H, W], [3, H, W], [1, H, W] float32 tensors."""
    t1 = torch.from_numpy(np.ascontiguousarray(pair.t1.transpose(2, 0, 1)))
    t2 = torch.from_numpy(np.ascontiguousarray(pair.t2.transpose(2, 0, 1)))
    g = torch.from_numpy(pair.g.astype(np.float32))[None]
    return t1, t2, g


def collate(pairs: List[BitemporalPair]):
    """Stack pairs into [B, 3, H, W] x2 and [B, 1, H, W] batch tensors."""
    tensors = [pair_to_tensors(p) for p in pairs]
    t1 = torch.stack([t[0] for t in tensors])
    t2 = torch.stack([t[1] for t in tensors])
    g = torch.stack([t[2] for t in tensors])
    return t1, t2, g

"""Input validation helpers shared by the data pipeline, model and estimator."""
from __future__ import annotations

import numpy as np


class DimensionError(ValueError):
    """Input spatial size violates the encoder's divisibility contract."""


class ShapeMismatchError(ValueError):
    """Paired arrays disagree on shape."""


def check_divisible(height: int, width: int, name: str = "input", by: int = 32):
    if height % by != 0:
        raise DimensionError(f"{name}: height {height} not divisible by {by}")
    if width % by != 0:
        raise DimensionError(f"{name}: width {width} not divisible by {by}")


def check_same_shape(a, b, name_a: str = "t1", name_b: str = "t2"):
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeMismatchError(
            f"{name_a} shape {tuple(a.shape)} != {name_b} shape {tuple(b.shape)}")


def check_binary(arr, name: str = "mask"):
    values = np.unique(np.asarray(arr))
    if not np.isin(values, (0, 1)).all():
        raise ValueError(f"{name}: expected binary values in {{0, 1}}, "
                         f"found {values[:8].tolist()}")


def as_float_image(img, name: str = "image") -> np.ndarray:
    """Coerce an H x W x 3 image to float32 in [0, 1]; uint8 is rescaled."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[-1] != 3:
        raise ValueError(f"{name}: expected H x W x 3 array, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        return arr.astype(np.float32) / 255.0
    arr = arr.astype(np.float32)
    if arr.size and (arr.min() < -1e-6 or arr.max() > 1.0 + 1e-6):
        raise ValueError(f"{name}: float image values must lie in [0, 1]")
    return arr

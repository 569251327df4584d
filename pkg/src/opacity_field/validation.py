"""Input checks shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np


def check_alpha(alpha, name: str = "alpha") -> np.ndarray:
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matte, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    if a.size and (a.min() < 0 or a.max() > 1):
        raise ValueError(f"{name} values must lie in [0, 1]")
    return a


def check_image(image, name: str = "image") -> np.ndarray:
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 3 or x.shape[-1] != 3:
        raise ValueError(f"{name} must be (H, W, 3), got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    if x.size and (x.min() < 0 or x.max() > 1):
        raise ValueError(f"{name} values must lie in [0, 1]")
    return x


def check_mask(mask, shape=None, name: str = "mask") -> np.ndarray:
    m = np.asarray(mask).astype(bool)
    if shape is not None and m.shape != tuple(shape):
        raise ValueError(f"{name} shape {m.shape} does not match {tuple(shape)}")
    return m


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "inputs") -> None:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"{what} differ in shape: {np.shape(a)} vs {np.shape(b)}")

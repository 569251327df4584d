"""Green/white screen keying and trimap construction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin

from .metrics import disk
from .validation import check_image, check_mask

GREEN = (0.0, 1.0, 0.0)
TRIMAP_BACKGROUND, TRIMAP_UNKNOWN, TRIMAP_FOREGROUND = 0, 128, 255


def _normalized(rgb: np.ndarray) -> np.ndarray:
    # divide by the brightest channel so darker shades of the key colour stay close to it
    peak = np.max(rgb, axis=-1, keepdims=True)
    return rgb / np.maximum(peak, 1e-6)


def chroma_distance(image: np.ndarray, ref=GREEN) -> np.ndarray:
    ref = np.asarray(ref, dtype=np.float64)
    return np.linalg.norm(_normalized(image) - _normalized(ref[None, None, :]), axis=-1) / np.sqrt(3.0)


def key_out(image, ref=GREEN, tau_g: float = 0.15, tau_w: float = 0.92) -> np.ndarray:
    """Foreground mask: pixels that are neither near the key colour nor blown-out white."""
    img = check_image(image)
    background = (chroma_distance(img, ref) < tau_g) | (img.min(axis=-1) > tau_w)
    return ~background


@dataclass
class Trimap:
    labels: np.ndarray  # uint8 in {0, 128, 255}

    @property
    def foreground(self) -> np.ndarray:
        return self.labels == TRIMAP_FOREGROUND

    @property
    def background(self) -> np.ndarray:
        return self.labels == TRIMAP_BACKGROUND

    @property
    def unknown(self) -> np.ndarray:
        return self.labels == TRIMAP_UNKNOWN


def make_trimap(mask, erode_r: int = 3, dilate_r: int = 3) -> Trimap:
    if erode_r < 1 or dilate_r < 1:
        raise ValueError("trimap radii must be >= 1")
    m = check_mask(mask)
    fg = ndimage.binary_erosion(m, disk(erode_r), border_value=1) & m
    grown = ndimage.binary_dilation(m, disk(dilate_r)) | m
    labels = np.full(m.shape, TRIMAP_UNKNOWN, np.uint8)
    labels[fg] = TRIMAP_FOREGROUND
    labels[~grown] = TRIMAP_BACKGROUND
    return Trimap(labels)


class KeyingMasker(BaseEstimator, TransformerMixin):
    """Stateless transformer mapping RGB images to foreground masks."""

    def __init__(self, ref=GREEN, tau_g=0.15, tau_w=0.92):
        self.ref = ref
        self.tau_g = tau_g
        self.tau_w = tau_w

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return [key_out(img, self.ref, self.tau_g, self.tau_w) for img in X]


class TrimapGenerator(BaseEstimator, TransformerMixin):
    def __init__(self, erode_r=3, dilate_r=3):
        self.erode_r = erode_r
        self.dilate_r = dilate_r

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return [make_trimap(m, self.erode_r, self.dilate_r) for m in X]

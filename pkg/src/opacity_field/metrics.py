"""Foreground-masked image metrics and the per-view evaluation report."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
REGION_TOL = 1.0 / 255.0


def _mask(mask, shape) -> np.ndarray:
    if mask is None:
        return np.ones(shape, bool)
    m = np.asarray(mask, bool)
    if m.shape != shape:
        raise ValueError(f"mask shape {m.shape} does not match image {shape}")
    return m


def psnr(x, y, mask=None) -> float:
    """``10 log10(1 / MSE)`` over masked pixels (all channels), capped at 99 dB."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    m = _mask(mask, x.shape[:2])
    if not m.any():
        raise ValueError("psnr: empty mask")
    mse = float(np.mean((x[m] - y[m]) ** 2))
    if mse <= 10.0 ** (-PSNR_CAP / 10.0):
        return PSNR_CAP
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _gray(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x.mean(axis=-1) if x.ndim == 3 else x


def ssim_map(x, y) -> np.ndarray:
    """SSIM at every centre whose full window lies inside the image."""
    x, y = _gray(x), _gray(y)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    g1 = gaussian_window()[SSIM_WINDOW // 2]
    g1 = g1 / g1.sum()
    r = SSIM_WINDOW // 2

    def blur(img):
        out = ndimage.correlate1d(img, g1, axis=0, mode="constant")
        out = ndimage.correlate1d(out, g1, axis=1, mode="constant")
        return out[r:-r, r:-r]

    mx, my = blur(x), blur(y)
    sxx = blur(x * x) - mx * mx
    syy = blur(y * y) - my * my
    sxy = blur(x * y) - mx * my
    return ((2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)) / ((mx ** 2 + my ** 2 + SSIM_C1) * (sxx + syy + SSIM_C2))


def ssim(x, y, mask=None) -> float:
    """Mean SSIM over window centres selected by ``mask`` (grayscale or channel-averaged)."""
    smap = ssim_map(x, y)
    r = SSIM_WINDOW // 2
    m = _mask(mask, _gray(x).shape)[r:-r, r:-r]
    if not m.any():
        raise ValueError("ssim: mask selects no window centre")
    return float(smap[m].mean())


def sad(alpha, alpha_gt, mask=None) -> float:
    """Sum of absolute alpha differences over masked pixels, in thousands."""
    a = np.asarray(alpha, dtype=np.float64)
    b = np.asarray(alpha_gt, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    m = _mask(mask, a.shape)
    if not m.any():
        raise ValueError("sad: empty mask")
    return float(np.abs(a - b)[m].sum() / 1000.0)


def disk(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    return (r[:, None] ** 2 + r[None, :] ** 2) <= radius * radius


def region_masks(alpha_gt, radius: int = 5) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Semi-translucent region ``U`` with its dilation ``U+`` and erosion ``U-``."""
    if radius < 1:
        raise ValueError("radius must be >= 1")
    a = np.asarray(alpha_gt, dtype=np.float64)
    U = (a > REGION_TOL) & (a < 1.0 - REGION_TOL)
    if not U.any():
        return U, U.copy(), U.copy()
    se = disk(radius)
    return U, ndimage.binary_dilation(U, se), ndimage.binary_erosion(U, se)


@dataclass
class ViewScores:
    psnr_fg: float
    ssim_fg: float
    sad_alpha: float
    psnr_alpha: float
    psnr_U: float
    psnr_U_plus: float
    psnr_U_minus: float


def _region_psnr(x, y, m) -> float:
    return psnr(x, y, m) if m.any() else float("nan")


def score_view(F, alpha, F_gt, alpha_gt, radius: int = 5) -> ViewScores:
    """Foreground metrics compare premultiplied colour ``alpha * F`` on ``alpha_gt > 0``."""
    fg = np.asarray(alpha, np.float64)[..., None] * np.asarray(F, np.float64)
    fg_gt = np.asarray(alpha_gt, np.float64)[..., None] * np.asarray(F_gt, np.float64)
    m = np.asarray(alpha_gt) > 0
    U, Up, Um = region_masks(alpha_gt, radius)
    return ViewScores(
        psnr_fg=psnr(fg, fg_gt, m),
        ssim_fg=ssim(fg, fg_gt, m),
        sad_alpha=sad(alpha, alpha_gt),
        psnr_alpha=psnr(alpha[..., None], np.asarray(alpha_gt)[..., None]),
        psnr_U=_region_psnr(fg, fg_gt, U),
        psnr_U_plus=_region_psnr(fg, fg_gt, Up),
        psnr_U_minus=_region_psnr(fg, fg_gt, Um),
    )


CSV_COLUMNS = ["view", "psnr_fg", "ssim_fg", "sad_alpha", "psnr_alpha", "lpips", "psnr_U", "psnr_U+", "psnr_U-"]


@dataclass
class EvalReport:
    views: dict = field(default_factory=dict)

    def add(self, name: str, scores: ViewScores) -> None:
        self.views[name] = scores

    def aggregate(self) -> ViewScores:
        if not self.views:
            raise ValueError("empty report")
        keys = ViewScores.__dataclass_fields__.keys()
        vals = {k: float(np.nanmean([getattr(v, k) for v in self.views.values()]))
                if any(np.isfinite(getattr(v, k)) for v in self.views.values()) else float("nan")
                for k in keys}
        return ViewScores(**vals)

    def _row(self, name: str, s: ViewScores) -> list:
        f = lambda v: "nan" if not np.isfinite(v) else f"{v:.6f}"  # noqa: E731
        return [name, f(s.psnr_fg), f(s.ssim_fg), f(s.sad_alpha), f(s.psnr_alpha), "n/a",
                f(s.psnr_U), f(s.psnr_U_plus), f(s.psnr_U_minus)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for name in sorted(self.views):
            w.writerow(self._row(name, self.views[name]))
        w.writerow(self._row("mean", self.aggregate()))
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

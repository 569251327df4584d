"""Patch partition and bounded coarse-to-fine sampling along rays."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .camera import CameraView
from .carving import DepthBounds

DEGENERATE_EPS = 1e-6


class EmptyProxyError(ValueError):
    """No patch of the view intersects the proxy."""


def patch_rng(seed: int, view: int, patch: int, epoch: int) -> np.random.Generator:
    """Counter-based stream so results never depend on processing order."""
    return np.random.default_rng([int(seed), int(view), int(patch), int(epoch)])


def _pixel_rays(view: CameraView, rows: np.ndarray, cols: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # same back-projection as camera.generate_rays, without the bounds check (padding rows)
    u = cols + 0.5
    v = rows + 0.5
    d_cam = np.stack([(u - view.cx) / view.fx, (v - view.cy) / view.fy, np.ones_like(u, dtype=np.float64)], axis=-1)
    pose = view.pose
    d = d_cam @ pose[:3, :3].T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return np.broadcast_to(pose[:3, 3], d.shape).copy(), d


@dataclass
class RayPatch:
    """A K x K block of rays, row-major, with per-ray sampling bounds.

    ``inside`` marks pixels that exist in the image (false on padding);
    ``valid`` marks pixels with their own proxy hit.
    """

    view_id: int
    row: int
    col: int
    K: int
    origins: np.ndarray
    directions: np.ndarray
    near: np.ndarray
    far: np.ndarray
    valid: np.ndarray
    inside: np.ndarray
    t: np.ndarray | None = None
    deltas: np.ndarray | None = None
    coarse_t: np.ndarray | None = None
    coarse_deltas: np.ndarray | None = None

    @property
    def n_rays(self) -> int:
        return self.K * self.K

    @property
    def index(self) -> tuple[int, int]:
        return self.row // self.K, self.col // self.K

    def positions(self) -> np.ndarray:
        """Sample positions, shape ``(K*K, N, 3)``."""
        return self.origins[:, None, :] + self.t[..., None] * self.directions[:, None, :]


def partition_patches(view: CameraView, bounds: DepthBounds, K: int = 32, view_id: int = 0) -> list[RayPatch]:
    """Tile the (zero-padded) image into K x K patches and keep those touching the proxy.

    Rays without their own bounds inherit the patch-wide ``[min near, max far]``.
    """
    H, W = view.height, view.width
    Hp, Wp = -(-H // K) * K, -(-W // K) * K
    valid = np.zeros((Hp, Wp), bool)
    valid[:H, :W] = bounds.valid
    near = np.full((Hp, Wp), np.inf)
    far = np.full((Hp, Wp), np.inf)
    near[:H, :W] = bounds.near
    far[:H, :W] = bounds.far
    inside = np.zeros((Hp, Wp), bool)
    inside[:H, :W] = True
    out = []
    for r in range(0, Hp, K):
        for c in range(0, Wp, K):
            v = valid[r:r + K, c:c + K]
            if not v.any():
                continue
            n = near[r:r + K, c:c + K].copy()
            f = far[r:r + K, c:c + K].copy()
            n[~v] = n[v].min()
            f[~v] = f[v].max()
            rows, cols = np.meshgrid(np.arange(r, r + K), np.arange(c, c + K), indexing="ij")
            o, d = _pixel_rays(view, rows.reshape(-1), cols.reshape(-1))
            out.append(RayPatch(view_id, r, c, K, o, d, n.reshape(-1), f.reshape(-1), v.reshape(-1),
                                inside[r:r + K, c:c + K].reshape(-1)))
    if not out:
        raise EmptyProxyError(f"view {view_id}: no patch intersects the proxy")
    return out


def _deltas(t: np.ndarray, far: np.ndarray) -> np.ndarray:
    # last interval runs to the far bound
    return np.concatenate([np.diff(t, axis=1), far[:, None] - t[:, -1:]], axis=1)


def stratified_t(near: np.ndarray, far: np.ndarray, n: int, rng: np.random.Generator | None) -> np.ndarray:
    """One draw per equal-width bin of ``[near, far]``; bin midpoints when ``rng`` is None."""
    u = rng.random((len(near), n)) if rng is not None else np.full((len(near), n), 0.5)
    edges = np.arange(n) / n
    return near[:, None] + (edges[None, :] + u / n) * (far - near)[:, None]


def sample_coarse(patch: RayPatch, n_coarse: int, rng: np.random.Generator | None = None) -> RayPatch:
    """Stratified samples inside each ray's ``[near, far]``; ``rng=None`` disables jitter."""
    if np.any(patch.far < patch.near):
        raise ValueError("far bound below near bound")
    t = stratified_t(patch.near, patch.far, n_coarse, rng)
    degenerate = patch.far - patch.near <= 0
    d = _deltas(t, patch.far)
    if degenerate.any():
        t[degenerate] = patch.near[degenerate, None]
        d[degenerate] = (patch.far[degenerate, None] - patch.near[degenerate, None] + DEGENERATE_EPS) / n_coarse
    return replace(patch, t=t, deltas=d, coarse_t=t, coarse_deltas=d)


def inverse_cdf(edges: np.ndarray, weights: np.ndarray, n: int, rng: np.random.Generator | None) -> np.ndarray:
    """Draw ``n`` samples per row from the piecewise-constant density over ``edges``.

    ``edges`` is ``(R, B+1)``, ``weights`` is ``(R, B)``. Rows with zero total
    weight fall back to uniform.
    """
    w = np.maximum(np.asarray(weights, dtype=np.float64), 0.0)
    total = w.sum(axis=1, keepdims=True)
    w = np.where(total > 0, w, 1.0)
    pdf = w / w.sum(axis=1, keepdims=True)
    cdf = np.concatenate([np.zeros((len(w), 1)), np.cumsum(pdf, axis=1)], axis=1)
    cdf[:, -1] = 1.0
    R = len(w)
    u = rng.random((R, n)) if rng is not None else np.broadcast_to((np.arange(n) + 0.5) / n, (R, n))
    B = w.shape[1]
    # bin = number of interior cdf knots <= u
    idx = (u[:, :, None] >= cdf[:, None, 1:B]).sum(axis=-1)
    c_lo = np.take_along_axis(cdf, idx, 1)
    c_hi = np.take_along_axis(cdf, idx + 1, 1)
    frac = np.where(c_hi > c_lo, (u - c_lo) / np.maximum(c_hi - c_lo, 1e-300), 0.5)
    e_lo = np.take_along_axis(edges, idx, 1)
    e_hi = np.take_along_axis(edges, idx + 1, 1)
    return e_lo + frac * (e_hi - e_lo)


def _strictly_increasing(t: np.ndarray, near: np.ndarray, far: np.ndarray) -> np.ndarray:
    gap = np.maximum((far - near) * 1e-7, 1e-9)[:, None]
    t = t.copy()
    for i in range(1, t.shape[1]):
        t[:, i] = np.maximum(t[:, i], t[:, i - 1] + gap[:, 0])
    return np.minimum(t, far[:, None])


def sample_fine(patch: RayPatch, weights: np.ndarray, n_fine: int, rng: np.random.Generator | None = None) -> RayPatch:
    """Importance samples from the coarse weights, merged and sorted with the coarse ones."""
    if patch.coarse_t is None:
        raise ValueError("sample_coarse must run before sample_fine")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != patch.coarse_t.shape:
        raise ValueError(f"weights shape {w.shape} does not match coarse samples {patch.coarse_t.shape}")
    if np.any(w < 0):
        raise ValueError("coarse weights must be non-negative")
    n_c = patch.coarse_t.shape[1]
    edges = patch.near[:, None] + (np.arange(n_c + 1) / n_c)[None, :] * (patch.far - patch.near)[:, None]
    t_f = inverse_cdf(edges, w, n_fine, rng)
    t = np.sort(np.concatenate([patch.coarse_t, t_f], axis=1), axis=1)
    t = _strictly_increasing(t, patch.near, patch.far)
    d = _deltas(t, patch.far)
    degenerate = patch.far - patch.near <= 0
    if degenerate.any():
        t[degenerate] = patch.near[degenerate, None]
        d[degenerate] = DEGENERATE_EPS / t.shape[1]
    return replace(patch, t=t, deltas=d)


@dataclass
class SampleBatch:
    """Flattened samples of several patches; ``index[k] = (patch, pixel, sample)`` for row k."""

    positions: np.ndarray
    directions: np.ndarray
    deltas: np.ndarray
    index: np.ndarray
    shape: tuple  # (P, K*K, N)

    @classmethod
    def from_patches(cls, patches: list[RayPatch]) -> "SampleBatch":
        P = len(patches)
        R, N = patches[0].t.shape
        pos = np.stack([p.positions() for p in patches]).reshape(-1, 3)
        dirs = np.stack([np.broadcast_to(p.directions[:, None, :], (R, N, 3)) for p in patches]).reshape(-1, 3)
        dl = np.stack([p.deltas for p in patches]).reshape(-1)
        pi, ri, si = np.meshgrid(np.arange(P), np.arange(R), np.arange(N), indexing="ij")
        index = np.stack([pi.reshape(-1), ri.reshape(-1), si.reshape(-1)], axis=1)
        return cls(pos, dirs, dl, index, (P, R, N))

    def __len__(self):
        return len(self.positions)


def full_frame_extent(view: CameraView, scene_bounds) -> tuple[float, float]:
    """Global ``[near, far]`` for a camera: distance to the scene centre +- bounding-sphere radius."""
    lo, hi = np.asarray(scene_bounds[0], float), np.asarray(scene_bounds[1], float)
    center = 0.5 * (lo + hi)
    radius = 0.5 * np.linalg.norm(hi - lo)
    dist = np.linalg.norm(view.center - center)
    return max(dist - radius, 0.0), dist + radius


def sampling_economy(patches: list[RayPatch], view: CameraView, scene_bounds) -> dict:
    """Samples issued by bounded patch sampling relative to full-frame, full-range sampling.

    Both samplers are compared at equal sample spacing along the ray, so the
    ratio is the sampled path length of kept rays over that of every pixel
    ray across the global range.
    """
    near, far = full_frame_extent(view, scene_bounds)
    n_pixels = view.width * view.height
    full = n_pixels * (far - near)
    kept = sum(float(np.sum(p.far - p.near)) for p in patches)
    kept_rays = sum(p.n_rays for p in patches)
    valid = np.concatenate([p.valid for p in patches])
    ext = np.concatenate([p.far - p.near for p in patches])
    return {
        "economy": kept / full,
        "kept_fraction": kept_rays / n_pixels,
        "depth_ratio": float(ext[valid].mean() / (far - near)),
        "full_range": far - near,
    }

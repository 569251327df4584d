"""Silhouette carving and near/far depth bounds from the carved proxy."""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .camera import SCENE_BOUNDS, CameraView, generate_rays, intersect_aabb, project
from .validation import check_alpha

VOXG_MAGIC = b"VOXG"


class CarvingWarning(UserWarning):
    pass


def binarize_dilate(alpha: np.ndarray, threshold: float = 0.05, dilate_radius: int = 2) -> np.ndarray:
    """Silhouette: pixels within Chebyshev distance ``dilate_radius`` of ``alpha >= threshold``."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    if dilate_radius < 0:
        raise ValueError("dilate_radius must be >= 0")
    mask = np.asarray(alpha) >= threshold
    if dilate_radius == 0 or not mask.any():
        return mask
    return ndimage.binary_dilation(mask, structure=np.ones((2 * dilate_radius + 1,) * 2, bool))


@dataclass
class VoxelGrid:
    resolution: tuple
    bounds: tuple
    occupancy: np.ndarray

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.bounds[0], dtype=np.float64)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.bounds[1], dtype=np.float64)

    @property
    def voxel_size(self) -> np.ndarray:
        return (self.hi - self.lo) / np.asarray(self.resolution)

    @property
    def voxel_diagonal(self) -> float:
        return float(np.linalg.norm(self.voxel_size))

    def centers(self) -> np.ndarray:
        axes = [self.lo[k] + (np.arange(self.resolution[k]) + 0.5) * self.voxel_size[k] for k in range(3)]
        g = np.meshgrid(*axes, indexing="ij")
        return np.stack(g, axis=-1)

    @property
    def n_occupied(self) -> int:
        return int(self.occupancy.sum())

    def save(self, path) -> None:
        nx, ny, nz = self.resolution
        head = VOXG_MAGIC + struct.pack("<3I6d", nx, ny, nz, *self.lo, *self.hi)
        Path(path).write_bytes(head + np.packbits(self.occupancy.reshape(-1)).tobytes())

    @classmethod
    def load(cls, path) -> "VoxelGrid":
        buf = Path(path).read_bytes()
        if buf[:4] != VOXG_MAGIC:
            raise ValueError(f"{path}: not a voxel grid file")
        vals = struct.unpack_from("<3I6d", buf, 4)
        res = tuple(int(v) for v in vals[:3])
        n = int(np.prod(res))
        bits = np.unpackbits(np.frombuffer(buf, np.uint8, offset=4 + struct.calcsize("<3I6d")))[:n]
        return cls(res, (tuple(vals[3:6]), tuple(vals[6:9])), bits.astype(bool).reshape(res))


def carve(silhouettes: Sequence[np.ndarray], views: Sequence[CameraView], resolution=128,
          bounds=SCENE_BOUNDS) -> VoxelGrid:
    """Keep a voxel iff its centre lands inside the silhouette of every view seeing it from the front."""
    if len(silhouettes) != len(views):
        raise ValueError("one silhouette per view required")
    if len(views) < 2:
        raise ValueError("carving needs at least two views")
    res = (resolution,) * 3 if np.isscalar(resolution) else tuple(int(r) for r in resolution)
    grid = VoxelGrid(res, (tuple(map(float, bounds[0])), tuple(map(float, bounds[1]))), np.ones(res, bool))
    pts = grid.centers().reshape(-1, 3)
    occ = np.ones(len(pts), bool)
    for sil, view in zip(silhouettes, views):
        sil = np.asarray(sil, bool)
        if sil.shape != (view.height, view.width):
            raise ValueError(f"silhouette shape {sil.shape} does not match view {(view.height, view.width)}")
        live = np.nonzero(occ)[0]
        uv, z = project(view, pts[live])
        front = z > 0
        col = np.floor(np.nan_to_num(uv[:, 0], nan=-1.0)).astype(np.int64)
        row = np.floor(np.nan_to_num(uv[:, 1], nan=-1.0)).astype(np.int64)
        inside = front & (col >= 0) & (col < view.width) & (row >= 0) & (row < view.height)
        keep = np.zeros(len(live), bool)
        keep[inside] = sil[row[inside], col[inside]]
        # behind-camera voxels are unconstrained by this view
        keep |= ~front
        occ[live[~keep]] = False
    grid.occupancy = occ.reshape(res)
    if not grid.occupancy.any():
        warnings.warn("carving removed every voxel; silhouettes are inconsistent", CarvingWarning, stacklevel=2)
    return grid


@dataclass
class DepthBounds:
    near: np.ndarray
    far: np.ndarray
    valid: np.ndarray

    def save_pfm(self, near_path, far_path) -> None:
        write_pfm(near_path, self.near)
        write_pfm(far_path, self.far)

    @classmethod
    def load_pfm(cls, near_path, far_path) -> "DepthBounds":
        near = read_pfm(near_path)
        far = read_pfm(far_path)
        valid = np.isfinite(near) & np.isfinite(far)
        return cls(near.astype(np.float64), far.astype(np.float64), valid)


def _dda(grid: VoxelGrid, origins: np.ndarray, directions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First/last occupied-voxel ray parameters, vectorised Amanatides-Woo traversal."""
    n = len(origins)
    first = np.full(n, np.inf)
    last = np.full(n, -np.inf)
    t0, t1, hit = intersect_aabb(origins, directions, grid.lo, grid.hi)
    idx = np.nonzero(hit)[0]
    if len(idx) == 0:
        return first, last
    o, d = origins[idx], directions[idx]
    ta, tb = t0[idx], t1[idx]
    res = np.asarray(grid.resolution)
    vs = grid.voxel_size
    p = o + ta[:, None] * d
    cell = np.floor((p - grid.lo) / vs).astype(np.int64)
    # entry point may sit exactly on the far face of the box
    cell = np.clip(cell, 0, res - 1)
    step = np.where(d > 0, 1, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        next_face = grid.lo + (cell + (step > 0)) * vs
        tmax = np.where(d != 0, (next_face - o) * inv, np.inf)
        tdelta = np.where(d != 0, vs * np.abs(inv), np.inf)
    t_in = ta.copy()
    alive = np.ones(len(idx), bool)
    occ = grid.occupancy
    f_loc = np.full(len(idx), np.inf)
    l_loc = np.full(len(idx), -np.inf)
    for _ in range(int(res.sum()) + 3):
        a = np.nonzero(alive)[0]
        if len(a) == 0:
            break
        c = cell[a]
        t_out = np.minimum(tmax[a].min(axis=1), tb[a])
        o_hit = occ[c[:, 0], c[:, 1], c[:, 2]]
        h = a[o_hit]
        f_loc[h] = np.minimum(f_loc[h], t_in[h])
        l_loc[h] = t_out[o_hit]
        axis = np.argmin(tmax[a], axis=1)
        t_in[a] = t_out
        cell[a, axis] += step[a, axis]
        tmax[a, axis] += tdelta[a, axis]
        out = (cell[a, axis] < 0) | (cell[a, axis] >= res[axis]) | (t_out >= tb[a])
        alive[a[out]] = False
    first[idx] = f_loc
    last[idx] = l_loc
    return first, last


def rasterize_depth_bounds(grid: VoxelGrid, view: CameraView, margin: float = 0.0) -> DepthBounds:
    """Per-pixel first/last hit distances of the pixel ray against occupied voxels.

    ``margin`` widens each valid interval on both ends (near is kept >= 0).
    Pixels whose ray hits nothing get ``+inf`` for both bounds.
    """
    if not grid.occupancy.any():
        raise ValueError("cannot rasterize an empty voxel grid")
    rays = generate_rays(view)
    first, last = _dda(grid, rays.origins, rays.directions)
    valid = np.isfinite(first)
    near = np.where(valid, np.maximum(first - margin, 0.0), np.inf)
    far = np.where(valid, last + margin, np.inf)
    shape = (view.height, view.width)
    return DepthBounds(near.reshape(shape), far.reshape(shape), valid.reshape(shape))


def full_range_bounds(view: CameraView, bounds=SCENE_BOUNDS) -> DepthBounds:
    """Bounds covering the whole scene box, used when proxy-guided sampling is off."""
    rays = generate_rays(view)
    t0, t1, hit = intersect_aabb(rays.origins, rays.directions, *bounds)
    shape = (view.height, view.width)
    near = np.where(hit, t0, np.inf).reshape(shape)
    far = np.where(hit, t1, np.inf).reshape(shape)
    return DepthBounds(near, far, hit.reshape(shape))


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------

def write_pfm(path, image: np.ndarray) -> None:
    img = np.asarray(image, dtype="<f4")
    h, w = img.shape
    head = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    Path(path).write_bytes(head + np.flipud(img).tobytes())


def read_pfm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    parts = buf.split(b"\n", 3)
    if parts[0] != b"Pf":
        raise ValueError(f"{path}: only grayscale PFM supported")
    w, h = map(int, parts[1].split())
    scale = float(parts[2])
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(parts[3], dtype=dtype, count=w * h).reshape(h, w)
    return np.flipud(data).astype(np.float32)


class ShapeFromSilhouette(BaseEstimator):
    """Estimator wrapper: ``fit`` carves the proxy, ``transform`` rasterizes depth bounds.

    Parameters
    ----------
    resolution : int
        Voxels per axis.
    threshold : float
        Alpha binarization level.
    dilate_radius : int
        Chebyshev dilation of each binarized matte, in pixels.
    margin_voxels : float
        Depth margin added to both ends, in voxel diagonals.
    """

    def __init__(self, resolution=128, threshold=0.05, dilate_radius=2, margin_voxels=1.0,
                 bounds=SCENE_BOUNDS):
        self.resolution = resolution
        self.threshold = threshold
        self.dilate_radius = dilate_radius
        self.margin_voxels = margin_voxels
        self.bounds = bounds

    def fit(self, alphas, views):
        alphas = [check_alpha(a) for a in alphas]
        sils = [binarize_dilate(a, self.threshold, self.dilate_radius) for a in alphas]
        self.grid_ = carve(sils, views, self.resolution, self.bounds)
        self.margin_ = self.margin_voxels * self.grid_.voxel_diagonal
        return self

    def transform(self, views) -> list[DepthBounds]:
        check_is_fitted(self, "grid_")
        return [rasterize_depth_bounds(self.grid_, v, self.margin_) for v in views]

    def fit_transform(self, alphas, views):
        return self.fit(alphas, views).transform(views)

"""Pinhole cameras, ray generation and turntable extrinsic propagation.

Conventions: camera frame is x right, y down, z forward. ``extrinsics`` maps
world to camera. Integer pixel ``(row, col)`` is sampled at its centre
``(col + 0.5, row + 0.5)`` in image coordinates ``(u, v)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


# cube holding every desk-scale scene; also the carving volume
SCENE_BOUNDS = ((-1.25, -1.25, -1.25), (1.25, 1.25, 1.25))


class BehindCamera(Exception):
    """Marker raised by :func:`project` for points with non-positive depth."""


def _check_rigid(T: np.ndarray, tol: float = 1e-9) -> None:
    R = T[:3, :3]
    if not np.allclose(R.T @ R, np.eye(3), atol=tol) or abs(np.linalg.det(R) - 1.0) > tol:
        raise ValueError("extrinsics rotation block is not a proper rotation")
    if not np.allclose(T[3], [0, 0, 0, 1]):
        raise ValueError("extrinsics bottom row must be [0, 0, 0, 1]")


def rigid_inverse(T: np.ndarray) -> np.ndarray:
    R, t = T[:3, :3], T[:3, 3]
    out = np.eye(4)
    out[:3, :3] = R.T
    out[:3, 3] = -R.T @ t
    return out


@dataclass(frozen=True)
class CameraView:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsics: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        T = np.array(self.extrinsics, dtype=np.float64).reshape(4, 4)
        T.setflags(write=False)
        object.__setattr__(self, "extrinsics", T)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")
        _check_rigid(T, tol=1e-6)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    @property
    def rotation(self) -> np.ndarray:
        return self.extrinsics[:3, :3]

    @property
    def pose(self) -> np.ndarray:
        """Camera-to-world transform."""
        return rigid_inverse(self.extrinsics)

    @property
    def center(self) -> np.ndarray:
        return self.pose[:3, 3]

    def with_extrinsics(self, T: np.ndarray) -> "CameraView":
        return CameraView(self.fx, self.fy, self.cx, self.cy, self.width, self.height, T)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height,
                "T": [float(v) for v in self.extrinsics.reshape(-1)]}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraView":
        T = d.get("T", d.get("T0"))
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]), np.asarray(T, dtype=np.float64).reshape(4, 4))


@dataclass(frozen=True)
class Rays:
    """Vectorised ray bundle; ``pixels`` holds ``(row, col)`` pairs."""

    origins: np.ndarray
    directions: np.ndarray
    pixels: np.ndarray

    def __len__(self):
        return len(self.origins)


def generate_rays(view: CameraView, rows=None, cols=None) -> Rays:
    """One unit-direction ray per pixel centre of the block ``rows x cols``.

    ``rows`` and ``cols`` default to the full image; they may be ranges or
    integer arrays. Output is row-major over the block.
    """
    rows = np.arange(view.height) if rows is None else np.asarray(rows)
    cols = np.arange(view.width) if cols is None else np.asarray(cols)
    if rows.size and (rows.min() < 0 or rows.max() >= view.height):
        raise IndexError("row block outside image")
    if cols.size and (cols.min() < 0 or cols.max() >= view.width):
        raise IndexError("column block outside image")
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    u = cc.reshape(-1) + 0.5
    v = rr.reshape(-1) + 0.5
    d_cam = np.stack([(u - view.cx) / view.fx, (v - view.cy) / view.fy, np.ones_like(u)], axis=-1)
    pose = view.pose
    d = d_cam @ pose[:3, :3].T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(pose[:3, 3], d.shape).copy()
    return Rays(o, d, np.stack([rr.reshape(-1), cc.reshape(-1)], axis=-1))


def project(view: CameraView, points) -> tuple[np.ndarray, np.ndarray]:
    """Project world points; returns ``(pixel_uv, depth)``.

    A single point behind the camera raises :class:`BehindCamera`; for batches
    the offending entries get ``nan`` pixels and their (non-positive) depth.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    cam = pts @ view.rotation.T + view.extrinsics[:3, 3]
    z = cam[:, 2]
    front = z > 0
    if single and not front[0]:
        raise BehindCamera(f"point at camera depth {z[0]:.6g}")
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = np.stack([view.fx * cam[:, 0] / z + view.cx, view.fy * cam[:, 1] / z + view.cy], axis=-1)
    uv[~front] = np.nan
    if single:
        return uv[0], z[0]
    return uv, z


def rotation_about_axis(axis, angle: float, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """4x4 rigid rotation by ``angle`` (radians) about a line through ``center``."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    Kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    R = np.eye(3) + np.sin(angle) * Kx + (1 - np.cos(angle)) * (Kx @ Kx)
    c = np.asarray(center, dtype=np.float64)
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = c - R @ c
    return T


@dataclass(frozen=True)
class TurntableRig:
    base_views: tuple
    steps_per_lap: int = 80
    axis: tuple = (0.0, -1.0, 0.0)
    center: tuple = (0.0, 0.0, 0.0)

    def step_transform(self, j: int) -> np.ndarray:
        """Rigid motion of the cameras relative to the object after ``j`` steps."""
        if j == 0:
            return np.eye(4)
        return rotation_about_axis(self.axis, 2 * np.pi * j / self.steps_per_lap, self.center)

    @property
    def step_angle_deg(self) -> float:
        return 360.0 / self.steps_per_lap

    def to_json(self) -> dict:
        return {
            "steps_per_lap": self.steps_per_lap,
            "axis": list(map(float, self.axis)),
            "center": list(map(float, self.center)),
            "cameras": [
                {"fx": v.fx, "fy": v.fy, "cx": v.cx, "cy": v.cy, "width": v.width, "height": v.height,
                 "T0": [float(x) for x in v.extrinsics.reshape(-1)]}
                for v in self.base_views
            ],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def from_json(cls, d: dict) -> "TurntableRig":
        try:
            cams = tuple(CameraView.from_dict(c) for c in d["cameras"])
            return cls(cams, int(d["steps_per_lap"]), tuple(d["axis"]), tuple(d["center"]))
        except KeyError as exc:
            raise ValueError(f"rig JSON missing key {exc.args[0]!r}") from None

    @classmethod
    def load(cls, path) -> "TurntableRig":
        return cls.from_json(json.loads(Path(path).read_text()))


def propagate_extrinsics(rig: TurntableRig, camera: int, step: int) -> CameraView:
    """Camera ``camera`` at turntable step ``step``.

    The step transform is applied to the camera pose (camera-to-world) as one
    left matrix product, ``pose_j = A_j @ pose_0``; the returned view carries
    the matching world-to-camera extrinsics.
    """
    if not 0 <= step < rig.steps_per_lap:
        raise ValueError(f"step {step} outside [0, {rig.steps_per_lap})")
    base = rig.base_views[camera]
    if step == 0:
        return base
    pose = rig.step_transform(step) @ base.pose
    return base.with_extrinsics(rigid_inverse(pose))


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, -1.0, 0.0)) -> np.ndarray:
    """World-to-camera extrinsics for a camera at ``eye`` looking at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    # image y points down, so "up" in the world maps to -y
    x = np.cross(-np.asarray(up, dtype=np.float64), z)
    if np.linalg.norm(x) < 1e-12:
        x = np.cross([1.0, 0, 0], z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = -R @ eye
    return T


def default_rig(resolution: int = 64, distance: float = 3.0, elevations_deg=(20.0, -10.0),
                focal_scale: float = 1.25, steps_per_lap: int = 80) -> TurntableRig:
    """Desk-scale rig: cameras on a ring around the vertical axis at the origin."""
    views = []
    f = focal_scale * resolution
    for i, el in enumerate(elevations_deg):
        e = np.deg2rad(el)
        az = np.deg2rad(37.0 * i)
        eye = distance * np.array([np.cos(e) * np.sin(az), -np.sin(e), -np.cos(e) * np.cos(az)])
        views.append(CameraView(f, f, resolution / 2, resolution / 2, resolution, resolution, look_at(eye)))
    return TurntableRig(tuple(views), steps_per_lap, (0.0, -1.0, 0.0), (0.0, 0.0, 0.0))


def intersect_aabb(origins: np.ndarray, directions: np.ndarray, lo, hi) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Slab test; returns ``(t_enter, t_exit, hit)`` with ``t_enter >= 0``."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / directions
        ta = (lo - origins) * inv
        tb = (hi - origins) * inv
    tmin = np.where(np.isnan(ta), -np.inf, np.minimum(ta, tb))
    tmax = np.where(np.isnan(tb), np.inf, np.maximum(ta, tb))
    t0 = np.maximum(tmin.max(axis=-1), 0.0)
    t1 = tmax.min(axis=-1)
    return t0, t1, t1 > t0

"""Closed-form fuzzy scenes and the brute-force quadrature renderer.

The quadrature renderer is the reference every learned component is measured
against, so it deliberately shares no code with the sampling/integration path
used in training.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from PIL import Image

from .camera import SCENE_BOUNDS, CameraView, TurntableRig, generate_rays, intersect_aabb, propagate_extrinsics

UNPREMULTIPLY_EPS = 1e-6


class ValueNoise:
    """Trilinear value noise in ``[-1, 1]`` on a fixed-seed lattice over ``[-1, 1]^3``."""

    def __init__(self, frequency: int = 4, seed: int = 0):
        self.frequency = int(frequency)
        rng = np.random.default_rng(seed)
        n = self.frequency + 2
        self.lattice = rng.uniform(-1.0, 1.0, size=(n, n, n))

    def __call__(self, u: np.ndarray) -> np.ndarray:
        g = (np.clip(u, -1.0, 1.0) + 1.0) * 0.5 * self.frequency
        i = np.minimum(np.floor(g).astype(int), self.frequency - 1)
        f = g - i
        f = f * f * (3 - 2 * f)
        L = self.lattice
        out = np.zeros(u.shape[:-1])
        for dx in (0, 1):
            wx = f[..., 0] if dx else 1 - f[..., 0]
            for dy in (0, 1):
                wy = f[..., 1] if dy else 1 - f[..., 1]
                for dz in (0, 1):
                    wz = f[..., 2] if dz else 1 - f[..., 2]
                    out += wx * wy * wz * L[i[..., 0] + dx, i[..., 1] + dy, i[..., 2] + dz]
        return out


class Component:
    """One additive density term with its own colour."""

    def density(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def color(self, x: np.ndarray, d: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass
class UniformBox(Component):
    lo: tuple
    hi: tuple
    sigma: float
    rgb: tuple = (0.8, 0.4, 0.2)

    def density(self, x):
        inside = np.all((x >= np.asarray(self.lo)) & (x <= np.asarray(self.hi)), axis=-1)
        return np.where(inside, self.sigma, 0.0)

    def color(self, x, d):
        return np.broadcast_to(np.asarray(self.rgb, dtype=np.float64), x.shape)


@dataclass
class GaussianBlob(Component):
    center: tuple
    scale: float
    amplitude: float
    rgb: tuple = (0.3, 0.5, 0.8)

    def density(self, x):
        r2 = np.sum((x - np.asarray(self.center)) ** 2, axis=-1)
        return self.amplitude * np.exp(-0.5 * r2 / self.scale**2)

    def color(self, x, d):
        return np.broadcast_to(np.asarray(self.rgb, dtype=np.float64), x.shape)


@dataclass
class FuzzyShell(Component):
    """Gaussian radial shell modulated by direction-dependent value noise.

    Density is ``s * g(r) * (1 + noise_amp * noise(dir))`` where ``g`` is the
    Gaussian ``exp(-(r - R)^2 / 2w^2)`` shifted down so it reaches zero
    continuously at ``cutoff`` widths from the shell.
    """

    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.45
    width: float = 0.05
    amplitude: float = 40.0
    noise_amp: float = 0.5
    noise_frequency: int = 4
    seed: int = 0
    cutoff: float = 3.0
    base_rgb: tuple = (0.85, 0.55, 0.3)
    tint_rgb: tuple = (0.25, 0.2, 0.1)
    view_lobe: float = 0.1
    noise: ValueNoise = field(init=False, repr=False)
    tint_noise: ValueNoise = field(init=False, repr=False)

    def __post_init__(self):
        self.noise = ValueNoise(self.noise_frequency, self.seed)
        self.tint_noise = ValueNoise(3, self.seed + 1)

    @property
    def outer_radius(self) -> float:
        return self.radius + self.cutoff * self.width

    def _dir(self, x):
        v = x - np.asarray(self.center)
        r = np.linalg.norm(v, axis=-1)
        u = v / np.maximum(r, 1e-12)[..., None]
        return r, u

    def density(self, x):
        r, u = self._dir(x)
        dr = r - self.radius
        floor = np.exp(-0.5 * self.cutoff**2)
        prof = (np.exp(-0.5 * (dr / self.width) ** 2) - floor) / (1.0 - floor)
        prof = np.maximum(prof, 0.0)
        mod = 1.0 + self.noise_amp * self.noise(u) if self.noise_amp else 1.0
        return self.amplitude * prof * mod

    def color(self, x, d):
        _, u = self._dir(x)
        base = np.asarray(self.base_rgb) + np.asarray(self.tint_rgb) * self.tint_noise(u)[..., None]
        lobe = self.view_lobe * np.clip(-np.sum(d * u, axis=-1), 0.0, 1.0) ** 4
        return np.clip(base + lobe[..., None], 0.0, 1.0)


@dataclass
class CallableComponent(Component):
    density_fn: Callable
    color_fn: Callable | None = None

    def density(self, x):
        return self.density_fn(x)

    def color(self, x, d):
        if self.color_fn is None:
            return np.full(x.shape, 0.5)
        return self.color_fn(x, d)


@dataclass
class AnalyticScene:
    components: list
    bounds: tuple = SCENE_BOUNDS
    name: str = "custom"

    def density(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        total = np.zeros(x.shape[:-1])
        for c in self.components:
            total = total + c.density(x)
        lo, hi = np.asarray(self.bounds[0]), np.asarray(self.bounds[1])
        inside = np.all((x >= lo) & (x <= hi), axis=-1)
        return np.where(inside, np.maximum(total, 0.0), 0.0)

    def density_and_color(self, x: np.ndarray, d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=np.float64)
        dens = [c.density(x) for c in self.components]
        total = np.sum(dens, axis=0)
        rgb = np.zeros(x.shape)
        for s, c in zip(dens, self.components):
            rgb += s[..., None] * c.color(x, d)
        rgb = rgb / np.maximum(total, 1e-12)[..., None]
        lo, hi = np.asarray(self.bounds[0]), np.asarray(self.bounds[1])
        inside = np.all((x >= lo) & (x <= hi), axis=-1)
        return np.where(inside, np.maximum(total, 0.0), 0.0), np.clip(rgb, 0.0, 1.0)

    def scaled(self, k: float) -> "AnalyticScene":
        """Same scene with density multiplied by ``k``."""
        base = self

        def dens(x):
            return k * base.density(x)

        def col(x, d):
            return base.density_and_color(x, d)[1]

        return AnalyticScene([CallableComponent(dens, col)], self.bounds, f"{self.name}*{k}")


def fuzzy_sphere(seed: int = 0, radius: float = 0.45, width: float = 0.05, amplitude: float = 40.0,
                 noise_amp: float = 0.5, bounds=SCENE_BOUNDS) -> AnalyticScene:
    shell = FuzzyShell(radius=radius, width=width, amplitude=amplitude, noise_amp=noise_amp, seed=seed)
    return AnalyticScene([shell], bounds, "fuzzy-sphere")


def homogeneous_slab(sigma: float, bounds=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0)), rgb=(0.8, 0.4, 0.2)) -> AnalyticScene:
    return AnalyticScene([UniformBox(bounds[0], bounds[1], sigma, rgb)], bounds, "slab")


def ball(radius: float = 0.5, sigma: float = 50.0) -> AnalyticScene:
    def dens(x):
        return np.where(np.linalg.norm(x, axis=-1) <= radius, sigma, 0.0)

    return AnalyticScene([CallableComponent(dens)], name="ball")


SCENES = {"fuzzy-sphere": fuzzy_sphere, "ball": ball}


@dataclass
class GroundTruthView:
    view: CameraView
    foreground: np.ndarray  # (H, W, 3) un-premultiplied
    alpha: np.ndarray  # (H, W)
    camera: int = 0
    step: int = 0

    def composite(self, background=(1.0, 1.0, 1.0)) -> np.ndarray:
        a = self.alpha[..., None]
        return a * self.foreground + (1 - a) * np.asarray(background)

    @property
    def premultiplied(self) -> np.ndarray:
        return self.alpha[..., None] * self.foreground


def render_rays(scene: AnalyticScene, origins: np.ndarray, directions: np.ndarray, samples_per_ray: int,
                chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint quadrature over each ray's box segment; returns ``(alpha, premultiplied_rgb)``."""
    n = len(origins)
    alpha = np.zeros(n)
    premult = np.zeros((n, 3))
    t0, t1, hit = intersect_aabb(origins, directions, *scene.bounds)
    idx = np.nonzero(hit)[0]
    u = (np.arange(samples_per_ray) + 0.5) / samples_per_ray
    for s in range(0, len(idx), chunk):
        sel = idx[s:s + chunk]
        length = (t1[sel] - t0[sel])[:, None]
        t = t0[sel][:, None] + u[None, :] * length
        delta = np.broadcast_to(length / samples_per_ray, t.shape)
        x = origins[sel, None, :] + t[..., None] * directions[sel, None, :]
        d = np.broadcast_to(directions[sel, None, :], x.shape)
        sigma, rgb = scene.density_and_color(x, d)
        tau = sigma * delta
        trans = np.exp(-(np.cumsum(tau, axis=1) - tau))
        w = trans * -np.expm1(-tau)
        alpha[sel] = -np.expm1(-tau.sum(axis=1))
        premult[sel] = np.einsum("rn,rnc->rc", w, rgb)
    return alpha, premult


def oracle_render(scene: AnalyticScene, view: CameraView, samples_per_ray: int = 1024) -> GroundTruthView:
    if samples_per_ray < 256:
        raise ValueError("oracle quadrature needs at least 256 samples per ray")
    rays = generate_rays(view)
    alpha, premult = render_rays(scene, rays.origins, rays.directions, samples_per_ray)
    fg = premult / np.maximum(alpha, UNPREMULTIPLY_EPS)[:, None]
    fg = np.where(alpha[:, None] > 0, np.clip(fg, 0.0, 1.0), 0.0)
    h, w = view.height, view.width
    return GroundTruthView(view, fg.reshape(h, w, 3), alpha.reshape(h, w))


def view_schedule(rig: TurntableRig, n_views: int, step_offset: int = 0) -> list[tuple[int, int]]:
    """Spread ``n_views`` (camera, step) pairs evenly around the lap."""
    n_cams = len(rig.base_views)
    per_cam = -(-n_views // n_cams)
    stride = rig.steps_per_lap / per_cam
    pairs = []
    for k in range(per_cam):
        for i in range(n_cams):
            j = (int(round(k * stride)) + step_offset) % rig.steps_per_lap
            pairs.append((i, j))
    return pairs[:n_views]


def generate_dataset(scene: AnalyticScene, rig: TurntableRig, steps: Sequence[tuple[int, int]],
                     samples_per_ray: int = 1024, threads: int = 1) -> list[GroundTruthView]:
    """One ground-truth view per ``(camera, step)`` pair, in the given order."""
    views = [propagate_extrinsics(rig, i, j) for i, j in steps]

    def one(k):
        gt = oracle_render(scene, views[k], samples_per_ray)
        gt.camera, gt.step = steps[k]
        return gt

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(one, range(len(views))))
    return [one(k) for k in range(len(views))]


# ---------------------------------------------------------------------------
# on-disk dataset
# ---------------------------------------------------------------------------

def _to_u8(x):
    return np.round(np.clip(x, 0, 1) * 255).astype(np.uint8)


def write_rgb_alpha(path_rgb, path_alpha, rgb: np.ndarray, alpha: np.ndarray, alpha_bits: int = 8) -> None:
    Image.fromarray(_to_u8(rgb), "RGB").save(path_rgb)
    if alpha_bits == 16:
        Image.fromarray(np.round(np.clip(alpha, 0, 1) * 65535).astype(np.uint16)).save(path_alpha)
    else:
        Image.fromarray(_to_u8(alpha), "L").save(path_alpha)


def read_rgb_alpha(path_rgb, path_alpha) -> tuple[np.ndarray, np.ndarray]:
    rgb = np.asarray(Image.open(path_rgb).convert("RGB"), dtype=np.float64) / 255.0
    im = Image.open(path_alpha)
    a = np.asarray(im)
    scale = 65535.0 if a.dtype == np.uint16 or im.mode.startswith("I") else 255.0
    return rgb, a.astype(np.float64) / scale


def save_dataset(out_dir, views: Sequence[GroundTruthView], rig: TurntableRig | None = None,
                 alpha_bits: int = 8, extra: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, gt in enumerate(views):
        rgb_name, a_name = f"view_{k:03d}_rgb.png", f"view_{k:03d}_alpha.png"
        write_rgb_alpha(out / rgb_name, out / a_name, gt.foreground, gt.alpha, alpha_bits)
        entries.append({"id": k, "camera": gt.camera, "step": gt.step, "rgb": rgb_name, "alpha": a_name,
                        "view": gt.view.to_dict()})
    manifest = {"format": "opacity-field-dataset/1", "alpha_bits": alpha_bits, "views": entries}
    if rig is not None:
        manifest["rig"] = rig.to_json()
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def load_dataset(data_dir) -> list[GroundTruthView]:
    root = Path(data_dir)
    path = root / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"no manifest.json in {root}")
    manifest = json.loads(path.read_text())
    out = []
    for e in manifest["views"]:
        rgb, alpha = read_rgb_alpha(root / e["rgb"], root / e["alpha"])
        out.append(GroundTruthView(CameraView.from_dict(e["view"]), rgb, alpha, e.get("camera", 0), e.get("step", 0)))
    return out

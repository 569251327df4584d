"""Sampler -> fields -> integration -> renderer, for patches and whole frames."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np

from .autodiff import Module, Tensor, clip, concat, no_grad, reshape, transpose
from .camera import SCENE_BOUNDS, CameraView
from .carving import DepthBounds
from .field import ColorHead, FieldConfig, RadianceField
from .integration import FeaturePatch, build_feature_patch, compute_alphas
from .renderer import DOWNSAMPLE_FACTOR, WHITE, ConvRenderer, RendererConfig, RenderOutput, composite
from .sampling import RayPatch, SampleBatch, partition_patches, sample_coarse, sample_fine


@dataclass(frozen=True)
class ModelConfig:
    K: int = 32
    n_coarse: int = 32
    n_fine: int = 32
    field: FieldConfig = dc_field(default_factory=FieldConfig)
    renderer: RendererConfig = dc_field(default_factory=RendererConfig)
    use_renderer: bool = True
    bounds: tuple = SCENE_BOUNDS
    seed: int = 0

    def __post_init__(self):
        if self.K <= 0 or self.n_coarse <= 0 or self.n_fine < 0:
            raise ValueError("K and n_coarse must be positive, n_fine non-negative")
        if self.use_renderer and self.K % DOWNSAMPLE_FACTOR:
            raise ValueError(f"patch size K must be a multiple of {DOWNSAMPLE_FACTOR} for the conv renderer")

    @property
    def n_samples(self) -> int:
        """Samples per ray seen by the fine field (coarse and fine merged)."""
        return self.n_coarse + self.n_fine


class _Pair(Module):
    def __init__(self, coarse: Module, fine: Module):
        self.coarse = coarse
        self.fine = fine


@dataclass
class VolumeOutput:
    patches: list  # fine-sampled RayPatch list
    fine: FeaturePatch
    coarse: FeaturePatch
    premult_fine: Tensor  # (P, 3, K, K), linear colour head on the fine maps
    premult_coarse: Tensor


class OpacityFieldModel(Module):
    """Parameters are named ``field.{coarse,fine}.*``, ``head.*`` and ``renderer.{radiance,opacity}.*``."""

    def __init__(self, config: ModelConfig = ModelConfig()):
        self.config = config
        s = config.seed
        self.field = _Pair(RadianceField(config.field, seed=s), RadianceField(config.field, seed=s + 1))
        C = config.field.feature_dim
        self.head = _Pair(ColorHead(C, seed=s + 2), ColorHead(C, seed=s + 3))
        if config.use_renderer:
            self.renderer = ConvRenderer(C, config.n_samples, config.renderer, seed=s + 4)
        lo, hi = np.asarray(config.bounds[0], float), np.asarray(config.bounds[1], float)
        self._center = 0.5 * (lo + hi)
        self._half = 0.5 * (hi - lo)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self._center) / self._half

    def _field_maps(self, net: RadianceField, patches: list[RayPatch]):
        batch = SampleBatch.from_patches(patches)
        P, R, N = batch.shape
        out = net(self.normalize(batch.positions), batch.directions)
        sigma = reshape(out.sigma, (P, R, N))
        alpha, _ = compute_alphas(sigma, batch.deltas.reshape(P, R, N))
        feats = reshape(out.features, (P, R, N, out.features.shape[-1]))
        return alpha, build_feature_patch(alpha, feats, patches[0].K)

    @staticmethod
    def _premult(head: ColorHead, maps: FeaturePatch) -> Tensor:
        fc = transpose(maps.F_c, (0, 2, 3, 1))
        cov = transpose(maps.coarse_alpha, (0, 2, 3, 1))
        return transpose(head(fc, cov), (0, 3, 1, 2))

    def volume(self, patches: Sequence[RayPatch], rngs: Sequence | None = None) -> VolumeOutput:
        """Coarse pass, importance resampling, fine pass. ``rngs=None`` disables jitter."""
        cfg = self.config
        rngs = list(rngs) if rngs is not None else [None] * len(patches)
        coarse_p = [sample_coarse(p, cfg.n_coarse, r) for p, r in zip(patches, rngs)]
        alpha_c, maps_c = self._field_maps(self.field.coarse, coarse_p)
        if cfg.n_fine:
            w = alpha_c.data.astype(np.float64)
            fine_p = [sample_fine(p, w[i], cfg.n_fine, r) for i, (p, r) in enumerate(zip(coarse_p, rngs))]
        else:
            fine_p = coarse_p
        _, maps_f = self._field_maps(self.field.fine, fine_p)
        return VolumeOutput(fine_p, maps_f, maps_c,
                            self._premult(self.head.fine, maps_f), self._premult(self.head.coarse, maps_c))

    def render_maps(self, maps: FeaturePatch, premult: Tensor, background=WHITE) -> RenderOutput:
        """Final foreground colour and alpha from feature maps."""
        if self.config.use_renderer:
            return self.renderer(maps.F_c, maps.F_d, maps.coarse_alpha, background)
        # pixel-wise head: the direct volumetric colour is already premultiplied
        alpha = maps.coarse_alpha
        pm = clip(premult, 0.0, 1.0)
        F = Tensor(np.clip(pm.data / np.maximum(alpha.data, 1e-6), 0.0, 1.0))
        B = np.asarray(background, dtype=pm.dtype).reshape(1, -1, 1, 1)
        return RenderOutput(F, alpha, pm + (1.0 - alpha) * B)

    # ------------------------------------------------------------------
    # inference
    # ------------------------------------------------------------------

    def _frame_maps(self, view: CameraView, bounds: DepthBounds, chunk: int = 4):
        K = self.config.K
        patches = partition_patches(view, bounds, K)
        Hp, Wp = -(-view.height // K) * K, -(-view.width // K) * K
        C, N = self.config.field.feature_dim, self.config.n_samples
        Fc = np.zeros((1, C, Hp, Wp), np.float32)
        Fd = np.zeros((1, N, Hp, Wp), np.float32)
        ca = np.zeros((1, 1, Hp, Wp), np.float32)
        pm = np.zeros((1, 3, Hp, Wp), np.float32)
        per_patch = []
        with no_grad():
            for i in range(0, len(patches), chunk):
                group = patches[i:i + chunk]
                vol = self.volume(group)
                for j, p in enumerate(group):
                    sl = (0, slice(None), slice(p.row, p.row + K), slice(p.col, p.col + K))
                    Fc[sl] = vol.fine.F_c.data[j]
                    Fd[sl] = vol.fine.F_d.data[j]
                    ca[sl] = vol.fine.coarse_alpha.data[j]
                    pm[sl] = vol.premult_fine.data[j]
                    per_patch.append(p)
        return per_patch, FeaturePatch(Tensor(Fc), Tensor(Fd), Tensor(ca)), Tensor(pm)

    def _finish(self, out: RenderOutput, view: CameraView, bounds: DepthBounds, background) -> dict:
        H, W = view.height, view.width
        F = out.F.data[0, :, :H, :W].transpose(1, 2, 0)
        alpha = out.alpha.data[0, 0, :H, :W] * bounds.valid
        B = np.asarray(background, dtype=np.float32)
        return {"F": F, "alpha": alpha, "composite": alpha[..., None] * F + (1 - alpha[..., None]) * B}

    def render_image(self, view: CameraView, bounds: DepthBounds, background=WHITE) -> dict:
        """Whole frame in a single renderer pass over the assembled feature image.

        Pixels outside the proxy's valid mask get alpha 0.
        """
        _, maps, pm = self._frame_maps(view, bounds)
        with no_grad():
            out = self.render_maps(maps, pm, background)
        return self._finish(out, view, bounds, background)

    def render_image_patchwise(self, view: CameraView, bounds: DepthBounds, background=WHITE) -> dict:
        """Reference path rendering every kept patch on its own."""
        K = self.config.K
        patches, maps, pm = self._frame_maps(view, bounds)
        Fo = np.zeros((1, 3) + maps.F_c.shape[2:], np.float32)
        Ao = np.zeros((1, 1) + maps.F_c.shape[2:], np.float32)
        with no_grad():
            for p in patches:
                sl = (slice(None), slice(None), slice(p.row, p.row + K), slice(p.col, p.col + K))
                sub = FeaturePatch(Tensor(maps.F_c.data[sl]), Tensor(maps.F_d.data[sl]),
                                   Tensor(maps.coarse_alpha.data[sl]))
                o = self.render_maps(sub, Tensor(pm.data[sl]), background)
                Fo[sl] = o.F.data
                Ao[sl] = o.alpha.data
        return self._finish(RenderOutput(Tensor(Fo), Tensor(Ao), None), view, bounds, background)

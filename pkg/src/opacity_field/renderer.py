"""Gated-convolution U-Net turning feature patches into foreground colour and alpha.

Downsampling uses 2x2 stride-2 gated convs and the decoder mixes 1x1 and 3x3
kernels, which caps the receptive field of every output pixel at +-8 px. A
full-frame pass therefore matches per-patch rendering exactly for pixels at
least 8 px away from any patch seam.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Conv2d, Module, Tensor, clip, concat, leaky_relu, sigmoid, upsample2x

DOWNSAMPLE_FACTOR = 4
RECEPTIVE_RADIUS = 8
WHITE = (1.0, 1.0, 1.0)


@dataclass(frozen=True)
class RendererConfig:
    base_channels: int = 32

    def __post_init__(self):
        if self.base_channels <= 0:
            raise ValueError("base_channels must be positive")


class GatedConv(Module):
    """``leaky_relu(conv_f(x)) * sigmoid(conv_g(x))``."""

    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 1, slope: float = 0.2):
        pad = 0 if stride > 1 else (k - 1) // 2
        self.feature = Conv2d(c_in, c_out, k, rng, stride=stride, padding=pad)
        self.gate = Conv2d(c_in, c_out, k, rng, stride=stride, padding=pad, gain=1.0)
        self.c_in = c_in
        self.slope = slope

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ValueError(f"gated conv expects (N, {self.c_in}, H, W), got {x.shape}")
        return leaky_relu(self.feature(x), self.slope) * sigmoid(self.gate(x))


def gated_conv(x: Tensor, layer: GatedConv) -> Tensor:
    return layer(x)


class RadianceBranch(Module):
    """Two down/up levels; outputs foreground colour in [0, 1]."""

    def __init__(self, c_in: int, c: int, rng: np.random.Generator):
        self.enc0 = GatedConv(c_in, c, 3, rng)
        self.down1 = GatedConv(c, 2 * c, 2, rng, stride=2)
        self.down2 = GatedConv(2 * c, 4 * c, 2, rng, stride=2)
        self.up1 = GatedConv(6 * c, 2 * c, 1, rng)
        self.up0 = GatedConv(3 * c, c, 3, rng)
        self.out = Conv2d(c, 3, 1, rng, gain=1.0)

    def forward(self, x: Tensor) -> Tensor:
        e0 = self.enc0(x)
        e1 = self.down1(e0)
        e2 = self.down2(e1)
        u1 = self.up1(concat([upsample2x(e2), e1], axis=1))
        u0 = self.up0(concat([upsample2x(u1), e0], axis=1))
        return sigmoid(self.out(u0))


class OpacityBranch(Module):
    """One down/up level; outputs an additive alpha residual (zero at init)."""

    def __init__(self, c_in: int, c: int, rng: np.random.Generator):
        self.enc0 = GatedConv(c_in, c, 3, rng)
        self.down1 = GatedConv(c, 2 * c, 2, rng, stride=2)
        self.up0 = GatedConv(3 * c, c, 3, rng)
        self.out = Conv2d(c, 1, 1, rng, zero=True)

    def forward(self, x: Tensor) -> Tensor:
        e0 = self.enc0(x)
        e1 = self.down1(e0)
        return self.out(self.up0(concat([upsample2x(e1), e0], axis=1)))


@dataclass
class RenderOutput:
    F: Tensor  # (P, 3, H, W)
    alpha: Tensor  # (P, 1, H, W)
    composite: Tensor  # (P, 3, H, W)


def composite(F, alpha, background=WHITE) -> Tensor:
    """``alpha * F + (1 - alpha) * B``; ``alpha`` broadcasts over channels."""
    F = F if isinstance(F, Tensor) else Tensor(F)
    alpha = alpha if isinstance(alpha, Tensor) else Tensor(alpha)
    B = np.asarray(background, dtype=F.dtype)
    if F.ndim == 4:
        B = B.reshape(1, -1, 1, 1)
    return alpha * F + (1.0 - alpha) * B


class ConvRenderer(Module):
    def __init__(self, feature_dim: int, n_samples: int, config: RendererConfig = RendererConfig(), seed: int = 0):
        rng = np.random.default_rng(seed)
        c = config.base_channels
        self.config = config
        self.feature_dim = feature_dim
        self.n_samples = n_samples
        self.radiance = RadianceBranch(feature_dim + n_samples, c, rng)
        self.opacity = OpacityBranch(3 + n_samples, c, rng)

    def forward(self, F_c: Tensor, F_d: Tensor, coarse_alpha: Tensor, background=WHITE) -> RenderOutput:
        H, W = F_c.shape[-2:]
        if H % DOWNSAMPLE_FACTOR or W % DOWNSAMPLE_FACTOR:
            raise ValueError(f"feature maps must be a multiple of {DOWNSAMPLE_FACTOR} in size, got {H}x{W}")
        if F_c.shape[1] != self.feature_dim or F_d.shape[1] != self.n_samples:
            raise ValueError(
                f"expected {self.feature_dim} radiance and {self.n_samples} density channels, "
                f"got {F_c.shape[1]} and {F_d.shape[1]}")
        F = self.radiance(concat([F_c, F_d], axis=1))
        residual = self.opacity(concat([F, F_d], axis=1))
        alpha = clip(coarse_alpha + residual, 0.0, 1.0)
        return RenderOutput(F, alpha, composite(F, alpha, background))


def render_patch(F_c, F_d, coarse_alpha, renderer: ConvRenderer, background=WHITE) -> RenderOutput:
    return renderer(F_c, F_d, coarse_alpha, background)

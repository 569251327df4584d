"""Positional encoding and the MLP mapping (position, direction) to (feature, density)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Linear, Module, Tensor, concat, get_default_dtype, relu, softplus


@dataclass(frozen=True)
class FieldConfig:
    pos_bands: int = 10
    dir_bands: int = 4
    width: int = 128
    depth: int = 6
    feature_dim: int = 16

    def __post_init__(self):
        for name in ("pos_bands", "dir_bands", "width", "depth", "feature_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.feature_dim < 4:
            raise ValueError("feature_dim must be at least 4")


def positional_encode(v: np.ndarray, bands: int, include_input: bool = True, dtype=np.float64) -> np.ndarray:
    """``[v, sin(2^0 pi v), cos(2^0 pi v), ..., sin(2^(L-1) pi v), cos(2^(L-1) pi v)]``."""
    v = np.asarray(v, dtype=dtype)
    freqs = (np.pi * 2.0 ** np.arange(bands)).astype(dtype)
    w = v[..., None, :] * freqs[:, None]  # (..., L, 3)
    sc = np.stack([np.sin(w), np.cos(w)], axis=-2)  # (..., L, 2, 3)
    enc = sc.reshape(v.shape[:-1] + (6 * bands,))
    return np.concatenate([v, enc], axis=-1) if include_input else enc


def encoded_dim(bands: int, include_input: bool = True) -> int:
    return 6 * bands + (3 if include_input else 0)


@dataclass
class FieldOutput:
    features: Tensor  # (B, C)
    sigma: Tensor  # (B,)


class RadianceField(Module):
    """NeRF-style trunk with the final RGB layer removed.

    Density branches off the trunk before the view direction is injected, so
    it is a function of position only.
    """

    def __init__(self, config: FieldConfig = FieldConfig(), seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        W = config.width
        in_x = encoded_dim(config.pos_bands)
        in_d = encoded_dim(config.dir_bands)
        self.skip = config.depth // 2 if config.depth > 2 else None
        layers = []
        for i in range(config.depth):
            n_in = in_x if i == 0 else W
            if self.skip is not None and i == self.skip:
                n_in += in_x
            layers.append(Linear(n_in, W, rng))
        self.trunk = layers
        self.sigma_head = Linear(W, 1, rng)
        self.sigma_head.weight.data *= 0.1
        self.bottleneck = Linear(W, W, rng)
        self.view_layer = Linear(W + in_d, W // 2, rng)
        self.feature_head = Linear(W // 2, config.feature_dim, rng)
        self.feature_head.weight.data *= 0.5

    def forward(self, x: np.ndarray, d: np.ndarray) -> FieldOutput:
        x = np.asarray(x)
        d = np.asarray(d)
        if x.ndim != 2 or x.shape[-1] != 3 or d.shape != x.shape:
            raise ValueError(f"field_forward expects (B, 3) positions and directions, got {x.shape} and {d.shape}")
        dt = get_default_dtype()
        ex = Tensor(positional_encode(x, self.config.pos_bands, dtype=dt))
        ed = Tensor(positional_encode(d, self.config.dir_bands, dtype=dt))
        h = ex
        for i, layer in enumerate(self.trunk):
            if i == self.skip:
                h = concat([h, ex], axis=1)
            h = relu(layer(h))
        sigma = softplus(self.sigma_head(h)).reshape(-1)
        feat = self.bottleneck(h)
        v = relu(self.view_layer(concat([feat, ed], axis=1)))
        return FieldOutput(self.feature_head(v), sigma)


def field_forward(x, d, field: RadianceField) -> FieldOutput:
    return field(x, d)


class ColorHead(Module):
    """Linear 3-channel projection of per-sample features.

    Because it is linear it commutes with volumetric integration: applied to an
    integrated feature map it yields the premultiplied colour of per-sample
    colours ``W f_i + b``.
    """

    def __init__(self, feature_dim: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.proj = Linear(feature_dim, 3, rng)
        self.proj.weight.data *= 0.3
        self.proj.bias.data[:] = 0.5

    def forward(self, integrated: Tensor, coverage: Tensor) -> Tensor:
        """``integrated`` is (..., C), ``coverage`` (..., 1) the summed alphas."""
        from .autodiff import matmul

        return matmul(integrated, self.proj.weight) + coverage * self.proj.bias

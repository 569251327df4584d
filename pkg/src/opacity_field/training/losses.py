"""Generator and discriminator objectives.

Every image tensor is NCHW. ``mask`` is an optional (P, 1, H, W) array of
0/1 weights; masked-out pixels (patch padding) have no influence on any
loss value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Conv2d, Module, Tensor, avg_pool2x, concat, conv2d, leaky_relu, mean, relu, sum_


@dataclass(frozen=True)
class LossWeights:
    w_alpha: int = 1
    a: float = 2.0
    b: float = 1.0
    lambda_adv: float = 0.01
    perceptual: float = 1.0

    def __post_init__(self):
        if self.w_alpha not in (0, 1):
            raise ValueError("w_alpha must be 0 (real capture) or 1 (synthetic)")
        if abs(self.a - self.b - 1.0) > 1e-12:
            raise ValueError(f"loss weights need a - b = 1, got a={self.a}, b={self.b}")
        if self.lambda_adv < 0:
            raise ValueError("lambda_adv must be non-negative")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _mask_and_count(mask, like: Tensor):
    if mask is None:
        return None, like.shape[0] * like.shape[2] * like.shape[3]
    m = np.asarray(mask, dtype=like.dtype)
    n = float(m.sum())
    if n == 0:
        raise ValueError("loss mask selects no pixels")
    return m, n


def masked_mse(x, y, mask=None, weight=None) -> Tensor:
    """Mean over unmasked pixels and channels of ``weight * (x - y)^2``."""
    x, y = _as_tensor(x), _as_tensor(y)
    m, n = _mask_and_count(mask, x)
    d = (x - y) ** 2
    if weight is not None:
        d = d * weight
    if m is not None:
        d = d * m
    return sum_(d) * (1.0 / (n * x.shape[1]))


def loss_reconstruction(I, alpha, I_gt, alpha_gt, mask=None) -> Tensor:
    return masked_mse(I, I_gt, mask) + masked_mse(alpha, alpha_gt, mask)


class PerceptualBackbone:
    """Frozen random conv pyramid standing in for a pretrained classifier.

    Op indices follow the usual layout: conv(0) relu(1) conv(2) relu(3) pool(4)
    conv(5) relu(6) conv(7) relu(8); features are tapped after ops 3 and 8.
    Convs carry no bias so an all-zero region maps to zero features.
    """

    TAPS = (3, 8)
    MIN_SIZE = 4

    def __init__(self, seed: int = 1234, widths=(16, 32), weights: dict | None = None):
        rng = np.random.default_rng(seed)
        shapes = [(widths[0], 3), (widths[0], widths[0]), (widths[1], widths[0]), (widths[1], widths[1])]
        self.kernels = []
        for i, (o, c) in enumerate(shapes):
            if weights is not None and f"conv{i}" in weights:
                w = np.asarray(weights[f"conv{i}"], dtype=np.float64)
            else:
                w = rng.normal(0.0, np.sqrt(2.0 / (9 * c)), size=(o, c, 3, 3))
            # plain Tensor: gradients reach the input, never the kernel
            self.kernels.append(Tensor(w.astype(np.float32)))

    def features(self, x: Tensor) -> list[Tensor]:
        H, W = x.shape[-2:]
        if H < self.MIN_SIZE or W < self.MIN_SIZE or H % 2 or W % 2:
            raise ValueError(f"perceptual loss needs even patches of at least {self.MIN_SIZE} px, got {H}x{W}")
        k = [t if t.dtype == x.dtype else Tensor(t.data.astype(x.dtype)) for t in self.kernels]
        h = relu(conv2d(x, k[0]))
        tap3 = relu(conv2d(h, k[1]))
        h = avg_pool2x(tap3)
        h = relu(conv2d(h, k[2]))
        tap8 = relu(conv2d(h, k[3]))
        return [tap3, tap8]


def _feature_distance(backbone: PerceptualBackbone, x: Tensor, y: Tensor) -> Tensor:
    total = None
    for fx, fy in zip(backbone.features(x), backbone.features(y)):
        term = mean((fx - fy) ** 2)
        total = term if total is None else total + term
    return total


def _masked(x: Tensor, mask) -> Tensor:
    return x if mask is None else x * np.asarray(mask, dtype=x.dtype)


def _rgb(alpha: Tensor) -> Tensor:
    return concat([alpha, alpha, alpha], axis=1)


def loss_perceptual(I, I_gt, alpha, alpha_gt, backbone: PerceptualBackbone, mask=None) -> Tensor:
    I, I_gt, alpha, alpha_gt = map(_as_tensor, (I, I_gt, alpha, alpha_gt))
    img = _feature_distance(backbone, _masked(I, mask), _masked(I_gt, mask))
    mat = _feature_distance(backbone, _masked(_rgb(alpha), mask), _masked(_rgb(alpha_gt), mask))
    return img + mat


def empty_region_weights(alpha_gt, weights: LossWeights) -> np.ndarray:
    """``w_i = a - b * alpha_gt``: empty pixels weigh ``a``, opaque ones ``a - b = 1``."""
    a = alpha_gt.data if isinstance(alpha_gt, Tensor) else np.asarray(alpha_gt)
    return weights.a - weights.b * a


def loss_intermediate(I_mlp, alpha_mlp, I_gt, alpha_gt, weights: LossWeights,
                      backbone: PerceptualBackbone | None = None, mask=None) -> Tensor:
    I_mlp, alpha_mlp = _as_tensor(I_mlp), _as_tensor(alpha_mlp)
    w = empty_region_weights(alpha_gt, weights).astype(I_mlp.dtype)
    total = masked_mse(I_mlp, I_gt, mask, weight=w)
    if weights.w_alpha:
        total = total + masked_mse(alpha_mlp, alpha_gt, mask)
    if backbone is not None and weights.perceptual:
        total = total + weights.perceptual * _feature_distance(
            backbone, _masked(I_mlp, mask), _masked(_as_tensor(I_gt), mask))
    return total


class Discriminator(Module):
    """Patch classifier: strided conv stack, score map mean-pooled per patch."""

    def __init__(self, channels: int = 32, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.c1 = Conv2d(3, channels, 3, rng, stride=2, padding=1)
        self.c2 = Conv2d(channels, 2 * channels, 3, rng, stride=2, padding=1)
        self.c3 = Conv2d(2 * channels, 1, 3, rng, gain=1.0)

    def forward(self, x: Tensor) -> Tensor:
        h = leaky_relu(self.c1(x))
        h = leaky_relu(self.c2(h))
        s = self.c3(h)
        return mean(s, axis=(1, 2, 3))


def _score(D, x) -> Tensor:
    return D(x) if callable(D) else _as_tensor(D)


def loss_discriminator(D, I_fake, I_real) -> Tensor:
    """Least-squares objective, ``mean(D(fake)^2) + mean((D(real) - 1)^2)``."""
    return mean(_score(D, I_fake) ** 2) + mean((_score(D, I_real) - 1.0) ** 2)


def loss_generator_adv(D, I_fake) -> Tensor:
    return mean((_score(D, I_fake) - 1.0) ** 2)

"""Per-sample opacities and per-patch feature maps from field outputs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, clip, concat, cumsum, exp, getitem, reshape, sum_, transpose


def _check_nonneg(name: str, x) -> None:
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    if np.any(data < 0):
        raise ValueError(f"{name} must be non-negative")


def compute_alphas(sigma, delta) -> tuple[Tensor, Tensor]:
    """Opacity weights along rays; the last axis indexes samples front to back.

    Returns ``(alpha, T)`` with ``T_i = exp(-sum_{j<i} sigma_j delta_j)`` and
    ``alpha_i = T_i (1 - exp(-sigma_i delta_i))``.
    """
    sigma = sigma if isinstance(sigma, Tensor) else Tensor(sigma)
    _check_nonneg("sigma", sigma)
    _check_nonneg("delta", delta)
    d = np.asarray(delta.data if isinstance(delta, Tensor) else delta, dtype=sigma.dtype)
    if d.shape != sigma.shape:
        raise ValueError(f"sigma {sigma.shape} and delta {d.shape} differ in shape")
    tau = sigma * d
    axis = sigma.ndim - 1
    # exclusive running sum of non-negative terms keeps T non-increasing under rounding
    head = Tensor(np.zeros(tau.shape[:-1] + (1,), dtype=tau.dtype))
    shifted = concat([head, getitem(tau, (Ellipsis, slice(0, -1)))], axis=axis)
    T = exp(-cumsum(shifted, axis=axis))
    alpha = T * (1.0 - exp(-tau))
    return alpha, T


def final_transmittance(sigma, delta) -> np.ndarray:
    """``T_{N+1}``, the light left after the last sample."""
    s = sigma.data if isinstance(sigma, Tensor) else np.asarray(sigma)
    return np.exp(-np.sum(s * np.asarray(delta), axis=-1))


def integrate_features(alpha: Tensor, f: Tensor) -> Tensor:
    """``sum_i alpha_i f_i`` over the sample axis; ``alpha`` is (..., N), ``f`` is (..., N, C)."""
    if tuple(f.shape[:-1]) != tuple(alpha.shape):
        raise ValueError(f"alpha {alpha.shape} does not match features {f.shape}")
    return sum_(reshape(alpha, alpha.shape + (1,)) * f, axis=alpha.ndim - 1)


@dataclass
class FeaturePatch:
    """Channel-first maps for a batch of P patches of size K x K."""

    F_c: Tensor  # (P, C, K, K)
    F_d: Tensor  # (P, N, K, K), ascending depth
    coarse_alpha: Tensor  # (P, 1, K, K)

    @property
    def K(self) -> int:
        return self.F_c.shape[-1]


def build_feature_patch(alpha: Tensor, f: Tensor, K: int) -> FeaturePatch:
    """Assemble maps from per-sample alphas ``(P, K*K, N)`` and features ``(P, K*K, N, C)``.

    Rays are in row-major pixel order.
    """
    if alpha.ndim != 3 or alpha.shape[1] != K * K:
        raise ValueError(f"expected alphas for {K * K} rays per patch, got shape {alpha.shape}")
    P, R, N = alpha.shape
    Fc = integrate_features(alpha, f)  # (P, R, C)
    C = Fc.shape[-1]
    Fc = transpose(reshape(Fc, (P, K, K, C)), (0, 3, 1, 2))
    Fd = transpose(reshape(alpha, (P, K, K, N)), (0, 3, 1, 2))
    coarse = clip(sum_(Fd, axis=1, keepdims=True), 0.0, 1.0)
    return FeaturePatch(Fc, Fd, coarse)


def assemble_volume_image(patch_maps: FeaturePatch, extra: Tensor | None = None) -> Tensor:
    """Concatenate radiance and density maps along channels (renderer input)."""
    parts = [patch_maps.F_c, patch_maps.F_d]
    if extra is not None:
        parts.append(extra)
    return concat(parts, axis=1)

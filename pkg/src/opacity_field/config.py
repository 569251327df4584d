"""Flat run configuration: JSON file plus ``key=value`` overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .camera import SCENE_BOUNDS
from .field import FieldConfig
from .model import ModelConfig
from .renderer import RendererConfig


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class RunConfig:
    seed: int = 0
    steps: int = 2000
    batch_patches: int = 12
    K: int = 32
    n_coarse: int = 32
    n_fine: int = 32
    learning_rate: float = 5e-4
    lr_final_ratio: float = 0.1
    pos_bands: int = 10
    dir_bands: int = 4
    width: int = 128
    depth: int = 6
    feature_dim: int = 16
    renderer_channels: int = 32
    disc_channels: int = 32
    use_ers: bool = True
    use_renderer: bool = True
    use_gan: bool = True
    w_alpha: int = 1
    a: float = 2.0
    b: float = 1.0
    lambda_adv: float = 0.01
    perceptual: float = 1.0
    perceptual_seed: int = 1234
    carve_resolution: int = 128
    carve_threshold: float = 0.05
    dilate_radius: int = 2
    margin_voxels: float = 1.0
    checkpoint_interval: int = 1000
    log_interval: int = 50
    bounds: tuple = SCENE_BOUNDS

    def __post_init__(self):
        self.bounds = tuple(tuple(float(v) for v in b) for b in self.bounds)
        self.validate()

    def validate(self) -> None:
        positive = ["steps", "batch_patches", "K", "n_coarse", "learning_rate", "pos_bands", "dir_bands", "width",
                    "depth", "feature_dim", "renderer_channels", "disc_channels", "carve_resolution",
                    "checkpoint_interval", "log_interval"]
        for key in positive:
            if getattr(self, key) <= 0:
                raise ConfigError(key, "must be positive")
        if self.n_fine < 0:
            raise ConfigError("n_fine", "must be non-negative")
        if self.feature_dim < 4:
            raise ConfigError("feature_dim", "must be at least 4")
        if self.use_renderer and self.K % 4:
            raise ConfigError("K", "must be a multiple of 4 when the conv renderer is on")
        if not 0 < self.lr_final_ratio <= 1:
            raise ConfigError("lr_final_ratio", "must lie in (0, 1]")
        if not 0 < self.carve_threshold < 1:
            raise ConfigError("carve_threshold", "must lie in (0, 1)")
        if self.dilate_radius < 0:
            raise ConfigError("dilate_radius", "must be >= 0")
        if self.margin_voxels < 0:
            raise ConfigError("margin_voxels", "must be >= 0")
        if len(self.bounds) != 2 or any(len(b) != 3 for b in self.bounds) or any(
                lo >= hi for lo, hi in zip(*self.bounds)):
            raise ConfigError("bounds", "expected [[x0, y0, z0], [x1, y1, z1]] with lo < hi")
        try:
            self.loss_weights()
        except ValueError as exc:
            key = "a" if "a - b" in str(exc) else "w_alpha" if "w_alpha" in str(exc) else "lambda_adv"
            raise ConfigError(key, str(exc)) from None

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            K=self.K, n_coarse=self.n_coarse, n_fine=self.n_fine,
            field=FieldConfig(self.pos_bands, self.dir_bands, self.width, self.depth, self.feature_dim),
            renderer=RendererConfig(self.renderer_channels), use_renderer=self.use_renderer,
            bounds=self.bounds, seed=self.seed)

    def loss_weights(self):
        from .training.losses import LossWeights

        return LossWeights(self.w_alpha, self.a, self.b, self.lambda_adv, self.perceptual)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bounds"] = [list(b) for b in self.bounds]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in d.items():
            if key not in known:
                raise ConfigError(key, "unknown configuration key")
            kwargs[key] = _coerce(key, value, type(getattr(cls(), key)) if key != "bounds" else tuple)
        return cls(**kwargs)

    @classmethod
    def load(cls, path, overrides=()) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text()) if path else {}
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f"invalid JSON ({exc.msg})") from None
        except OSError as exc:
            raise ConfigError(str(path), exc.strerror or "unreadable") from None
        if not isinstance(d, dict):
            raise ConfigError(str(path), "top level must be an object")
        for item in overrides:
            key, sep, raw = item.partition("=")
            if not sep:
                raise ConfigError(item, "override must look like key=value")
            try:
                d[key.strip()] = json.loads(raw)
            except json.JSONDecodeError:
                d[key.strip()] = raw
        return cls.from_dict(d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _coerce(key: str, value, kind):
    try:
        if kind is bool:
            if isinstance(value, str):
                if value.lower() in ("true", "1", "yes"):
                    return True
                if value.lower() in ("false", "0", "no"):
                    return False
                raise ValueError(value)
            if isinstance(value, (bool, int)):
                return bool(value)
            raise ValueError(value)
        if kind is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if kind is float:
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        if kind is tuple:
            return tuple(tuple(float(v) for v in b) for b in value)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected {kind.__name__}, got {value!r}") from None
    return value

from .losses import (
    Discriminator,
    LossWeights,
    PerceptualBackbone,
    empty_region_weights,
    loss_discriminator,
    loss_generator_adv,
    loss_intermediate,
    loss_perceptual,
    loss_reconstruction,
    masked_mse,
)
from .trainer import METRIC_COLUMNS, NumericalError, Trainer, fit_proxy, sampling_bounds

__all__ = [
    "Discriminator", "LossWeights", "PerceptualBackbone", "empty_region_weights", "loss_discriminator",
    "loss_generator_adv", "loss_intermediate", "loss_perceptual", "loss_reconstruction", "masked_mse",
    "METRIC_COLUMNS", "NumericalError", "Trainer", "fit_proxy", "sampling_bounds",
]

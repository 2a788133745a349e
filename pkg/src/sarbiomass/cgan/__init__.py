"""Conditional GAN for SAR-to-AGB image translation."""

from .losses import gradient_penalty, loss_lsgan, loss_vanilla, loss_wgangp
from .networks import (
    DISCRIMINATOR_LAYOUTS,
    Discriminator,
    DiscriminatorSpec,
    Generator,
    GeneratorSpec,
    build_discriminator,
    build_generator,
    count_parameters,
    discriminator_receptive_field,
    receptive_field,
)
from .training import (
    ConfigError,
    TrainConfig,
    TrainingError,
    TrainResult,
    generate,
    load_generator,
    train,
    write_loss_log,
)

"""ResNet generators and Pixel/PatchGAN discriminators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import functional as F
from ..autodiff.nn import (
    Conv2d,
    ConvTranspose2d,
    LeakyReLU,
    Module,
    ReLU,
    Sequential,
    make_norm,
)


@dataclass(frozen=True)
class GeneratorSpec:
    resnet_blocks: int = 6
    norm: str = "bn"
    in_channels: int = 3
    out_channels: int = 1
    base_width: int = 64

    def __post_init__(self):
        if self.resnet_blocks not in (4, 5, 6):
            raise ValueError(f"resnet_blocks must be 4, 5 or 6, got {self.resnet_blocks}")
        if self.norm.lower() not in ("bn", "in"):
            raise ValueError(f"generator norm must be bn or in, got {self.norm!r}")
        if self.base_width < 1:
            raise ValueError("base_width must be positive")


@dataclass(frozen=True)
class DiscriminatorSpec:
    kind: str = "pixel"
    norm: str = "bn"
    in_channels: int = 4
    base_width: int = 64

    def __post_init__(self):
        if self.kind not in DISCRIMINATOR_LAYOUTS:
            raise ValueError(f"unknown discriminator kind {self.kind!r}")
        if self.norm.lower() not in ("bn", "in", "ln"):
            raise ValueError(f"discriminator norm must be bn, in or ln, got {self.norm!r}")


class ResidualBlock(Module):
    def __init__(self, width: int, norm: str, rng):
        super().__init__()
        bias = norm != "bn"
        self.body = Sequential(
            Conv2d(width, width, 3, 1, 1, bias=bias, rng=rng),
            make_norm(norm, width, rng),
            ReLU(),
            Conv2d(width, width, 3, 1, 1, bias=bias, rng=rng),
            make_norm(norm, width, rng),
        )

    def forward(self, x):
        return F.add(x, self.body(x))


class Generator(Module):
    """7x7 stem, two stride-2 encoders, N residual blocks, two stride-2
    decoders, 7x7 head and a ReLU so every output is non-negative."""

    def __init__(self, spec: GeneratorSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        norm = spec.norm.lower()
        w = spec.base_width
        bias = norm != "bn"
        layers: list[Module] = [
            Conv2d(spec.in_channels, w, 7, 1, 3, bias=bias, rng=rng), make_norm(norm, w, rng), ReLU(),
            Conv2d(w, 2 * w, 4, 2, 1, bias=bias, rng=rng), make_norm(norm, 2 * w, rng), ReLU(),
            Conv2d(2 * w, 4 * w, 4, 2, 1, bias=bias, rng=rng), make_norm(norm, 4 * w, rng), ReLU(),
        ]
        layers += [ResidualBlock(4 * w, norm, rng) for _ in range(spec.resnet_blocks)]
        layers += [
            ConvTranspose2d(4 * w, 2 * w, 4, 2, 1, bias=bias, rng=rng), make_norm(norm, 2 * w, rng), ReLU(),
            ConvTranspose2d(2 * w, w, 4, 2, 1, bias=bias, rng=rng), make_norm(norm, w, rng), ReLU(),
            Conv2d(w, spec.out_channels, 7, 1, 3, bias=True, rng=rng),
            ReLU(),
        ]
        self.net = Sequential(*layers)

    def forward(self, x):
        return self.net(x)


# (kernel, stride, pad) per conv; widths are multiples of base_width, the last maps to 1
DISCRIMINATOR_LAYOUTS = {
    "pixel": [(1, 1, 0), (1, 1, 0), (1, 1, 0)],
    "patch16": [(4, 2, 1), (4, 1, 1), (4, 1, 1)],
    "patch34": [(4, 2, 1), (4, 2, 1), (4, 1, 1), (4, 1, 1)],
}


class Discriminator(Module):
    """Fully convolutional critic over the channel-concatenated (SAR, AGB) pair.

    Outputs one logit per receptive-field position.
    """

    def __init__(self, spec: DiscriminatorSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        layout = DISCRIMINATOR_LAYOUTS[spec.kind]
        norm = spec.norm.lower()
        widths = [spec.base_width * 2**i for i in range(len(layout) - 1)] + [1]
        layers: list[Module] = []
        cin = spec.in_channels
        for i, ((k, s, p), cout) in enumerate(zip(layout, widths)):
            last = i == len(layout) - 1
            use_norm = 0 < i < len(layout) - 1
            layers.append(Conv2d(cin, cout, k, s, p, bias=not (use_norm and norm == "bn"), rng=rng))
            if use_norm:
                layers.append(make_norm(norm, cout, rng))
            if not last:
                layers.append(LeakyReLU(0.2))
            cin = cout
        self.net = Sequential(*layers)

    def forward(self, sar, agb):
        return self.net(F.concat([sar, agb], axis=1))

    def conv_layers(self) -> list[Conv2d]:
        return [layer for layer in self.net if isinstance(layer, Conv2d)]


def receptive_field(layers: list[tuple[int, int]]) -> int:
    """Receptive field of a conv stack given (kernel, stride) pairs."""
    r, j = 1, 1
    for k, s in layers:
        r += (k - 1) * j
        j *= s
    return r


def discriminator_receptive_field(disc: Discriminator) -> int:
    return receptive_field([(c.k, c.stride) for c in disc.conv_layers()])


def build_generator(spec: GeneratorSpec, seed: int = 0) -> Generator:
    return Generator(spec, np.random.default_rng(seed))


def build_discriminator(spec: DiscriminatorSpec, seed: int = 0) -> Discriminator:
    return Discriminator(spec, np.random.default_rng(seed))


def count_parameters(module: Module) -> int:
    return int(sum(p.size for p in module.parameters()))

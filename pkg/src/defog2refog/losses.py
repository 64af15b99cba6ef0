"""Loss terms of the two-direction cycle objective and their weighted total.

All norms are squared L2 norms reduced by the mean over elements.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, fields
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

GAN_MODES = ("least_squares", "log")
PART_NAMES = ("r_adv", "d_adv", "cycle", "enhancer", "perceptual")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str, value=None):
        super().__init__(f"non-finite loss term {term!r}: {value}")
        self.term = term


@dataclass(frozen=True)
class LossWeights:
    """gamma1..gamma5: refog adversarial, defog adversarial, cycle, enhancer, perceptual."""

    gamma1: float = 10.0
    gamma2: float = 10.0
    gamma3: float = 8.0
    gamma4: float = 5.0
    gamma5: float = 2.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) >= 0:
                raise ValueError(f"{f.name} must be >= 0")

    def as_tuple(self) -> tuple[float, ...]:
        return (self.gamma1, self.gamma2, self.gamma3, self.gamma4, self.gamma5)


def _check_shapes(*pairs):
    for a, b in pairs:
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def mean_squared(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _check_shapes((a, b))
    return ((a - b) ** 2).mean()


def cycle_refog_loss(x, recon_x, y, recon_y) -> torch.Tensor:
    """``|x - R(G(x))|^2 + |y - G(R(y))|^2``."""
    _check_shapes((x, recon_x), (y, recon_y))
    return mean_squared(x, recon_x) + mean_squared(y, recon_y)


def enhancer_loss(ex, r_of_ex_g, ey, g_of_ey_r) -> torch.Tensor:
    """``|E_d(X) - R(E_d(G(X)))|^2 + |E_r(Y) - G(E_r(R(Y)))|^2``."""
    _check_shapes((ex, r_of_ex_g), (ey, g_of_ey_r))
    return mean_squared(ex, r_of_ex_g) + mean_squared(ey, g_of_ey_r)


def adversarial_generator_term(d_fake, mode: str = "least_squares") -> torch.Tensor:
    """Generator's fooling term on raw fake scores."""
    if mode == "least_squares":
        return ((d_fake - 1.0) ** 2).mean()
    if mode == "log":
        # non-saturating: -log D(fake)
        return F.binary_cross_entropy_with_logits(d_fake, torch.ones_like(d_fake))
    raise ValueError(f"gan mode must be one of {GAN_MODES}")


def adversarial_discriminator_term(d_real, d_fake, mode: str = "least_squares") -> torch.Tensor:
    if mode == "least_squares":
        return ((d_real - 1.0) ** 2).mean() + (d_fake**2).mean()
    if mode == "log":
        return F.binary_cross_entropy_with_logits(
            d_real, torch.ones_like(d_real)
        ) + F.binary_cross_entropy_with_logits(d_fake, torch.zeros_like(d_fake))
    raise ValueError(f"gan mode must be one of {GAN_MODES}")


def adversarial_losses(d_real, d_fake, mode: str = "least_squares") -> tuple[torch.Tensor, torch.Tensor]:
    """Return ``(generator_term, discriminator_term)`` for raw score maps.

    ``least_squares``: disc = mean((D(real) - 1)^2) + mean(D(fake)^2),
    gen = mean((D(fake) - 1)^2). ``log``: binary cross-entropy on logits.
    """
    return adversarial_generator_term(d_fake, mode), adversarial_discriminator_term(d_real, d_fake, mode)


_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)


class PerceptualExtractor(nn.Module):
    """Frozen feature extractor for the perceptual loss.

    ``seeded_random_stack`` is four 3x3 conv + ReLU layers (64 channels,
    strides 1, 2, 2, 2) with fixed random weights, so the loss is usable
    without downloading anything. ``pretrained_16layer`` loads a VGG16
    state dict from ``weights_path``. ``layer_index`` counts how many
    layers (stack convs, or VGG feature modules) are applied; the defaults
    end at the last activation of the third stage (relu3_3 for VGG16).
    """

    BACKENDS = ("seeded_random_stack", "pretrained_16layer")

    def __init__(
        self,
        backend: str = "seeded_random_stack",
        layer_index: int | None = None,
        seed: int = 1234,
        weights_path: str | Path | None = None,
    ):
        super().__init__()
        if backend not in self.BACKENDS:
            raise ValueError(f"perceptual backend must be one of {self.BACKENDS}")
        self.backend = backend
        if backend == "seeded_random_stack":
            layer_index = 4 if layer_index is None else layer_index
            if not 1 <= layer_index <= 4:
                raise ValueError("random stack layer_index must be in 1..4")
            gen = torch.Generator().manual_seed(seed)
            layers = []
            in_ch = 3
            for stride in (1, 2, 2, 2)[:layer_index]:
                conv = nn.Conv2d(in_ch, 64, 3, stride=stride, padding=1)
                with torch.no_grad():
                    conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * math.sqrt(2.0 / (in_ch * 9)))
                    conv.bias.zero_()
                layers += [conv, nn.ReLU()]
                in_ch = 64
            self.features = nn.Sequential(*layers)
        else:
            if weights_path is None:
                raise ValueError("pretrained_16layer backend needs weights_path")
            from torchvision.models import vgg16

            layer_index = 16 if layer_index is None else layer_index
            model = vgg16(weights=None)
            state = torch.load(weights_path, map_location="cpu", weights_only=True)
            if any(k.startswith("features.") for k in state):
                state = {k[len("features.") :]: v for k, v in state.items() if k.startswith("features.")}
            model.features.load_state_dict(state)
            self.features = model.features[:layer_index]
        self.layer_index = layer_index
        self.register_buffer("mean", torch.tensor(_IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(_IMAGENET_STD).view(1, 3, 1, 1))
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True):
        # always frozen
        return super().train(False)

    def forward(self, x):
        if self.backend == "pretrained_16layer":
            x = ((x + 1.0) / 2.0 - self.mean.to(x.dtype)) / self.std.to(x.dtype)
        return self.features(x)


def perceptual_distance(extractor: PerceptualExtractor, a, b) -> torch.Tensor:
    _check_shapes((a, b))
    return mean_squared(extractor(a), extractor(b))


def perceptual_loss(extractor: PerceptualExtractor, x, recon_x, y, recon_y) -> torch.Tensor:
    return perceptual_distance(extractor, x, recon_x) + perceptual_distance(extractor, y, recon_y)


def _is_finite(value) -> bool:
    if isinstance(value, torch.Tensor):
        return bool(torch.isfinite(value).all())
    return math.isfinite(value)


def check_finite(**terms) -> None:
    for name, value in terms.items():
        if not _is_finite(value):
            raise NonFiniteLossError(name, value)


def total_generator_loss(parts: Mapping[str, object], weights: LossWeights = LossWeights()):
    """Weighted generator objective.

    ``parts`` maps ``r_adv``, ``d_adv``, ``cycle``, ``enhancer`` and
    ``perceptual`` to scalars; missing entries count as zero.
    """
    unknown = set(parts) - set(PART_NAMES)
    if unknown:
        raise KeyError(f"unknown loss parts {sorted(unknown)}")
    check_finite(**parts)
    total = 0.0
    for name, gamma in zip(PART_NAMES, weights.as_tuple()):
        if name in parts:
            total = total + gamma * parts[name]
    return total

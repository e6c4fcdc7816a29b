"""
Training objective: perceptual loss, Wasserstein critic/generator losses, their
weighted combination, and the log-loss minimax value kept as a diagnostic.

Sign convention: the critic minimizes mean(fake) - mean(real), which pushes real
scores up; the generator minimizes -mean(fake).

Every extractor takes channels-last tensors in [-1, 1] and owns any further
preprocessing it needs.
"""

import math
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence, Tuple, Union

import torch
import torch.nn.functional as F
from loguru import logger
from torch import nn
from torchvision.models import VGG16_Weights, vgg16

from deblur_gan.errors import LossError
from deblur_gan.utils.image_core import ImageTensor

GAN_VALUE_EPS = 1e-7
# convolutions per VGG16 block
VGG16_BLOCK_CONVS = (2, 2, 3, 3, 3)

Scores = Union[torch.Tensor, Sequence[float]]


class FeatureExtractor(Protocol):
    name: str

    def __call__(self, images: ImageTensor) -> torch.Tensor: ...


@dataclass(frozen=True)
class LossWeights:
    perceptual_weight: float = 100.0
    adversarial_weight: float = 1.0

    def __post_init__(self):
        if self.perceptual_weight < 0 or self.adversarial_weight < 0:
            raise LossError(
                "Loss weights must be >= 0, got "
                f"({self.perceptual_weight}, {self.adversarial_weight})"
            )
        if self.perceptual_weight == 0 and self.adversarial_weight == 0:
            raise LossError("Loss weights cannot both be zero")


class IdentityExtractor:
    """Features are the image itself."""

    name = "identity"

    def __call__(self, images: ImageTensor) -> torch.Tensor:
        return images


class _FrozenModuleExtractor:
    """Shared plumbing for extractors backed by a frozen torch module."""

    def __init__(self, features: nn.Module):
        self.features = features.eval()
        for param in self.features.parameters():
            param.requires_grad = False

    def to(self, device):
        self.features.to(device)
        return self

    def _prepare(self, images: ImageTensor) -> torch.Tensor:
        return images.permute(0, 3, 1, 2)

    def __call__(self, images: ImageTensor) -> torch.Tensor:
        return self.features(self._prepare(images))


class RandomConvExtractor(_FrozenModuleExtractor):
    """Two fixed 3x3 conv + ReLU layers drawn from a seeded generator."""

    name = "random"

    def __init__(self, seed: int = 0, channels: int = 8):
        generator = torch.Generator().manual_seed(seed)
        features = nn.Sequential(
            nn.Conv2d(3, channels, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.ReLU(),
        )
        with torch.no_grad():
            for module in features:
                if isinstance(module, nn.Conv2d):
                    fan_in = module.in_channels * 9
                    module.weight.copy_(
                        torch.randn(module.weight.shape, generator=generator) / math.sqrt(fan_in)
                    )
                    module.bias.zero_()
        super().__init__(features)


def vgg16_layer_names() -> list:
    """Names for vgg16().features entries: conv1_1, relu1_1, conv1_2, ..., pool5."""
    names = []
    for block, convs in enumerate(VGG16_BLOCK_CONVS, start=1):
        for index in range(1, convs + 1):
            names += [f"conv{block}_{index}", f"relu{block}_{index}"]
        names.append(f"pool{block}")
    return names


class VGG16Extractor(_FrozenModuleExtractor):
    """
    Early feature maps of a pretrained VGG16, truncated after `layer`.

    Preprocessing: [-1, 1] is mapped to [0, 1] and then ImageNet mean/std normalized.
    """

    name = "vgg16"
    MEAN = (0.485, 0.456, 0.406)
    STD = (0.229, 0.224, 0.225)

    def __init__(self, layer: str = "conv3_3", weights: Optional[str] = "DEFAULT"):
        names = vgg16_layer_names()
        if layer not in names:
            raise LossError(f"Unknown VGG16 layer {layer!r}; expected one of {names}")
        model = vgg16(weights=VGG16_Weights[weights] if weights else None)
        self.layer = layer
        super().__init__(model.features[: names.index(layer) + 1])
        self.mean = torch.tensor(self.MEAN).view(1, 3, 1, 1)
        self.std = torch.tensor(self.STD).view(1, 3, 1, 1)
        logger.info(f"Loaded VGG16 feature extractor up to {layer}")

    def to(self, device):
        super().to(device)
        self.mean = self.mean.to(device)
        self.std = self.std.to(device)
        return self

    def _prepare(self, images: ImageTensor) -> torch.Tensor:
        x = (images.permute(0, 3, 1, 2) + 1.0) / 2.0
        return (x - self.mean) / self.std


def make_extractor(name: str = "vgg16", layer: str = "conv3_3", seed: int = 0) -> FeatureExtractor:
    if name == "identity":
        return IdentityExtractor()
    if name == "random":
        return RandomConvExtractor(seed=seed)
    if name == "vgg16":
        return VGG16Extractor(layer=layer)
    raise LossError(f"Unknown feature extractor {name!r}; expected identity, random or vgg16")


def _as_scores(scores: Scores, who: str) -> torch.Tensor:
    if isinstance(scores, torch.Tensor):
        tensor = scores
    else:
        tensor = torch.as_tensor(scores, dtype=torch.float64)
    if tensor.numel() == 0:
        raise LossError(f"{who}: score batch is empty")
    return tensor.reshape(-1)


def perceptual_loss(
    sharp: ImageTensor, generated: ImageTensor, fx: FeatureExtractor
) -> torch.Tensor:
    """Mean squared difference between extractor features of the target and the output."""
    if tuple(sharp.shape) != tuple(generated.shape):
        raise LossError(
            f"perceptual_loss: shape mismatch {tuple(sharp.shape)} vs {tuple(generated.shape)}"
        )
    return F.mse_loss(fx(generated), fx(sharp))


def wasserstein_critic_loss(scores_real: Scores, scores_fake: Scores) -> torch.Tensor:
    real = _as_scores(scores_real, "wasserstein_critic_loss")
    fake = _as_scores(scores_fake, "wasserstein_critic_loss")
    return fake.mean() - real.mean()


def generator_adversarial_loss(scores_fake: Scores) -> torch.Tensor:
    return -_as_scores(scores_fake, "generator_adversarial_loss").mean()


def generator_loss_terms(
    sharp: ImageTensor,
    generated: ImageTensor,
    scores_fake: Scores,
    fx: FeatureExtractor,
    w: LossWeights,
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(weighted total, perceptual term, adversarial term)"""
    perceptual = perceptual_loss(sharp, generated, fx)
    adversarial = generator_adversarial_loss(scores_fake)
    total = w.perceptual_weight * perceptual + w.adversarial_weight * adversarial
    return total, perceptual, adversarial


def combined_generator_loss(
    sharp: ImageTensor,
    generated: ImageTensor,
    scores_fake: Scores,
    fx: FeatureExtractor,
    w: LossWeights,
) -> torch.Tensor:
    return generator_loss_terms(sharp, generated, scores_fake, fx, w)[0]


def gan_value_estimate(scores_real: Scores, scores_fake: Scores) -> float:
    """
    mean(log D(x)) + mean(log(1 - D(G(z)))), natural log.

    Scores are clamped away from the logarithm singularities (real >= eps,
    fake <= 1 - eps, eps = 1e-7), so a perfect critic scores exactly 0.

    Detached: never part of a training graph.

    Raises:
        LossError: If a batch is empty or a score lies outside [0, 1]
    """
    with torch.no_grad():
        real = _as_scores(scores_real, "gan_value_estimate").detach().to(torch.float64)
        fake = _as_scores(scores_fake, "gan_value_estimate").detach().to(torch.float64)
        for label, batch in (("real", real), ("fake", fake)):
            if torch.any(batch < 0) or torch.any(batch > 1) or torch.any(torch.isnan(batch)):
                raise LossError(f"gan_value_estimate: {label} scores must lie in [0, 1]")
        real = real.clamp(min=GAN_VALUE_EPS)
        fake = fake.clamp(max=1 - GAN_VALUE_EPS)
        return float(torch.log(real).mean() + torch.log1p(-fake).mean())

import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from deblur_gan.errors import LossError
from deblur_gan.losses import (
    IdentityExtractor,
    LossWeights,
    RandomConvExtractor,
    combined_generator_loss,
    gan_value_estimate,
    generator_adversarial_loss,
    generator_loss_terms,
    make_extractor,
    perceptual_loss,
    vgg16_layer_names,
    wasserstein_critic_loss,
)

fx = IdentityExtractor()
scores = st.lists(st.floats(0.0, 1.0), min_size=1, max_size=32)


def test_perceptual_loss_examples():
    a = torch.rand(2, 8, 8, 3) * 2 - 1
    assert perceptual_loss(a, a.clone(), fx).item() == 0.0
    assert perceptual_loss(a, a + 0.5, fx).item() == pytest.approx(0.25)
    sharp = torch.tensor([0.0, 1.0]).view(1, 1, 2, 1)
    generated = torch.tensor([1.0, 0.0]).view(1, 1, 2, 1)
    assert perceptual_loss(sharp, generated, fx).item() == 1.0


def test_perceptual_loss_shape_mismatch():
    with pytest.raises(LossError, match="shape mismatch"):
        perceptual_loss(torch.zeros(1, 4, 4, 3), torch.zeros(1, 4, 8, 3), fx)


def test_random_extractor_is_fixed_and_deterministic():
    images = torch.rand(2, 16, 16, 3) * 2 - 1
    a, b = RandomConvExtractor(seed=3), RandomConvExtractor(seed=3)
    assert torch.equal(a(images), b(images))
    assert not torch.equal(a(images), RandomConvExtractor(seed=4)(images))
    assert not any(p.requires_grad for p in a.features.parameters())
    assert perceptual_loss(images, images, a).item() == 0.0


def test_make_extractor():
    assert make_extractor("identity").name == "identity"
    assert make_extractor("random", seed=1).name == "random"
    with pytest.raises(LossError):
        make_extractor("resnet")


def test_vgg16_layer_names_follow_torchvision_indexing():
    names = vgg16_layer_names()
    assert len(names) == 31
    assert names.index("conv3_3") == 14
    assert names[-1] == "pool5"


def test_wasserstein_critic_loss_examples():
    assert wasserstein_critic_loss([1, 1], [0, 0]).item() == -1.0
    assert wasserstein_critic_loss([0.3, 0.6], [0.3, 0.6]).item() == 0.0
    assert wasserstein_critic_loss([0.2, 0.4], [0.9, 0.7]).item() == pytest.approx(0.5)
    with pytest.raises(LossError):
        wasserstein_critic_loss([], [0.5])


def test_generator_adversarial_loss_examples():
    assert generator_adversarial_loss([1]).item() == -1.0
    assert generator_adversarial_loss([0]).item() == 0.0
    assert generator_adversarial_loss([0.25, 0.75]).item() == -0.5
    with pytest.raises(LossError):
        generator_adversarial_loss([])


def test_wasserstein_antisymmetry():
    rng = torch.Generator().manual_seed(0)
    for _ in range(100):
        size = int(torch.randint(1, 32, (1,), generator=rng))
        a = torch.rand(size, generator=rng, dtype=torch.float64)
        b = torch.rand(size, generator=rng, dtype=torch.float64)
        assert wasserstein_critic_loss(a, b).item() == -wasserstein_critic_loss(b, a).item()


@settings(max_examples=50)
@given(real=scores, fake=scores, seed=st.integers(0, 2**16))
def test_wasserstein_losses_ignore_batch_order(real, fake, seed):
    rng = torch.Generator().manual_seed(seed)
    real_t = torch.tensor(real, dtype=torch.float64)
    fake_t = torch.tensor(fake, dtype=torch.float64)
    real_p = real_t[torch.randperm(len(real), generator=rng)]
    fake_p = fake_t[torch.randperm(len(fake), generator=rng)]
    assert wasserstein_critic_loss(real_p, fake_p).item() == pytest.approx(
        wasserstein_critic_loss(real_t, fake_t).item(), abs=1e-12
    )
    assert generator_adversarial_loss(fake_p).item() == pytest.approx(
        generator_adversarial_loss(fake_t).item(), abs=1e-12
    )


def test_combined_loss_examples():
    sharp = torch.zeros(1, 4, 4, 3)
    generated = torch.full((1, 4, 4, 3), 0.5)
    fake = [0.5]
    perceptual = perceptual_loss(sharp, generated, fx).item()
    adversarial = generator_adversarial_loss(fake).item()
    only_p = combined_generator_loss(sharp, generated, fake, fx, LossWeights(1, 0)).item()
    only_a = combined_generator_loss(sharp, generated, fake, fx, LossWeights(0, 1)).item()
    assert only_p == pytest.approx(perceptual)
    assert only_a == pytest.approx(adversarial)
    total = combined_generator_loss(sharp, generated, fake, fx, LossWeights(100, 1)).item()
    assert total == pytest.approx(24.5)


def test_combined_loss_is_linear_in_each_weight():
    sharp = torch.rand(2, 4, 4, 3)
    generated = torch.rand(2, 4, 4, 3)
    fake = torch.tensor([0.3, 0.8])
    full = generator_loss_terms(sharp, generated, fake, fx, LossWeights(100, 1))
    half_p = combined_generator_loss(sharp, generated, fake, fx, LossWeights(50, 1)).item()
    half_a = combined_generator_loss(sharp, generated, fake, fx, LossWeights(100, 0.5)).item()
    total, perceptual, adversarial = (t.item() for t in full)
    assert half_p == pytest.approx(total - 50 * perceptual)
    assert half_a == pytest.approx(total - 0.5 * adversarial)


def test_loss_weights_validation():
    with pytest.raises(LossError):
        LossWeights(0, 0)
    with pytest.raises(LossError):
        LossWeights(-1, 1)


def test_gan_value_estimate_examples():
    assert gan_value_estimate([1, 1], [0, 0]) == 0.0
    assert gan_value_estimate([0.5] * 4, [0.5] * 4) == pytest.approx(-1.386294, abs=1e-6)
    clamped = gan_value_estimate([0.5], [1.0])
    assert math.isfinite(clamped)
    assert clamped == pytest.approx(math.log(0.5) + math.log(1e-7), rel=1e-6)
    with pytest.raises(LossError):
        gan_value_estimate([1.2], [0.5])


@settings(max_examples=50)
@given(real=scores, fake=scores)
def test_gan_value_estimate_is_never_positive(real, fake):
    assert gan_value_estimate(real, fake) <= 0.0


def test_gan_value_estimate_is_detached():
    real = torch.tensor([0.7, 0.9], requires_grad=True)
    fake = torch.tensor([0.2], requires_grad=True)
    value = gan_value_estimate(real, fake)
    assert isinstance(value, float)
    assert real.grad is None and fake.grad is None

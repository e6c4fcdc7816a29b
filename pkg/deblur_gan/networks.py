"""
Trainable generator and discriminator built from ArchitectureSpec tables.

Public forwards take and return channels-last ImageTensors; modules work in
channels-first internally.
"""

import hashlib
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional

import torch
import torch.nn.functional as F
from loguru import logger
from torch import nn

from deblur_gan.architecture import (
    LEAKY_RELU_SLOPE,
    ArchitectureSpec,
    LayerSpec,
    audit_architecture,
)
from deblur_gan.errors import ShapeError
from deblur_gan.utils.image_core import ImageTensor

INIT_STD = 0.02
REFLECT_KERNEL = 7


def _same_padding(size: int, kernel: int, stride: int):
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


class SameConv2d(nn.Module):
    """Convolution with 'same' spatial arithmetic: output size is ceil(input / stride)."""

    def __init__(self, layer: LayerSpec):
        super().__init__()
        self.kernel = layer.K
        self.stride = layer.S
        self.pad_mode = "reflect" if layer.K == REFLECT_KERNEL else "constant"
        self.conv = nn.Conv2d(layer.C_in, layer.C_out, layer.K, stride=layer.S, padding=0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        top, bottom = _same_padding(x.shape[2], self.kernel, self.stride)
        left, right = _same_padding(x.shape[3], self.kernel, self.stride)
        if top or bottom or left or right:
            x = F.pad(x, (left, right, top, bottom), mode=self.pad_mode)
        return self.conv(x)


class UpsampleConv2d(nn.Module):
    """x2 nearest-neighbour resize followed by a stride-1 'same' convolution."""

    def __init__(self, layer: LayerSpec):
        super().__init__()
        self.inner = SameConv2d(layer)

    @property
    def conv(self) -> nn.Conv2d:
        return self.inner.conv

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.inner(F.interpolate(x, scale_factor=2, mode="nearest"))


class TransposedConv2d(nn.Module):
    """x2 transposed convolution with the same weight and bias counts."""

    def __init__(self, layer: LayerSpec):
        super().__init__()
        self.conv = nn.ConvTranspose2d(
            layer.C_in, layer.C_out, layer.K, stride=2,
            padding=(layer.K - 1) // 2, output_padding=1,
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(x)


def _activation(name: str) -> nn.Module:
    if name == "relu":
        return nn.ReLU()
    if name == "leaky_relu":
        return nn.LeakyReLU(LEAKY_RELU_SLOPE)
    if name == "tanh":
        return nn.Tanh()
    if name == "sigmoid":
        return nn.Sigmoid()
    return nn.Identity()


def _layer_block(layer: LayerSpec, spec: ArchitectureSpec) -> nn.Sequential:
    if layer.name in spec.upsample_layers:
        conv = UpsampleConv2d(layer) if spec.upsample_mode == "nearest" else TransposedConv2d(layer)
    else:
        conv = SameConv2d(layer)
    parts: List[nn.Module] = [conv]
    if layer.normalization:
        parts.append(nn.BatchNorm2d(layer.C_out))
    parts.append(_activation(layer.activation))
    return nn.Sequential(*parts)


class ResidualBlock(nn.Module):
    """conv -> norm -> ReLU -> conv -> norm, added to the block input."""

    def __init__(self, body: nn.Sequential):
        super().__init__()
        self.body = body

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.body(x)


class SpecNetwork(nn.Module):
    """Sequential network assembled from a spec, grouping residual pairs into blocks."""

    def __init__(self, spec: ArchitectureSpec):
        super().__init__()
        self.spec = spec
        starts = {start: end for start, end in spec.residual_pairs}
        stages: List[nn.Module] = []
        index = 0
        while index < len(spec.layers):
            if index in starts:
                end = starts[index]
                body = [_layer_block(layer, spec) for layer in spec.layers[index : end + 1]]
                stages.append(ResidualBlock(nn.Sequential(*body)))
                index = end + 1
            else:
                stages.append(_layer_block(spec.layers[index], spec))
                index += 1
        self.stages = nn.Sequential(*stages)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        head = self.stages(x)
        if self.spec.global_skip:
            return (x + head) / 2
        return head


class DiscriminatorNetwork(SpecNetwork):
    """Sigmoid patch map reduced to one score per image by its spatial mean."""

    def patch_map(self, x: torch.Tensor) -> torch.Tensor:
        return self.stages(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.patch_map(x).mean(dim=(1, 2, 3))


@dataclass
class NetworkHandle:
    spec: ArchitectureSpec
    module: nn.Module

    @property
    def parameters(self) -> Dict[str, torch.Tensor]:
        return dict(self.module.named_parameters())

    @property
    def parameter_count(self) -> int:
        return built_parameter_counts(self)["conv"]

    def to(self, device) -> "NetworkHandle":
        self.module.to(device)
        return self


def init_weights(module: nn.Module, std: float = INIT_STD):
    """Conv weights ~ N(0, std), biases 0, normalization scale 1 and shift 0."""
    for sub in module.modules():
        if isinstance(sub, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(sub.weight, 0.0, std)
            if sub.bias is not None:
                nn.init.zeros_(sub.bias)
        elif isinstance(sub, nn.BatchNorm2d):
            nn.init.ones_(sub.weight)
            nn.init.zeros_(sub.bias)
            sub.reset_running_stats()


def build_generator(spec: ArchitectureSpec, seed: Optional[int] = None) -> NetworkHandle:
    if seed is not None:
        torch.manual_seed(seed)
    module = SpecNetwork(spec)
    init_weights(module)
    handle = NetworkHandle(spec=spec, module=module)
    logger.debug(f"Built generator with {handle.parameter_count} convolution parameters")
    return handle


def build_discriminator(spec: ArchitectureSpec, seed: Optional[int] = None) -> NetworkHandle:
    if seed is not None:
        torch.manual_seed(seed)
    module = DiscriminatorNetwork(spec)
    init_weights(module)
    handle = NetworkHandle(spec=spec, module=module)
    logger.debug(f"Built discriminator with {handle.parameter_count} convolution parameters")
    return handle


def built_parameter_counts(net: NetworkHandle) -> Dict[str, int]:
    """
    Count the weights a built network actually holds.

    Returns:
        dict: conv (weights + biases), norm (scale, shift, running mean/variance), total
    """
    conv = 0
    norm = 0
    for sub in net.module.modules():
        if isinstance(sub, (nn.Conv2d, nn.ConvTranspose2d)):
            conv += sum(p.numel() for p in sub.parameters())
        elif isinstance(sub, nn.BatchNorm2d):
            norm += sub.weight.numel() + sub.bias.numel()
            norm += sub.running_mean.numel() + sub.running_var.numel()
    return {"conv": conv, "norm": norm, "total": conv + norm}


def verify_built_network(net: NetworkHandle) -> bool:
    """True when the built weights match the audit totals for the network's spec."""
    report = audit_architecture(net.spec)
    counts = built_parameter_counts(net)
    return counts["conv"] == report.conv_total and counts["norm"] == report.norm_total


def _check_image_batch(t: ImageTensor, multiple: int, who: str):
    if t.dim() != 4:
        raise ShapeError(f"{who} expects a (batch, height, width, 3) tensor, got {tuple(t.shape)}")
    batch, height, width, channels = t.shape
    if batch < 1:
        raise ShapeError(f"{who}: batch must be >= 1, got {batch}")
    if channels != 3:
        raise ShapeError(f"{who}: channels must be 3, got {channels}")
    if height % multiple:
        raise ShapeError(f"{who}: height {height} is not divisible by {multiple}")
    if width % multiple:
        raise ShapeError(f"{who}: width {width} is not divisible by {multiple}")


def generator_forward(net: NetworkHandle, blur: ImageTensor) -> ImageTensor:
    """
    Deblur a channels-last batch. Output is (blur + tanh(head)) / 2, so it stays in [-1, 1].

    Raises:
        ShapeError: If channels are not 3 or height/width are not divisible by 4
    """
    _check_image_batch(blur, 4, "generator")
    out = net.module(blur.permute(0, 3, 1, 2))
    return out.permute(0, 2, 3, 1)


def discriminator_forward(net: NetworkHandle, img: ImageTensor) -> torch.Tensor:
    """
    One score in [0, 1] per image: mean of the sigmoid patch map.

    Raises:
        ShapeError: If channels are not 3 or height/width are not divisible by 16
    """
    _check_image_batch(img, 16, "discriminator")
    return net.module(img.permute(0, 3, 1, 2))


def discriminator_patch_map(net: NetworkHandle, img: ImageTensor) -> torch.Tensor:
    """Unreduced (batch, H/16, W/16, 1) probability map."""
    _check_image_batch(img, 16, "discriminator")
    return net.module.patch_map(img.permute(0, 3, 1, 2)).permute(0, 2, 3, 1)


def parameter_digest(net: NetworkHandle) -> str:
    """Hash of every state tensor (weights and normalization running statistics)."""
    digest = hashlib.sha256()
    for name, tensor in sorted(net.module.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


@contextmanager
def frozen_statistics(net: NetworkHandle) -> Iterator[NetworkHandle]:
    """
    Forwards inside the block still normalize with batch statistics, but the
    running statistics are put back on exit, so a frozen network stays bit-identical.
    """
    saved = {name: buf.detach().clone() for name, buf in net.module.named_buffers()}
    try:
        yield net
    finally:
        with torch.no_grad():
            for name, buf in net.module.named_buffers():
                buf.copy_(saved[name])

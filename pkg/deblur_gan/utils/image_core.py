"""
Image representation, normalization and patch tiling.

Layout conventions:
    PixelImage   numpy uint8 array, (height, width, channels)
    ImageTensor  torch float tensor, (batch, height, width, channels), values in [-1, 1]

Denormalization rounds half up: 127.5 becomes 128.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
import torch
from PIL import Image

from deblur_gan.errors import ImageError, PatchError

# Channels-last float batch in [-1, 1]
ImageTensor = torch.Tensor

VALID_CHANNELS = (1, 3)
# ITU-R BT.601 luma weights
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True, eq=False)
class PixelImage:
    """An 8-bit image, (height, width, channels)."""

    data: np.ndarray

    def __post_init__(self):
        data = self.data
        if not isinstance(data, np.ndarray):
            raise ImageError(f"PixelImage data must be a numpy array, got {type(data).__name__}")
        if data.dtype != np.uint8:
            raise ImageError(f"PixelImage data must be uint8, got {data.dtype}")
        if data.ndim != 3:
            raise ImageError(f"PixelImage data must be (height, width, channels), got {data.shape}")
        if data.shape[2] not in VALID_CHANNELS:
            raise ImageError(f"Unsupported channel count {data.shape[2]}; expected 1 or 3")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.data.shape

    @classmethod
    def from_array(cls, array: np.ndarray) -> "PixelImage":
        """Wrap a (H, W) or (H, W, C) array; values must already be integers in [0, 255]."""
        array = np.asarray(array)
        if array.ndim == 2:
            array = array[:, :, None]
        if array.dtype != np.uint8:
            if np.any(array < 0) or np.any(array > 255) or np.any(array != np.round(array)):
                raise ImageError("Pixel intensities must be integers in [0, 255]")
            array = array.astype(np.uint8)
        return cls(np.ascontiguousarray(array))


@dataclass(frozen=True)
class PatchGrid:
    patch_size: int
    positions: List[Tuple[int, int]]
    source_shape: Tuple[int, int]
    row_offsets: List[int] = field(default_factory=list)
    col_offsets: List[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.positions)


def normalize(img: PixelImage) -> ImageTensor:
    """Map intensities v to v / 127.5 - 1 and add a batch dimension."""
    tensor = torch.from_numpy(img.data.astype(np.float32))
    return (tensor / 127.5 - 1.0).unsqueeze(0)


def denormalize(t: ImageTensor) -> PixelImage:
    """Map values v to round_half_up((v + 1) * 127.5), clamped to [0, 255]."""
    if t.dim() == 4:
        if t.shape[0] != 1:
            raise ImageError(f"denormalize expects a single image, got batch of {t.shape[0]}")
        t = t[0]
    if t.dim() != 3:
        raise ImageError(f"denormalize expects (H, W, C) or (1, H, W, C), got {tuple(t.shape)}")
    values = (t.detach().to(torch.float64).clamp(-1.0, 1.0) + 1.0) * 127.5
    values = torch.floor(values + 0.5).clamp(0, 255)
    return PixelImage(values.to(torch.uint8).cpu().numpy())


def to_luma(img: PixelImage) -> np.ndarray:
    """Float64 luma plane of an RGB image; grayscale images pass through."""
    data = img.data.astype(np.float64)
    if img.channels == 1:
        return data[:, :, 0]
    r, g, b = LUMA_WEIGHTS
    return r * data[:, :, 0] + g * data[:, :, 1] + b * data[:, :, 2]


def _axis_offsets(dim: int, patch: int, stride: int) -> List[int]:
    offsets = list(range(0, dim - patch + 1, stride))
    if offsets[-1] != dim - patch:
        offsets.append(dim - patch)
    return offsets


def plan_patches(height: int, width: int, patch: int = 256, stride: int = 256) -> PatchGrid:
    """
    Cover a height x width image with patch x patch windows.

    Offsets run 0, stride, 2*stride, ... and a final window snaps to the border,
    so every pixel is covered and every window lies inside the image.

    Raises:
        PatchError: If the image is smaller than the patch or the stride is out of range
    """
    if patch < 1:
        raise PatchError(f"Patch size must be positive, got {patch}")
    if patch > height or patch > width:
        raise PatchError(
            f"Image {height}x{width} is smaller than patch {patch}; pad or resize it first"
        )
    if not 1 <= stride <= patch:
        raise PatchError(f"Stride must be in [1, {patch}], got {stride}")

    rows = _axis_offsets(height, patch, stride)
    cols = _axis_offsets(width, patch, stride)
    positions = [(r, c) for r in rows for c in cols]
    return PatchGrid(
        patch_size=patch,
        positions=positions,
        source_shape=(height, width),
        row_offsets=rows,
        col_offsets=cols,
    )


def extract_patches(t: ImageTensor, grid: PatchGrid) -> ImageTensor:
    """Cut the grid's windows out of a (1, H, W, C) tensor, stacked in position order."""
    if t.dim() != 4 or t.shape[0] != 1:
        raise PatchError(f"extract_patches expects a (1, H, W, C) tensor, got {tuple(t.shape)}")
    if tuple(t.shape[1:3]) != tuple(grid.source_shape):
        raise PatchError(
            f"Tensor spatial shape {tuple(t.shape[1:3])} does not match grid {grid.source_shape}"
        )
    p = grid.patch_size
    return torch.cat([t[:, r : r + p, c : c + p, :] for r, c in grid.positions], dim=0)


def assemble_patches(
    patches: Union[ImageTensor, Sequence[ImageTensor]], grid: PatchGrid
) -> ImageTensor:
    """
    Stitch patches back into a (1, H, W, C) image, averaging overlaps uniformly.

    Raises:
        PatchError: If the patch count or patch size does not match the grid
    """
    if not isinstance(patches, torch.Tensor):
        patches = torch.cat([p if p.dim() == 4 else p.unsqueeze(0) for p in patches], dim=0)
    if patches.shape[0] != len(grid.positions):
        raise PatchError(
            f"Got {patches.shape[0]} patches for a grid of {len(grid.positions)} positions"
        )
    p = grid.patch_size
    if tuple(patches.shape[1:3]) != (p, p):
        raise PatchError(f"Patches must be {p}x{p}, got {tuple(patches.shape[1:3])}")

    height, width = grid.source_shape
    channels = patches.shape[3]
    total = torch.zeros((height, width, channels), dtype=patches.dtype, device=patches.device)
    counts = torch.zeros((height, width, 1), dtype=patches.dtype, device=patches.device)
    for patch, (r, c) in zip(patches, grid.positions):
        total[r : r + p, c : c + p, :] += patch
        counts[r : r + p, c : c + p, :] += 1
    return (total / counts).unsqueeze(0)


def random_patch_offset(
    height: int, width: int, patch: int, rng: np.random.Generator
) -> Tuple[int, int]:
    """Uniform random top-left corner of a patch x patch crop."""
    if patch > height or patch > width:
        raise PatchError(
            f"Image {height}x{width} is smaller than patch {patch}; pad or resize it first"
        )
    return int(rng.integers(0, height - patch + 1)), int(rng.integers(0, width - patch + 1))


def read_image(path: Union[str, Path]) -> PixelImage:
    """Read a PNG or JPEG file as 8-bit RGB (grayscale files stay single-channel)."""
    path = Path(path)
    try:
        with Image.open(path) as handle:
            mode = "L" if handle.mode in ("L", "1") else "RGB"
            array = np.asarray(handle.convert(mode))
    except (OSError, ValueError) as e:
        raise ImageError(f"Could not read image {path}: {str(e)}") from e
    return PixelImage.from_array(array)


def write_image(path: Union[str, Path], img: PixelImage) -> Path:
    """Write an image; the format follows the file suffix (PNG or JPEG)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = img.data[:, :, 0] if img.channels == 1 else img.data
    Image.fromarray(data).save(path)
    return path

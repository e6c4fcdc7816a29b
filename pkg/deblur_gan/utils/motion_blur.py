"""
Linear motion blur kernels and their application to 8-bit images.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from deblur_gan.errors import BlurError
from deblur_gan.utils.image_core import PixelImage


@dataclass(frozen=True, eq=False)
class MotionBlurKernel:
    length: int
    angle: float
    taps: np.ndarray

    @property
    def shape(self):
        return self.taps.shape


def make_kernel(length: int, angle: float) -> MotionBlurKernel:
    """
    Rasterize a centred line segment into a unit-mass kernel.

    The segment is sampled at `length` points one pixel apart; each sample is
    splatted bilinearly onto the grid, so integer positions land on a single tap.
    Zero rows and columns are trimmed symmetrically, keeping the kernel centred.

    Args:
        length: Segment length in pixels (>= 1)
        angle: Direction in degrees, counter-clockwise from horizontal, in [0, 180)

    Raises:
        BlurError: If the length is below 1
    """
    if length < 1:
        raise BlurError(f"Kernel length must be >= 1, got {length}")
    angle = float(angle) % 180.0

    half = (length - 1) / 2.0
    radius = int(math.ceil(half)) + 1
    size = 2 * radius + 1
    grid = np.zeros((size, size), dtype=np.float64)

    theta = math.radians(angle)
    # rounding keeps cos(90) and friends from leaving 1e-17 tails
    xs = np.round(np.linspace(-half, half, length) * math.cos(theta), 12)
    ys = np.round(-np.linspace(-half, half, length) * math.sin(theta), 12)
    for x, y in zip(xs, ys):
        col, row = x + radius, y + radius
        c0, r0 = int(math.floor(col)), int(math.floor(row))
        fc, fr = col - c0, row - r0
        for dr, wr in ((0, 1.0 - fr), (1, fr)):
            for dc, wc in ((0, 1.0 - fc), (1, fc)):
                if wr * wc > 0.0:
                    grid[r0 + dr, c0 + dc] += wr * wc

    rows = np.flatnonzero(grid.any(axis=1))
    cols = np.flatnonzero(grid.any(axis=0))
    r_extent = max(radius - rows[0], rows[-1] - radius)
    c_extent = max(radius - cols[0], cols[-1] - radius)
    taps = grid[
        radius - r_extent : radius + r_extent + 1,
        radius - c_extent : radius + c_extent + 1,
    ]
    taps = taps / taps.sum()
    return MotionBlurKernel(length=length, angle=angle, taps=taps)


def apply_blur(img: PixelImage, k: MotionBlurKernel) -> PixelImage:
    """
    Convolve each channel with the kernel (reflect boundary), rounding half up to 8 bits.

    Raises:
        BlurError: If the kernel does not fit inside the image
    """
    kh, kw = k.taps.shape
    if kh > img.height or kw > img.width:
        raise BlurError(
            f"Kernel {kh}x{kw} is larger than image {img.height}x{img.width}"
        )
    data = img.data.astype(np.float64)
    out = np.empty_like(data)
    for ch in range(img.channels):
        out[:, :, ch] = ndimage.convolve(data[:, :, ch], k.taps, mode="reflect")
    out = np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)
    return PixelImage(out)

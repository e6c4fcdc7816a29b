"""
PSNR and SSIM on 8-bit images, and max/min/mean aggregate reports.

SSIM uses an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03 and
C3 = C2 / 2, averaged over the windows that fit fully inside the image.
RGB images are scored on their ITU-R 601 luma plane unless channel_mode="mean".
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Tuple, TypedDict

import numpy as np
from scipy import ndimage

from deblur_gan.errors import MetricError
from deblur_gan.utils.image_core import PixelImage, to_luma

MAX_PIXEL = 255.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_C1 = (SSIM_K1 * MAX_PIXEL) ** 2
SSIM_C2 = (SSIM_K2 * MAX_PIXEL) ** 2
CHANNEL_MODES = ("luma", "mean")


class ImageScore(TypedDict):
    id: str
    psnr: float
    ssim: float


class MetricSummary(TypedDict):
    max: float
    min: float
    mean: float


def _check_pair(a: PixelImage, b: PixelImage, who: str):
    if a.shape != b.shape:
        raise MetricError(f"{who}: shape mismatch {a.shape} vs {b.shape}")


def psnr(a: PixelImage, b: PixelImage) -> float:
    """10 * log10(255^2 / MSE) over all pixels and channels; identical images give inf."""
    _check_pair(a, b, "psnr")
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(MAX_PIXEL**2 / mse)


def _gaussian_window() -> np.ndarray:
    radius = SSIM_WINDOW // 2
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2 * SSIM_SIGMA**2))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_plane(x: np.ndarray, y: np.ndarray) -> float:
    window = _gaussian_window()
    crop = SSIM_WINDOW // 2

    def local_mean(plane: np.ndarray) -> np.ndarray:
        filtered = ndimage.correlate(plane, window, mode="reflect")
        return filtered[crop:-crop, crop:-crop]

    mu_x, mu_y = local_mean(x), local_mean(y)
    var_x = local_mean(x * x) - mu_x**2
    var_y = local_mean(y * y) - mu_y**2
    cov = local_mean(x * y) - mu_x * mu_y

    numerator = (2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)
    denominator = (mu_x**2 + mu_y**2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return float(np.mean(numerator / denominator))


def ssim(a: PixelImage, b: PixelImage, channel_mode: str = "luma") -> float:
    """
    Structural similarity in [-1, 1].

    Raises:
        MetricError: On shape mismatch, images smaller than the window, or an unknown mode
    """
    _check_pair(a, b, "ssim")
    if min(a.height, a.width) < SSIM_WINDOW:
        raise MetricError(
            f"ssim: image {a.height}x{a.width} is smaller than the "
            f"{SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    if channel_mode not in CHANNEL_MODES:
        raise MetricError(f"ssim: unknown channel mode {channel_mode!r}; expected {CHANNEL_MODES}")
    if channel_mode == "luma" or a.channels == 1:
        return _ssim_plane(to_luma(a), to_luma(b))
    planes = [
        _ssim_plane(a.data[:, :, ch].astype(np.float64), b.data[:, :, ch].astype(np.float64))
        for ch in range(a.channels)
    ]
    return float(np.mean(planes))


def _summary(values: List[float]) -> MetricSummary:
    return MetricSummary(max=max(values), min=min(values), mean=math.fsum(values) / len(values))


@dataclass
class MetricReport:
    per_image: List[ImageScore]
    aggregate: Dict[str, MetricSummary] = field(default_factory=dict)
    infinite_psnr_count: int = 0

    @classmethod
    def from_scores(cls, scores: Iterable[ImageScore]) -> "MetricReport":
        """
        Aggregate per-image scores. Infinite PSNR entries are kept verbatim (so they
        show up as the max) but are left out of the mean and counted separately.
        """
        per_image = list(scores)
        if not per_image:
            raise MetricError("Cannot build a metric report from zero images")
        psnrs = [s["psnr"] for s in per_image]
        finite = [v for v in psnrs if math.isfinite(v)]
        infinite = len(psnrs) - len(finite)
        psnr_summary = MetricSummary(
            max=max(psnrs),
            min=min(psnrs),
            mean=math.fsum(finite) / len(finite) if finite else math.inf,
        )
        return cls(
            per_image=per_image,
            aggregate={
                "PSNR": psnr_summary,
                "SSIM": _summary([s["ssim"] for s in per_image]),
            },
            infinite_psnr_count=infinite,
        )

    def to_table(self) -> str:
        """Plain-text report with columns metric, max, min, mean."""
        lines = [f"{'metric':<8}{'max':>10}{'min':>10}{'mean':>10}"]
        for metric, fmt in (("PSNR", ".2f"), ("SSIM", ".4f")):
            s = self.aggregate[metric]
            lines.append(f"{metric:<8}{s['max']:>10{fmt}}{s['min']:>10{fmt}}{s['mean']:>10{fmt}}")
        if self.infinite_psnr_count:
            lines.append(
                f"note: {self.infinite_psnr_count} image(s) with infinite PSNR "
                "excluded from the mean"
            )
        return "\n".join(lines)

    def to_index(self) -> str:
        """One id<TAB>psnr<TAB>ssim line per image."""
        lines = (f"{s['id']}\t{s['psnr']:.6f}\t{s['ssim']:.6f}\n" for s in self.per_image)
        return "".join(lines)


def score_pairs(
    pairs: Iterable[Tuple[str, Callable[[], Tuple[PixelImage, PixelImage]]]],
    channel_mode: str = "luma",
    max_workers: Optional[int] = None,
) -> MetricReport:
    """
    Score (id, loader) pairs on a thread pool; loader returns (restored, sharp).

    Results keep input order, so the report does not depend on scheduling.
    """

    def score(item) -> ImageScore:
        image_id, load = item
        restored, sharp = load()
        return ImageScore(
            id=image_id, psnr=psnr(restored, sharp), ssim=ssim(restored, sharp, channel_mode)
        )

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return MetricReport.from_scores(pool.map(score, pairs))

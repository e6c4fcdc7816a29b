from pathlib import Path
from typing import List, Optional, Tuple, Union

import torch
from loguru import logger

from deblur_gan.errors import ImageError
from deblur_gan.metrics import MetricReport, psnr, score_pairs, ssim
from deblur_gan.networks import NetworkHandle, generator_forward
from deblur_gan.services.dataset_service import DatasetManifest, ManifestEntry, load_pair
from deblur_gan.services.training_service import Checkpoint, load_checkpoint, load_generator
from deblur_gan.utils.image_core import (
    PixelImage,
    assemble_patches,
    denormalize,
    extract_patches,
    normalize,
    plan_patches,
    read_image,
    write_image,
)

DEFAULT_PATCH = 256
DEFAULT_STRIDE = 128
# patches pushed through the generator at once
INFERENCE_BATCH = 8
# the generator needs spatial sizes divisible by this
SIZE_MULTIPLE = 4


class EvaluationService:
    def __init__(
        self,
        generator: Optional[NetworkHandle] = None,
        patch: int = DEFAULT_PATCH,
        stride: int = DEFAULT_STRIDE,
        ssim_channels: str = "luma",
        max_workers: Optional[int] = None,
        device: str = "cpu",
    ):
        """
        Tiled inference and dataset scoring.

        Args:
            generator: Trained generator; None scores the blurred input itself
            patch: Inference tile size
            stride: Tile stride (patch // 2 gives 50% overlap)
            ssim_channels: 'luma' or 'mean'
            max_workers: Scoring threads (defaults to 1 with a generator, pool default otherwise)
            device: Torch device for inference
        """
        self.generator = generator
        self.patch = patch
        self.stride = stride
        self.ssim_channels = ssim_channels
        self.device = torch.device(device)
        if max_workers is None and generator is not None:
            max_workers = 1
        self.max_workers = max_workers
        if generator is not None:
            generator.module.eval()
            generator.to(self.device)

    @property
    def is_identity(self) -> bool:
        return self.generator is None

    def tile_size(self, height: int, width: int) -> int:
        """The configured patch, clipped to the image and floored to a multiple of 4."""
        size = min(self.patch, height, width)
        size -= size % SIZE_MULTIPLE
        if size < SIZE_MULTIPLE:
            raise ImageError(f"Image {height}x{width} is too small to deblur")
        return size

    def _run_generator(self, patches: torch.Tensor) -> torch.Tensor:
        outputs = []
        with torch.no_grad():
            for start in range(0, patches.shape[0], INFERENCE_BATCH):
                chunk = patches[start : start + INFERENCE_BATCH].to(self.device)
                outputs.append(generator_forward(self.generator, chunk).cpu())
        return torch.cat(outputs, dim=0)

    def deblur_image(self, img: PixelImage) -> PixelImage:
        """
        Deblur a full frame by overlapping tiles averaged back together.

        Raises:
            ImageError: If the image is not RGB or is too small to tile
        """
        if self.is_identity:
            return img
        if img.channels != 3:
            raise ImageError(f"The generator needs RGB input, got {img.channels} channel(s)")
        size = self.tile_size(img.height, img.width)
        grid = plan_patches(img.height, img.width, size, min(self.stride, size))
        tensor = normalize(img)
        restored = assemble_patches(self._run_generator(extract_patches(tensor, grid)), grid)
        logger.debug(f"Deblurred {img.height}x{img.width} image with {len(grid)} tiles of {size}")
        return denormalize(restored)

    def deblur_file(self, source: Union[str, Path], target: Union[str, Path]) -> Path:
        return write_image(target, self.deblur_image(read_image(source)))

    def _patch_scores(self, entry: ManifestEntry) -> List[Tuple[str, PixelImage, PixelImage]]:
        """Score units for patch-wise evaluation: each non-overlapping tile on its own."""
        sample = load_pair(entry)
        size = self.tile_size(sample.blur.height, sample.blur.width)
        grid = plan_patches(sample.blur.height, sample.blur.width, size, size)
        blur_tiles = extract_patches(normalize(sample.blur), grid)
        sharp_tiles = extract_patches(normalize(sample.sharp), grid)
        restored_tiles = blur_tiles if self.is_identity else self._run_generator(blur_tiles)
        return [
            (
                f"{entry.id}@{r},{c}",
                denormalize(restored_tiles[i : i + 1]),
                denormalize(sharp_tiles[i : i + 1]),
            )
            for i, (r, c) in enumerate(grid.positions)
        ]

    def evaluate_dataset(self, manifest: DatasetManifest, patchwise: bool = False) -> MetricReport:
        """
        Deblur every blur image, score it against its sharp image, and aggregate.

        Full frames go through tiled inference; patchwise=True scores each
        non-overlapping tile separately instead.
        """
        if patchwise:
            units = []
            for entry in manifest.entries:
                units.extend(
                    (uid, (lambda r=restored, s=sharp: (r, s)))
                    for uid, restored, sharp in self._patch_scores(entry)
                )
        else:

            def loader(entry: ManifestEntry):
                def load():
                    sample = load_pair(entry)
                    return self.deblur_image(sample.blur), sample.sharp

                return load

            units = [(entry.id, loader(entry)) for entry in manifest.entries]

        report = score_pairs(units, channel_mode=self.ssim_channels, max_workers=self.max_workers)
        mode = "identity baseline" if self.is_identity else "generator"
        logger.info(
            f"Evaluated {len(report.per_image)} item(s) ({mode}): "
            f"PSNR mean {report.aggregate['PSNR']['mean']:.2f}, "
            f"SSIM mean {report.aggregate['SSIM']['mean']:.4f}"
        )
        return report


def evaluate_dataset(
    checkpoint: Optional[Union[Checkpoint, str, Path]],
    manifest: DatasetManifest,
    **options,
) -> MetricReport:
    """
    Score a checkpoint's generator on a manifest; checkpoint=None gives the
    identity baseline PSNR(blur, sharp).
    """
    patchwise = options.pop("patchwise", False)
    generator = None
    if checkpoint is not None:
        if not isinstance(checkpoint, Checkpoint):
            checkpoint = load_checkpoint(checkpoint)
        generator = load_generator(checkpoint, device=options.get("device", "cpu"))
    return EvaluationService(generator, **options).evaluate_dataset(manifest, patchwise=patchwise)


__all__ = ["EvaluationService", "evaluate_dataset", "psnr", "ssim"]

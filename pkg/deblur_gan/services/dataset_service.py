"""
Paired blur/sharp datasets: manifest scanning, pair loading, synthetic data and
the random-crop patch dataset the trainer consumes.

On-disk layout: <root>/<split>/<sequence>/{blur,sharp}/<frame>.png
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from loguru import logger
from PIL import Image, ImageDraw
from torch.utils.data import DataLoader, Dataset

from deblur_gan.errors import DatasetError
from deblur_gan.utils.image_core import (
    PixelImage,
    normalize,
    random_patch_offset,
    read_image,
    write_image,
)
from deblur_gan.utils.motion_blur import apply_blur, make_kernel
from deblur_gan.utils.seeding import epoch_rng

SPLITS = ("train", "test")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

SYNTH_MIN_SIZE = 32
SYNTH_KERNEL_LENGTHS = (3, 15)
SYNTH_SHAPES_PER_IMAGE = (3, 7)


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    blur_path: Path
    sharp_path: Path


@dataclass(frozen=True, eq=False)
class PairedSample:
    blur: PixelImage
    sharp: PixelImage
    id: str

    def __post_init__(self):
        if self.blur.shape != self.sharp.shape:
            raise DatasetError(
                f"Pair {self.id}: blur {self.blur.shape} and sharp {self.sharp.shape} differ"
            )


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    split: str
    entries: Tuple[ManifestEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def to_index(self) -> str:
        """One id<TAB>blur_path<TAB>sharp_path line per entry."""
        return "".join(f"{e.id}\t{e.blur_path}\t{e.sharp_path}\n" for e in self.entries)

    def subset(self, ids: Sequence[str]) -> "DatasetManifest":
        wanted = set(ids)
        return DatasetManifest(
            self.root, self.split, tuple(e for e in self.entries if e.id in wanted)
        )


def _image_files(directory: Path) -> Dict[str, Path]:
    if not directory.is_dir():
        return {}
    return {
        p.name: p
        for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    }


def scan_manifest(root: Union[str, Path], split: str = "train") -> DatasetManifest:
    """
    Pair every <split>/<sequence>/blur/<name> with <split>/<sequence>/sharp/<name>.

    Entries are ordered by (sequence, filename); ids are "<sequence>/<stem>".

    Raises:
        DatasetError: If the root is missing, any file is unpaired, or no pairs exist
    """
    root = Path(root)
    if split not in SPLITS:
        raise DatasetError(f"Unknown split {split!r}; expected one of {SPLITS}")
    if not root.is_dir():
        raise DatasetError(f"Dataset root does not exist: {root}")
    split_dir = root / split

    entries: List[ManifestEntry] = []
    orphans: List[str] = []
    sequences = sorted(p for p in split_dir.iterdir() if p.is_dir()) if split_dir.is_dir() else []
    for sequence in sequences:
        blur_files = _image_files(sequence / "blur")
        sharp_files = _image_files(sequence / "sharp")
        for name in sorted(set(blur_files) ^ set(sharp_files)):
            orphans.append(str(blur_files.get(name) or sharp_files.get(name)))
        for name in sorted(set(blur_files) & set(sharp_files)):
            entries.append(
                ManifestEntry(
                    id=f"{sequence.name}/{Path(name).stem}",
                    blur_path=blur_files[name],
                    sharp_path=sharp_files[name],
                )
            )

    if orphans:
        raise DatasetError(
            f"{len(orphans)} file(s) without a counterpart under {split_dir}: {', '.join(orphans)}",
            orphans,
        )
    if not entries:
        raise DatasetError(f"No blur/sharp pairs found under {split_dir}")
    logger.info(f"Scanned {len(entries)} pairs from {split_dir}")
    return DatasetManifest(root=root, split=split, entries=tuple(entries))


def load_pair(entry: ManifestEntry) -> PairedSample:
    return PairedSample(
        blur=read_image(entry.blur_path), sharp=read_image(entry.sharp_path), id=entry.id
    )


def _render_shapes(size: int, rng: np.random.Generator) -> PixelImage:
    background = tuple(int(v) for v in rng.integers(0, 256, size=3))
    image = Image.new("RGB", (size, size), background)
    draw = ImageDraw.Draw(image)
    for _ in range(int(rng.integers(SYNTH_SHAPES_PER_IMAGE[0], SYNTH_SHAPES_PER_IMAGE[1] + 1))):
        kind = int(rng.integers(0, 3))
        x0, y0 = (int(v) for v in rng.integers(0, size - size // 8, size=2))
        w, h = (int(v) for v in rng.integers(size // 8, size // 2 + 1, size=2))
        box = (x0, y0, min(size - 1, x0 + w), min(size - 1, y0 + h))
        color = tuple(int(v) for v in rng.integers(0, 256, size=3))
        if kind == 0:
            draw.rectangle(box, fill=color)
        elif kind == 1:
            draw.ellipse(box, fill=color)
        else:
            apex = ((box[0] + box[2]) // 2, box[1])
            draw.polygon([(box[0], box[3]), apex, (box[2], box[3])], fill=color)
    return PixelImage.from_array(np.asarray(image))


def make_synthetic_dataset(
    n: int,
    size: int,
    seed: int,
    out: Union[str, Path],
    split: str = "train",
) -> DatasetManifest:
    """
    Write n seeded shape renders and their motion-blurred copies in the scan layout.

    Kernel lengths are drawn from [3, 15], angles from [0, 180). The same seed
    reproduces byte-identical files; existing files are overwritten.

    Raises:
        DatasetError: If n < 1, size < 32, or the output directory is unwritable
    """
    if n < 1:
        raise DatasetError(f"n must be >= 1, got {n}")
    if size < SYNTH_MIN_SIZE:
        raise DatasetError(f"size must be >= {SYNTH_MIN_SIZE}, got {size}")
    if split not in SPLITS:
        raise DatasetError(f"Unknown split {split!r}; expected one of {SPLITS}")

    out = Path(out)
    sequence = out / split / "synthetic"
    rng = np.random.default_rng(seed)
    try:
        for directory in (sequence / "blur", sequence / "sharp"):
            directory.mkdir(parents=True, exist_ok=True)
            for stale in _image_files(directory).values():
                stale.unlink()
        for index in range(n):
            sharp = _render_shapes(size, rng)
            length = int(rng.integers(SYNTH_KERNEL_LENGTHS[0], SYNTH_KERNEL_LENGTHS[1] + 1))
            angle = float(rng.uniform(0.0, 180.0))
            blur = apply_blur(sharp, make_kernel(length, angle))
            name = f"{index:06d}.png"
            write_image(sequence / "sharp" / name, sharp)
            write_image(sequence / "blur" / name, blur)
    except OSError as e:
        raise DatasetError(f"Could not write synthetic dataset to {out}: {str(e)}") from e

    logger.info(f"Wrote {n} synthetic {size}px pairs to {sequence} (seed {seed})")
    return scan_manifest(out, split)


class PairedPatchDataset(Dataset):
    """
    One random patch per pair per epoch, as normalized (blur, sharp) tensors.

    Crop positions come from a generator seeded by (seed, epoch), so the crop
    sequence does not depend on loader workers or on where a run was resumed.
    """

    def __init__(self, manifest: DatasetManifest, patch: int, seed: int = 0):
        self.manifest = manifest
        self.patch = patch
        self.seed = seed
        self.offsets: List[Tuple[int, int]] = []
        self._shapes: Dict[int, Tuple[int, int]] = {}
        self.set_epoch(0)

    def _shape(self, index: int) -> Tuple[int, int]:
        if index not in self._shapes:
            with Image.open(self.manifest.entries[index].blur_path) as handle:
                width, height = handle.size
            self._shapes[index] = (height, width)
        return self._shapes[index]

    def set_epoch(self, epoch: int):
        rng = epoch_rng(self.seed, epoch)
        self.offsets = [
            random_patch_offset(*self._shape(i), self.patch, rng) for i in range(len(self.manifest))
        ]

    def __len__(self) -> int:
        return len(self.manifest)

    def __getitem__(self, index: int) -> Dict[str, torch.Tensor]:
        sample = load_pair(self.manifest.entries[index])
        row, col = self.offsets[index]
        p = self.patch
        blur = normalize(sample.blur)[0, row : row + p, col : col + p, :]
        sharp = normalize(sample.sharp)[0, row : row + p, col : col + p, :]
        return {"blur": blur, "sharp": sharp, "index": index}


def make_loader(
    dataset: PairedPatchDataset,
    batch_size: int,
    epoch: int,
    shuffle: bool = True,
    num_workers: int = 0,
    prefetch_factor: int = 2,
) -> DataLoader:
    """
    Batches for one epoch. Order is a seeded permutation; workers prefetch ahead
    through a bounded queue of prefetch_factor batches each.
    """
    dataset.set_epoch(epoch)
    order: Optional[torch.Generator] = None
    if shuffle:
        order_seed = int(epoch_rng(dataset.seed, epoch, stream=1).integers(2**31))
        order = torch.Generator().manual_seed(order_seed)
    kwargs = {}
    if num_workers > 0:
        kwargs["prefetch_factor"] = prefetch_factor
    return DataLoader(
        dataset,
        batch_size=batch_size,
        shuffle=shuffle,
        generator=order,
        num_workers=num_workers,
        drop_last=False,
        **kwargs,
    )

import math

import numpy as np
import pytest
import torch

from deblur_gan.errors import DatasetError
from deblur_gan.metrics import psnr
from deblur_gan.services.dataset_service import (
    PairedPatchDataset,
    load_pair,
    make_loader,
    make_synthetic_dataset,
    scan_manifest,
)
from deblur_gan.utils.image_core import PixelImage, write_image


def _pixel(value: int) -> PixelImage:
    return PixelImage(np.full((8, 8, 3), value, dtype=np.uint8))


def _write_pair(root, split, sequence, name, blur=True, sharp=True):
    base = root / split / sequence
    if blur:
        write_image(base / "blur" / name, _pixel(10))
    if sharp:
        write_image(base / "sharp" / name, _pixel(20))


def test_scan_pairs_by_filename_in_order(tmp_path):
    _write_pair(tmp_path, "train", "seq_b", "0002.png")
    _write_pair(tmp_path, "train", "seq_a", "0010.png")
    _write_pair(tmp_path, "train", "seq_a", "0001.png")
    manifest = scan_manifest(tmp_path, "train")
    assert [e.id for e in manifest.entries] == ["seq_a/0001", "seq_a/0010", "seq_b/0002"]
    assert len(manifest) == 3
    first = manifest.entries[0]
    assert manifest.to_index().splitlines()[0] == (
        f"seq_a/0001\t{first.blur_path}\t{first.sharp_path}"
    )


def test_scan_reports_orphans(tmp_path):
    _write_pair(tmp_path, "train", "seq", "0001.png")
    _write_pair(tmp_path, "train", "seq", "0002.png", sharp=False)
    with pytest.raises(DatasetError, match="0002.png") as excinfo:
        scan_manifest(tmp_path, "train")
    assert len(excinfo.value.orphans) == 1


def test_scan_empty_and_missing_roots(tmp_path):
    (tmp_path / "train").mkdir()
    with pytest.raises(DatasetError, match="No blur/sharp pairs"):
        scan_manifest(tmp_path, "train")
    with pytest.raises(DatasetError, match="does not exist"):
        scan_manifest(tmp_path / "missing", "train")
    with pytest.raises(DatasetError, match="Unknown split"):
        scan_manifest(tmp_path, "validation")


def test_synthetic_dataset_is_byte_identical_per_seed(tmp_path):
    first = make_synthetic_dataset(8, 64, 7, tmp_path / "a")
    second = make_synthetic_dataset(8, 64, 7, tmp_path / "b")
    assert [e.id for e in first.entries] == [e.id for e in second.entries]
    for a, b in zip(first.entries, second.entries):
        assert a.blur_path.read_bytes() == b.blur_path.read_bytes()
        assert a.sharp_path.read_bytes() == b.sharp_path.read_bytes()


def test_synthetic_rerun_overwrites_in_place(tmp_path):
    make_synthetic_dataset(5, 32, 1, tmp_path)
    manifest = make_synthetic_dataset(2, 32, 1, tmp_path)
    assert len(manifest) == 2


def test_synthetic_single_pair(tmp_path):
    manifest = make_synthetic_dataset(1, 32, 0, tmp_path, split="test")
    assert len(manifest) == 1
    assert manifest.split == "test"


def test_synthetic_pairs_are_blurred(synthetic_root):
    for entry in scan_manifest(synthetic_root, "train").entries:
        sample = load_pair(entry)
        assert sample.blur.shape == sample.sharp.shape == (64, 64, 3)
        score = psnr(sample.blur, sample.sharp)
        assert math.isfinite(score)
        assert not np.array_equal(sample.blur.data, sample.sharp.data)


def test_synthetic_preconditions(tmp_path):
    with pytest.raises(DatasetError):
        make_synthetic_dataset(0, 64, 0, tmp_path)
    with pytest.raises(DatasetError, match="size"):
        make_synthetic_dataset(1, 16, 0, tmp_path)


def test_patch_dataset_crops_are_seeded_per_epoch(synthetic_root):
    manifest = scan_manifest(synthetic_root, "train")
    a = PairedPatchDataset(manifest, 32, seed=3)
    b = PairedPatchDataset(manifest, 32, seed=3)
    a.set_epoch(2)
    b.set_epoch(2)
    assert a.offsets == b.offsets
    item = a[0]
    assert tuple(item["blur"].shape) == tuple(item["sharp"].shape) == (32, 32, 3)
    assert item["blur"].min() >= -1 and item["blur"].max() <= 1
    b.set_epoch(3)
    assert a.offsets != b.offsets


def test_loader_order_is_reproducible(synthetic_root):
    manifest = scan_manifest(synthetic_root, "train")

    def order(epoch):
        dataset = PairedPatchDataset(manifest, 32, seed=0)
        return torch.cat([batch["index"] for batch in make_loader(dataset, 3, epoch)]).tolist()

    assert order(0) == order(0)
    assert sorted(order(1)) == list(range(8))
    batches = list(make_loader(PairedPatchDataset(manifest, 32), 3, 0, shuffle=False))
    assert [len(b["index"]) for b in batches] == [3, 3, 2]

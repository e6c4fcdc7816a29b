import math

import numpy as np
import pytest

from deblur_gan.architecture import generator_spec
from deblur_gan.errors import ImageError
from deblur_gan.metrics import psnr, ssim
from deblur_gan.networks import build_generator
from deblur_gan.services.dataset_service import load_pair, scan_manifest
from deblur_gan.services.evaluation_service import EvaluationService, evaluate_dataset
from deblur_gan.services.training_service import TrainingService, save_checkpoint
from deblur_gan.utils.image_core import PixelImage, read_image, write_image


@pytest.fixture
def tiny_generator():
    return build_generator(generator_spec(width_divisor=16), seed=0)


def test_identity_baseline_scores_blur_against_sharp(synthetic_root):
    manifest = scan_manifest(synthetic_root, "test")
    report = evaluate_dataset(None, manifest)
    assert [s["id"] for s in report.per_image] == [e.id for e in manifest.entries]
    for score, entry in zip(report.per_image, manifest.entries):
        sample = load_pair(entry)
        assert score["psnr"] == psnr(sample.blur, sample.sharp)
        assert score["ssim"] == ssim(sample.blur, sample.sharp)


def test_single_pair_aggregate_collapses(synthetic_root):
    manifest = scan_manifest(synthetic_root, "test")
    report = EvaluationService().evaluate_dataset(manifest.subset([manifest.entries[0].id]))
    for metric in ("PSNR", "SSIM"):
        summary = report.aggregate[metric]
        assert summary["max"] == summary["min"] == summary["mean"]


def test_patchwise_scores_each_tile(synthetic_root):
    manifest = scan_manifest(synthetic_root, "test")
    report = EvaluationService(patch=32).evaluate_dataset(manifest, patchwise=True)
    assert len(report.per_image) == 4 * len(manifest)
    assert all("@" in s["id"] for s in report.per_image)
    assert report.per_image[0]["id"] == f"{manifest.entries[0].id}@0,0"


def test_tile_size_clips_to_image():
    service = EvaluationService(patch=256)
    assert service.tile_size(720, 1280) == 256
    assert service.tile_size(64, 100) == 64
    assert service.tile_size(30, 50) == 28
    with pytest.raises(ImageError):
        service.tile_size(3, 50)


def test_deblur_keeps_shape_on_odd_sizes(tiny_generator):
    rng = np.random.default_rng(0)
    img = PixelImage(rng.integers(0, 256, size=(70, 90, 3), dtype=np.uint8))
    out = EvaluationService(tiny_generator, patch=32, stride=16).deblur_image(img)
    assert out.shape == img.shape
    assert out.data.dtype == np.uint8


@pytest.mark.slow
def test_deblur_full_hd_frame(tiny_generator):
    img = PixelImage(np.full((720, 1280, 3), 128, dtype=np.uint8))
    out = EvaluationService(tiny_generator).deblur_image(img)
    assert out.shape == (720, 1280, 3)


def test_deblur_rejects_grayscale(tiny_generator):
    gray = PixelImage(np.zeros((32, 32, 1), dtype=np.uint8))
    with pytest.raises(ImageError, match="RGB"):
        EvaluationService(tiny_generator).deblur_image(gray)


def test_identity_deblur_file_copies_pixels(synthetic_root, tmp_path):
    entry = scan_manifest(synthetic_root, "test").entries[0]
    target = EvaluationService().deblur_file(entry.blur_path, tmp_path / "out.png")
    assert np.array_equal(read_image(target).data, read_image(entry.blur_path).data)


def test_checkpoint_generator_evaluates_finite(synthetic_root, tiny_config, tmp_path):
    path = save_checkpoint(TrainingService(tiny_config).checkpoint(), tmp_path / "c.ckpt")
    manifest = scan_manifest(synthetic_root, "test")
    report = evaluate_dataset(path, manifest, patch=32, stride=16, ssim_channels="mean")
    assert len(report.per_image) == len(manifest)
    assert all(math.isfinite(s["psnr"]) for s in report.per_image)


def test_identical_pair_reports_infinite_psnr(tmp_path):
    img = PixelImage(np.full((32, 32, 3), 90, dtype=np.uint8))
    for kind in ("blur", "sharp"):
        write_image(tmp_path / "test" / "seq" / kind / "0001.png", img)
    report = evaluate_dataset(None, scan_manifest(tmp_path, "test"))
    assert report.infinite_psnr_count == 1
    assert report.per_image[0]["ssim"] == pytest.approx(1.0)

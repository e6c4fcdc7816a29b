import math

import numpy as np
import pytest
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

from deblur_gan.errors import MetricError
from deblur_gan.metrics import ImageScore, MetricReport, psnr, score_pairs, ssim
from deblur_gan.utils.image_core import PixelImage, to_luma


def _constant(value: int, shape=(16, 16, 3)) -> PixelImage:
    return PixelImage(np.full(shape, value, dtype=np.uint8))


def _random_pair(seed: int, shape=(32, 40, 3)):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 256, size=shape, dtype=np.uint8)
    noise = rng.integers(-40, 41, size=shape)
    b = np.clip(a.astype(int) + noise, 0, 255).astype(np.uint8)
    return PixelImage(a), PixelImage(b)


def test_psnr_closed_forms():
    a = _constant(100)
    assert psnr(a, a) == math.inf
    assert psnr(a, _constant(101)) == pytest.approx(48.1308, abs=1e-4)
    assert psnr(_constant(0), _constant(255)) == 0.0


def test_ssim_closed_forms():
    a, _ = _random_pair(0)
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert ssim(_constant(0), _constant(255)) == pytest.approx(1.000e-4, abs=1e-6)


def test_metrics_reject_mismatched_or_small_images():
    with pytest.raises(MetricError):
        psnr(_constant(0), _constant(0, (16, 15, 3)))
    with pytest.raises(MetricError, match="window"):
        ssim(_constant(0, (10, 16, 3)), _constant(0, (10, 16, 3)))
    with pytest.raises(MetricError):
        ssim(_constant(0), _constant(0), channel_mode="max")


@pytest.mark.parametrize("seed", range(20))
def test_metrics_match_reference_implementation(seed):
    a, b = _random_pair(seed)
    reference_psnr = peak_signal_noise_ratio(a.data, b.data, data_range=255)
    assert psnr(a, b) == pytest.approx(reference_psnr, rel=1e-6)
    reference = structural_similarity(
        to_luma(a),
        to_luma(b),
        gaussian_weights=True,
        sigma=1.5,
        use_sample_covariance=False,
        data_range=255,
    )
    assert ssim(a, b) == pytest.approx(reference, abs=1e-4)


def test_mean_channel_mode_matches_reference():
    a, b = _random_pair(99)
    reference = np.mean(
        [
            structural_similarity(
                a.data[:, :, ch].astype(np.float64),
                b.data[:, :, ch].astype(np.float64),
                gaussian_weights=True,
                sigma=1.5,
                use_sample_covariance=False,
                data_range=255,
            )
            for ch in range(3)
        ]
    )
    assert ssim(a, b, channel_mode="mean") == pytest.approx(reference, abs=1e-4)


def test_metrics_are_symmetric():
    for seed in range(5):
        a, b = _random_pair(seed)
        assert psnr(a, b) == psnr(b, a)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
        assert -1.0 <= ssim(a, b) <= 1.0


def test_psnr_falls_as_noise_grows():
    rng = np.random.default_rng(5)
    base = _constant(128, (32, 32, 3))
    values = []
    for amplitude in (5, 10, 20):
        noise = rng.integers(-amplitude, amplitude + 1, size=base.shape)
        noisy = PixelImage((base.data.astype(int) + noise).astype(np.uint8))
        values.append(psnr(base, noisy))
    assert values[0] > values[1] > values[2]


def test_report_aggregates_and_infinite_entries():
    report = MetricReport.from_scores(
        [
            ImageScore(id="a", psnr=30.0, ssim=0.8),
            ImageScore(id="b", psnr=20.0, ssim=0.6),
            ImageScore(id="c", psnr=math.inf, ssim=1.0),
        ]
    )
    assert report.aggregate["PSNR"] == {"max": math.inf, "min": 20.0, "mean": 25.0}
    assert report.aggregate["SSIM"]["mean"] == pytest.approx(0.8)
    assert report.infinite_psnr_count == 1
    table = report.to_table()
    assert table.splitlines()[0].split() == ["metric", "max", "min", "mean"]
    assert "1 image(s) with infinite PSNR" in table
    assert report.to_index().splitlines()[1] == "b\t20.000000\t0.600000"


def test_single_image_report():
    report = MetricReport.from_scores([ImageScore(id="x", psnr=27.5, ssim=0.7)])
    for metric in ("PSNR", "SSIM"):
        summary = report.aggregate[metric]
        assert summary["max"] == summary["min"] == summary["mean"]


def test_empty_report_is_an_error():
    with pytest.raises(MetricError):
        MetricReport.from_scores([])


def test_score_pairs_keeps_input_order():
    pairs = [(f"p{seed}", (lambda s=seed: _random_pair(s))) for seed in range(6)]
    report = score_pairs(pairs, max_workers=3)
    assert [s["id"] for s in report.per_image] == [f"p{seed}" for seed in range(6)]
    a, b = _random_pair(2)
    assert report.per_image[2]["psnr"] == psnr(a, b)

# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Error, image quality and light field metrics."""
import logging

import numpy as np
import pytest

from lf_fusion.errors import MetricError, RescaleError
from lf_fusion.metrics import (
    PSNR_CAP,
    MetricsReport,
    evaluate_disparity,
    evaluate_light_field,
    linear_rescale_to_reference,
    mae,
    mse,
    normalize_range,
    ppe,
    psnr,
    ssim,
    ssim_map,
)
from lf_fusion.models import LightField


def test_mse_and_mae_by_hand():
    est = np.array([[1.0, 2.0], [3.0, 5.0]])
    gt = np.array([[1.0, 1.0], [1.0, 1.0]])
    assert mse(est, gt) == pytest.approx((0 + 1 + 4 + 16) / 4)
    assert mae(est, gt) == pytest.approx((0 + 1 + 2 + 4) / 4)


def test_masked_mse_matches_a_loop():
    rng = np.random.default_rng(0)
    est, gt = rng.random((9, 7)), rng.random((9, 7))
    mask = rng.random((9, 7)) > 0.3
    total, count = 0.0, 0
    for y in range(9):
        for x in range(7):
            if mask[y, x]:
                total += (est[y, x] - gt[y, x]) ** 2
                count += 1
    assert mse(est, gt, mask) == pytest.approx(total / count)


def test_ppe_counts_strictly_below_threshold():
    gt = np.array([[1.0, 2.0]])
    assert ppe(np.array([[1.04, 2.2]]), gt, 0.05) == 50.0
    assert ppe(np.array([[1.25, 2.0]]), gt, 0.25) == 50.0


def test_ppe_grows_with_the_threshold():
    rng = np.random.default_rng(1)
    est, gt = rng.random((12, 12)), rng.random((12, 12))
    scores = [ppe(est, gt, t) for t in (0.01, 0.05, 0.1, 0.5, 1.0)]
    assert scores == sorted(scores)
    assert scores[-1] == 100.0


def test_ppe_threshold_must_be_positive():
    with pytest.raises(MetricError):
        ppe(np.zeros((2, 2)), np.zeros((2, 2)), 0.0)


def test_empty_mask_is_an_error():
    with pytest.raises(MetricError):
        mse(np.zeros((3, 3)), np.zeros((3, 3)), np.zeros((3, 3), bool))


def test_shape_mismatch_is_an_error():
    with pytest.raises(MetricError):
        mae(np.zeros((3, 3)), np.zeros((3, 4)))
    with pytest.raises(MetricError):
        mse(np.zeros((3, 3)), np.zeros((3, 3)), np.ones((2, 3), bool))


def test_psnr_of_identical_images_is_capped():
    image = np.random.default_rng(2).random((8, 8, 3))
    assert psnr(image, image) == PSNR_CAP


def test_psnr_of_a_uniform_offset():
    image = np.full((8, 8, 3), 0.4)
    assert psnr(image + 0.1, image) == pytest.approx(20.0)
    assert psnr(image + 0.1, image, peak=10.0) == pytest.approx(40.0)


def test_ssim_of_identical_images_is_one():
    image = np.random.default_rng(3).random((20, 24, 3))
    assert ssim(image, image) == pytest.approx(1.0)


@pytest.mark.parametrize("a, b", [(0.2, 0.7), (0.5, 0.5), (0.9, 0.1)])
def test_ssim_of_constant_images(a, b):
    x, y = np.full((16, 16), a), np.full((16, 16), b)
    c1 = 0.01 ** 2
    expected = (2 * a * b + c1) / (a * a + b * b + c1)
    assert ssim(x, y) == pytest.approx(expected, rel=1e-9)


def test_ssim_penalizes_inversion():
    xs = np.linspace(0.0, 1.0, 24)
    image = np.broadcast_to(xs, (24, 24)).copy()
    assert ssim(image, 1.0 - image) < 0.0


def test_ssim_matches_scikit_image():
    metrics = pytest.importorskip("skimage.metrics")
    rng = np.random.default_rng(4)
    for _ in range(20):
        x = rng.random((32, 32, 3))
        y = np.clip(x + 0.2 * rng.standard_normal(x.shape), 0.0, 1.0)
        reference = metrics.structural_similarity(
            x,
            y,
            gaussian_weights=True,
            sigma=1.5,
            use_sample_covariance=False,
            data_range=1.0,
            channel_axis=-1,
        )
        assert ssim(x, y) == pytest.approx(reference, abs=1e-6)


def test_ssim_needs_a_full_window():
    with pytest.raises(MetricError):
        ssim_map(np.zeros((10, 20)), np.zeros((10, 20)))


def test_masked_ssim_ignores_the_border():
    rng = np.random.default_rng(5)
    x, y = rng.random((16, 16)), rng.random((16, 16))
    mask = np.zeros((16, 16), dtype=bool)
    mask[:5] = True
    with pytest.raises(MetricError):
        ssim(x, y, mask=mask)
    mask[8, 8] = True
    assert ssim(x, y, mask=mask) == pytest.approx(ssim_map(x, y)[8, 8])


def test_linear_rescale():
    gt = np.array([[10.0, 20.0, 40.0]])
    rescaled = linear_rescale_to_reference(np.array([[1.0, 2.0, 3.0]]), gt)
    np.testing.assert_allclose(rescaled, [[10.0, 25.0, 40.0]])


def test_inverted_rescale():
    gt = np.array([[0.0, 1.0, 3.0]])
    rescaled = linear_rescale_to_reference(
        np.array([[1.0, 2.0, 4.0]]), gt, invert=True
    )
    np.testing.assert_allclose(rescaled, [[3.0, 1.0, 0.0]])


def test_rescale_uses_the_masked_range():
    est = np.array([[0.0, 1.0, 100.0]])
    gt = np.array([[2.0, 4.0, -50.0]])
    mask = np.array([[True, True, False]])
    rescaled = linear_rescale_to_reference(est, gt, mask=mask)
    np.testing.assert_allclose(rescaled[0, :2], [2.0, 4.0])


def test_rescale_errors():
    with pytest.raises(RescaleError):
        linear_rescale_to_reference(np.ones((2, 2)), np.full((2, 2), 3.0))
    with pytest.raises(RescaleError):
        linear_rescale_to_reference(
            np.array([[0.0, 1.0]]), np.array([[0.0, 1.0]]), invert=True
        )


def test_constant_estimate_rescales_to_the_minimum(caplog):
    gt = np.array([[0.5, 2.0]])
    with caplog.at_level(logging.WARNING, logger="metrics"):
        rescaled = linear_rescale_to_reference(np.full((1, 2), 7.0), gt)
    np.testing.assert_array_equal(rescaled, 0.5)
    assert "constant estimate" in caplog.text


def test_normalize_range():
    reference = np.array([[1.0, 3.0], [2.0, 9.0]])
    mask = np.array([[True, True], [True, False]])
    values = normalize_range(reference, reference, mask)
    np.testing.assert_allclose(values, [[0.0, 1.0], [0.5, 4.0]])
    with pytest.raises(RescaleError):
        normalize_range(reference, np.ones((2, 2)))


def test_evaluate_disparity():
    gt = np.zeros((4, 5))
    est = np.zeros((4, 5))
    est[0, :] = 0.07
    est[1, :] = 0.2
    mask = np.ones((4, 5), dtype=bool)
    mask[3] = False
    report = evaluate_disparity(est, gt, mask)
    assert report.n_pixels == 15
    assert report.mask_coverage == pytest.approx(0.75)
    assert report.ppe_005 == pytest.approx(100 / 3)
    assert report.ppe_01 == pytest.approx(200 / 3)
    assert report.mae == pytest.approx((5 * 0.07 + 5 * 0.2) / 15)
    assert report.psnr is None


@pytest.mark.parametrize(
    "kwargs", [{"ppe_005": 101.0}, {"ppe_01": -1.0}, {"ssim": 1.5}]
)
def test_report_ranges(kwargs):
    fields = dict(
        mse=0.0,
        mae=0.0,
        ppe_005=0.0,
        ppe_01=0.0,
        n_pixels=1,
        mask_coverage=1.0,
    )
    fields.update(kwargs)
    with pytest.raises(MetricError):
        MetricsReport(**fields)


def test_identical_light_fields():
    views = np.random.default_rng(6).random((3, 3, 12, 14, 3))
    report = evaluate_light_field(LightField(views), LightField(views))
    assert len(report.views) == 9
    assert report.mean_psnr == PSNR_CAP
    assert report.flat_psnr == PSNR_CAP
    assert report.mean_ssim == pytest.approx(1.0)


def test_light_field_scores_honor_masks():
    gt = np.full((1, 3, 12, 12, 3), 0.5)
    est = gt.copy()
    est[0, 2, :, -1] = 0.0
    masks = np.ones((1, 3, 12, 12), dtype=bool)
    masks[0, 2, :, -1] = False
    report = evaluate_light_field(LightField(est), LightField(gt), masks)
    assert report.flat_psnr == PSNR_CAP
    assert report.views[2].coverage == pytest.approx(11 / 12)
    unmasked = evaluate_light_field(LightField(est), LightField(gt))
    assert unmasked.views[2].psnr < PSNR_CAP
    assert unmasked.views[0].psnr == PSNR_CAP


def test_light_fields_must_match():
    with pytest.raises(MetricError):
        evaluate_light_field(
            LightField(np.zeros((1, 1, 12, 12, 3))),
            LightField(np.zeros((1, 3, 12, 12, 3))),
        )

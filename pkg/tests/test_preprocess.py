import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import ndimage

from xrayad import imageops as ops
from xrayad.core import ImageRecord
from xrayad.preprocess import (
    AugmentationPolicy,
    BoundingBox,
    augment,
    crop_carrier,
    detect_hands,
    eval_pipeline,
    heuristic_hand_detector,
    offline_process,
    online_pipeline,
    replay_offline,
    segment_foreground,
    worker_rng,
)
from xrayad.synthetic import make_fixture

ONLY = dict(hflip_p=0.0, vflip_p=0.0)


def rotated_rect_image(shape, center, size, angle_deg, value=0.8, background=0.05):
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]].astype(float)
    t = np.radians(angle_deg)
    dx, dy = xx - center[0], yy - center[1]
    u = np.cos(t) * dx + np.sin(t) * dy
    v = -np.sin(t) * dx + np.cos(t) * dy
    inside = (np.abs(u) <= size[0] / 2) & (np.abs(v) <= size[1] / 2)
    return np.where(inside, value, background), inside


# --- carrier ----------------------------------------------------------------------


def test_crop_carrier_axis_aligned_rectangle():
    img = np.full((40, 50), 0.05)
    img[8:28, 10:41] = 0.8
    np.testing.assert_array_equal(crop_carrier(img), img[8:28, 10:41])


def test_crop_carrier_rotated_rectangle_area():
    img, inside = rotated_rect_image((90, 90), (45, 45), (50, 30), 15)
    out = crop_carrier(img)
    assert out.shape[1] >= out.shape[0]
    assert abs(out.size - inside.sum()) / inside.sum() < 0.02
    assert (out > 0.5).mean() > 0.95  # upright and filled


def test_crop_carrier_all_dark_warns(caplog):
    img = np.zeros((10, 12))
    with caplog.at_level(logging.WARNING):
        out = crop_carrier(img)
    np.testing.assert_array_equal(out, img)
    assert "carrier" in caplog.text


def test_crop_carrier_filling_frame_is_kept():
    img = np.full((20, 20), 0.1)
    img[0:20, 0:20] = 0.9
    img[0, 0] = 0.1
    np.testing.assert_array_equal(crop_carrier(img), img)


# --- hands ------------------------------------------------------------------------


def test_detect_two_blobs():
    img = np.zeros((40, 60))
    img[5:35, 5:25] = 0.9
    img[8:30, 35:55] = 0.8
    boxes = detect_hands(img)
    assert len(boxes) == 2
    assert boxes[0].x < boxes[1].x
    assert boxes[0].x <= 5 and boxes[0].x + boxes[0].width >= 25
    assert boxes[1].x <= 35 and boxes[1].x + boxes[1].width >= 55


def test_detect_single_blob_box():
    img = np.zeros((50, 50))
    img[10:40, 12:30] = 0.9
    (box,) = detect_hands(img)
    assert 0 < 12 - box.x <= 2 and 0 < box.x + box.width - 30 <= 2
    assert 0 < 10 - box.y <= 2 and 0 < box.y + box.height - 40 <= 2
    assert box.confidence == pytest.approx(1.0)


def test_detect_empty_image_falls_back_to_full_frame():
    (box,) = detect_hands(np.zeros((7, 9)))
    assert box == BoundingBox(0, 0, 9, 7, 0.0)


def test_heuristic_detector_ignores_small_blobs():
    img = np.zeros((50, 50))
    img[10:40, 10:40] = 0.9
    img[45:47, 45:47] = 0.9  # under 5% of the frame
    assert len(heuristic_hand_detector(img)) == 1


def test_custom_detector_is_used_and_limited_to_two():
    def detector(pixels):
        return [BoundingBox(0, 0, 2, 2, 0.2), BoundingBox(5, 0, 2, 2, 0.9), BoundingBox(3, 0, 2, 2, 0.5)]

    boxes = detect_hands(np.zeros((8, 8)), detector)
    assert [b.x for b in boxes] == [3, 5]


def test_box_clamp_and_crop():
    box = BoundingBox(-3, 2, 10, 20, 1.4).clamp((10, 5))
    assert box == BoundingBox(0, 2, 5, 8, 1.0)
    assert box.crop(np.zeros((10, 5))).shape == (8, 5)


# --- segmentation ------------------------------------------------------------------


def test_segment_solid_blob():
    yy, xx = np.mgrid[0:40, 0:40]
    blob = ((yy - 20) ** 2 / 150 + (xx - 18) ** 2 / 80) <= 1
    mask = segment_foreground(np.where(blob, 0.85, 0.0)).astype(bool)
    jaccard = (mask & blob).sum() / (mask | blob).sum()
    assert jaccard >= 0.95


def test_segment_fills_hole():
    img = np.zeros((30, 30))
    img[5:25, 5:25] = 0.9
    img[14:16, 14:16] = 0.0
    mask = segment_foreground(img)
    assert mask[14:16, 14:16].all()
    assert ndimage.label(mask)[1] == 1


def test_segment_uniform_warns(caplog):
    with caplog.at_level(logging.WARNING):
        mask = segment_foreground(np.full((6, 6), 0.4))
    assert mask.all() and "degenerate" in caplog.text


# --- offline pipeline ---------------------------------------------------------------


def test_offline_variants():
    fx = make_fixture(np.random.default_rng(0))
    (raw,) = offline_process(fx.pixels, "raw")
    assert raw.mask.all() and raw.pixels.shape == fx.pixels.shape
    (crop,) = offline_process(fx.pixels, "crop")
    assert crop.mask.all() and crop.pixels.size < fx.pixels.size
    (full,) = offline_process(fx.pixels, "full")
    assert full.pixels.shape == crop.pixels.shape
    assert 0 < full.mask.sum() < full.mask.size
    assert [p["step"] for p in full.provenance] == ["crop_carrier", "hand_box", "segment_foreground"]
    with pytest.raises(ValueError):
        offline_process(fx.pixels, "cropped")


def test_offline_two_hands_gives_two_results():
    fx = make_fixture(np.random.default_rng(3), hands=2, carrier=True)
    assert len(offline_process(fx.pixels, "full")) == 2


def test_replay_offline_tracks_the_crop():
    fx = make_fixture(np.random.default_rng(4), anomalous=True)
    (res,) = offline_process(fx.pixels, "crop")
    square = replay_offline(fx.anomaly.astype(float), res.provenance, order=1) > 0.5
    assert square.sum() >= 25
    assert res.pixels[square].mean() > 0.95


# --- augmentation --------------------------------------------------------------------


def _pair(seed=0, shape=(12, 16)):
    rng = np.random.default_rng(seed)
    return rng.random(shape), (rng.random(shape) < 0.5).astype(np.uint8)


def test_augment_probability_zero_is_identity():
    px, m = _pair()
    out, om, params = augment(px, m, AugmentationPolicy.identity(), np.random.default_rng(1))
    np.testing.assert_array_equal(out, px)
    np.testing.assert_array_equal(om, m)
    assert set(params) == {"step", "policy"}


def test_forced_hflip_is_involution():
    px, m = _pair()
    flip = AugmentationPolicy("flip", hflip_p=1.0, vflip_p=0.0)
    once, m1, _ = augment(px, m, flip, np.random.default_rng(0))
    np.testing.assert_array_equal(once, px[:, ::-1])
    twice, m2, _ = augment(once, m1, flip, np.random.default_rng(1))
    np.testing.assert_array_equal(twice, px)
    np.testing.assert_array_equal(m2, m)


def test_forced_brightness_clips():
    bright = AugmentationPolicy("b", brightness_p=1.0, brightness_range=(1.2, 1.2), **ONLY)
    m = np.ones((4, 4), np.uint8)
    out, om, params = augment(np.full((4, 4), 0.9), m, bright, np.random.default_rng(0))
    np.testing.assert_array_equal(out, 1.0)
    np.testing.assert_array_equal(om, m)
    assert params["brightness"] == pytest.approx(1.2)


def test_policy_validation():
    with pytest.raises(ValueError):
        AugmentationPolicy(hflip_p=1.5)
    with pytest.raises(ValueError):
        AugmentationPolicy(brightness_range=(0.0, 1.0))
    with pytest.raises(ValueError):
        AugmentationPolicy.named("fancy")
    assert AugmentationPolicy.named("advanced").rotate_range == (-20.0, 20.0)


@given(st.integers(0, 2**32 - 1))
def test_mask_follows_geometry(seed):
    """Augmenting the image and separately augmenting its known mask agree bit for bit."""
    rng = np.random.default_rng(seed)
    fx = make_fixture(rng, size=32)
    mask = fx.blob.astype(np.uint8)
    policy = AugmentationPolicy.advanced()
    _, om, params = augment(fx.pixels, mask, policy, worker_rng(seed, 0))
    _, om2, params2 = augment(mask.astype(float), mask, policy, worker_rng(seed, 0))
    assert {k: v for k, v in params.items() if k != "brightness"} == \
        {k: v for k, v in params2.items() if k != "brightness"}
    np.testing.assert_array_equal(om, om2)
    assert set(np.unique(om)) <= {0, 1}


@given(st.integers(0, 2**32 - 1))
def test_augment_deterministic(seed):
    px, m = _pair(seed % 100)
    policy = AugmentationPolicy.advanced()
    a = augment(px, m, policy, worker_rng(seed, 3, 1))
    b = augment(px, m, policy, worker_rng(seed, 3, 1))
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    assert a[2] == b[2]


# --- online pipeline --------------------------------------------------------------------


def _record(shape=(40, 30), seed=0, mask=None):
    px = np.random.default_rng(seed).random(shape) * 0.5 + 0.2
    return ImageRecord("p", "s", "negative", pixels=px, mask=mask, image_id="p_s_i")


def test_online_zero_policy_only_pads_and_normalizes():
    rec = _record()
    out = online_pipeline(rec, AugmentationPolicy.identity(), (48, 48), False, np.random.default_rng(0))
    padded, offset = ops.pad_center(rec.pixels, (48, 48))
    expected = ops.min_max_normalize(padded, ops.pad_center(np.ones((40, 30)), (48, 48))[0])
    np.testing.assert_allclose(out.pixels, expected, atol=1e-6)
    assert [p["step"] for p in out.provenance] == ["augment", "pad_center", "min_max_normalize"]
    assert out.provenance[1]["offset"] == list(offset)


def test_online_resizes_long_side_first():
    rec = _record(shape=(100, 200))
    out = eval_pipeline(rec, (128, 128), False)
    assert out.provenance[0] == {"step": "resize", "shape": [64, 128]}
    assert out.pixels.shape == (128, 128)
    assert out.mask[:32].sum() == 0 and out.mask[32:96].all()


def test_online_order_with_equalization():
    out = online_pipeline(_record(), AugmentationPolicy.default(), (64, 64), True, np.random.default_rng(0))
    assert [p["step"] for p in out.provenance] == ["equalize", "augment", "pad_center", "min_max_normalize"]


def test_online_same_seed_identical():
    rec = _record(mask=(np.random.default_rng(9).random((40, 30)) < 0.7).astype(np.uint8))
    policy = AugmentationPolicy.advanced()
    a = online_pipeline(rec, policy, (64, 64), True, worker_rng(42, 5))
    b = online_pipeline(rec, policy, (64, 64), True, worker_rng(42, 5))
    np.testing.assert_array_equal(a.pixels, b.pixels)
    np.testing.assert_array_equal(a.mask, b.mask)
    assert a.provenance == b.provenance


@given(st.integers(0, 2**32 - 1))
def test_online_mask_inside_frame(seed):
    rng = np.random.default_rng(seed)
    fx = make_fixture(rng, size=32)
    (res,) = offline_process(fx.pixels, "full")
    rec = ImageRecord("p", "s", "negative", pixels=res.pixels, mask=res.mask, image_id="x")
    out = online_pipeline(rec, AugmentationPolicy.advanced(), (32, 32), False, worker_rng(seed, 0))
    assert out.pixels.shape == out.mask.shape == (32, 32)
    assert out.mask.sum() > 0
    assert out.pixels.min() >= 0 and out.pixels.max() <= 1
    assert (out.pixels[out.mask > 0]).max() == pytest.approx(1.0)


def test_worker_streams_differ():
    a = worker_rng(42, 0, 0).random()
    assert a != worker_rng(42, 1, 0).random()
    assert a != worker_rng(42, 0, 1).random()
    assert a == worker_rng(42, 0, 0).random()

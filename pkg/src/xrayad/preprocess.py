"""Offline (carrier crop, hand localisation, segmentation) and online
(equalisation, augmentation, padding, normalisation) preprocessing."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np
from scipy import ndimage

from . import imageops as ops
from .core import ImageRecord

log = logging.getLogger(__name__)

VARIANTS = ("raw", "crop", "full")
CARRIER_FILL_LIMIT = 0.98
MIN_HAND_FRACTION = 0.05
BOX_MARGIN = 0.05
CLOSING_RADIUS = 3


@dataclass(frozen=True)
class BoundingBox:
    x: int
    y: int
    width: int
    height: int
    confidence: float = 1.0

    def clamp(self, shape: tuple[int, int]) -> "BoundingBox":
        h, w = shape
        x0, y0 = max(0, self.x), max(0, self.y)
        x1, y1 = min(w, self.x + self.width), min(h, self.y + self.height)
        if x1 <= x0 or y1 <= y0:
            raise ValueError(f"box {self} lies outside a {shape} image")
        return BoundingBox(x0, y0, x1 - x0, y1 - y0, float(np.clip(self.confidence, 0, 1)))

    def crop(self, pixels: np.ndarray) -> np.ndarray:
        return pixels[self.y:self.y + self.height, self.x:self.x + self.width]


class HandDetector(Protocol):
    def __call__(self, pixels: np.ndarray) -> list[BoundingBox]: ...


@dataclass(frozen=True)
class AugmentationPolicy:
    name: str = "default"
    hflip_p: float = 0.5
    vflip_p: float = 0.5
    brightness_p: float = 0.0
    brightness_range: tuple[float, float] = (0.8, 1.2)
    scale_p: float = 0.0
    scale_range: tuple[float, float] = (0.8, 1.2)
    rotate_p: float = 0.0
    rotate_range: tuple[float, float] = (-20.0, 20.0)

    def __post_init__(self):
        for p in (self.hflip_p, self.vflip_p, self.brightness_p, self.scale_p, self.rotate_p):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0, 1]")
        for lo, hi in (self.brightness_range, self.scale_range):
            if not 0.0 < lo <= hi:
                raise ValueError("multiplicative ranges must be positive and ordered")
        if self.rotate_range[0] > self.rotate_range[1]:
            raise ValueError("rotation range must be ordered")

    @classmethod
    def default(cls) -> "AugmentationPolicy":
        return cls("default")

    @classmethod
    def advanced(cls) -> "AugmentationPolicy":
        return cls("advanced", brightness_p=0.5, scale_p=0.5, rotate_p=0.5)

    @classmethod
    def identity(cls) -> "AugmentationPolicy":
        return cls("none", hflip_p=0.0, vflip_p=0.0)

    @classmethod
    def named(cls, name: str) -> "AugmentationPolicy":
        try:
            return {"default": cls.default, "advanced": cls.advanced, "none": cls.identity}[name]()
        except KeyError:
            raise ValueError(f"unknown augmentation policy {name!r}") from None


@dataclass
class PreprocessedRecord:
    pixels: np.ndarray
    mask: np.ndarray
    provenance: list[dict] = field(default_factory=list)
    image_id: str = ""
    patient_id: str = ""
    study_id: str = ""
    label: str = "negative"

    def __post_init__(self):
        if self.pixels.shape != self.mask.shape:
            raise ValueError("pixels and mask shapes differ")


# --- offline stage -------------------------------------------------------


def find_carrier(pixels: np.ndarray) -> ops.RotatedRect | None:
    """Rotated rectangle around the bright image carrier, or None."""
    bits, otsu = ops.otsu_binarize(pixels)
    if otsu.degenerate or not bits.any():
        return None
    blob = ops.largest_component(bits)
    boundary = blob & ~ndimage.binary_erosion(blob, ops.EIGHT_CONNECTED, border_value=0)
    rows, cols = np.nonzero(boundary)
    rect = ops.min_area_rect(np.column_stack([cols, rows]))
    # an edge along a pixel row stops half a pixel short of the carrier's
    # outline; a slanted staircase edge already touches it
    pad = 1.0 if rect.angle == 0.0 else 0.0
    return rect._replace(size=(rect.size[0] + pad, rect.size[1] + pad))


def crop_carrier(pixels: np.ndarray) -> np.ndarray:
    return _crop_carrier(pixels)[0]


def _crop_carrier(pixels: np.ndarray) -> tuple[np.ndarray, dict | None]:
    rect = find_carrier(pixels)
    if rect is None:
        log.warning("carrier detection found no foreground; keeping the full frame")
        return pixels, None
    if rect.area > CARRIER_FILL_LIMIT * pixels.size:
        return pixels, None
    step = {"step": "crop_carrier", "center": list(rect.center), "size": list(rect.size), "angle": rect.angle}
    return ops.crop_rotated(pixels, rect), step


def heuristic_hand_detector(pixels: np.ndarray) -> list[BoundingBox]:
    """Up to two large bright blobs, as slightly dilated axis-aligned boxes."""
    h, w = pixels.shape
    bits, otsu = ops.otsu_binarize(pixels)
    if otsu.degenerate:
        return []
    comps = [c for c in ops.component_boxes(bits) if c[0] > MIN_HAND_FRACTION * h * w]
    comps.sort(key=lambda c: (-c[0], c[1], c[2]))
    boxes = []
    for size, r0, c0, r1, c1 in comps[:2]:
        my = int(math.ceil(BOX_MARGIN * (r1 - r0)))
        mx = int(math.ceil(BOX_MARGIN * (c1 - c0)))
        box = BoundingBox(c0 - mx, r0 - my, c1 - c0 + 2 * mx, r1 - r0 + 2 * my, size / ((r1 - r0) * (c1 - c0)))
        boxes.append(box.clamp((h, w)))
    return boxes


def detect_hands(pixels: np.ndarray, detector: HandDetector = heuristic_hand_detector) -> list[BoundingBox]:
    """One or two hand boxes sorted left to right; full frame if none found."""
    boxes = [b.clamp(pixels.shape) for b in detector(pixels)]
    if not boxes:
        h, w = pixels.shape
        return [BoundingBox(0, 0, w, h, 0.0)]
    boxes = sorted(boxes, key=lambda b: -b.confidence)[:2]
    return sorted(boxes, key=lambda b: (b.x, b.y))


def segment_foreground(pixels: np.ndarray) -> np.ndarray:
    """Single filled foreground component of a hand crop."""
    bits, otsu = ops.otsu_binarize(pixels)
    if otsu.degenerate or not bits.any():
        log.warning("degenerate segmentation; using the whole crop as foreground")
        return np.ones(pixels.shape, dtype=np.uint8)
    blob = ops.largest_component(bits).astype(bool)
    r = CLOSING_RADIUS
    padded = np.pad(blob, r)
    closed = ndimage.binary_closing(padded, structure=ops.disk(r))[r:-r, r:-r]
    filled = ndimage.binary_fill_holes(closed)
    return ops.largest_component(filled)


@dataclass
class OfflineResult:
    pixels: np.ndarray
    mask: np.ndarray
    provenance: list[dict]


def offline_process(
    pixels: np.ndarray, variant: str = "full", detector: HandDetector = heuristic_hand_detector
) -> list[OfflineResult]:
    """Run the stored-to-disk part of the pipeline; one result per hand."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown preprocessing variant {variant!r}")
    pixels = np.asarray(pixels, dtype=np.float64)
    if variant == "raw":
        return [OfflineResult(pixels, np.ones(pixels.shape, np.uint8), [{"step": "raw"}])]

    cropped, step = _crop_carrier(pixels)
    base = [step] if step else [{"step": "crop_carrier", "skipped": True}]
    results = []
    for box in detect_hands(cropped, detector):
        hand = box.crop(cropped)
        prov = base + [{"step": "hand_box", "x": box.x, "y": box.y, "width": box.width,
                        "height": box.height, "confidence": box.confidence}]
        if variant == "full":
            mask = segment_foreground(hand)
            prov.append({"step": "segment_foreground", "foreground": int(mask.sum())})
        else:
            mask = np.ones(hand.shape, np.uint8)
        results.append(OfflineResult(hand, mask, prov))
    return results


def replay_offline(aux: np.ndarray, provenance: Sequence[dict], order: int = 0) -> np.ndarray:
    """Apply the geometric offline steps recorded in ``provenance`` to ``aux``."""
    out = np.asarray(aux, dtype=np.float64)
    for step in provenance:
        if step["step"] == "crop_carrier" and not step.get("skipped"):
            rect = ops.RotatedRect(tuple(step["center"]), tuple(step["size"]), step["angle"])
            out = ops.crop_rotated(out, rect, order=order)
        elif step["step"] == "hand_box":
            out = BoundingBox(step["x"], step["y"], step["width"], step["height"]).crop(out)
    return out


# --- online stage --------------------------------------------------------


def _affine_resample(image: np.ndarray, scale_x: float, scale_y: float, angle: float, order: int) -> np.ndarray:
    h, w = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    t = math.radians(angle)
    c, s = math.cos(t), math.sin(t)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    # inverse of (rotate after scale) about the image centre
    ux = (c * dx + s * dy) / scale_x
    uy = (-s * dx + c * dy) / scale_y
    return ops.sample(image, uy + cy, ux + cx, order=order)


def augment(
    pixels: np.ndarray, mask: np.ndarray, policy: AugmentationPolicy, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, dict]:
    """Randomly flip, scale, rotate and brighten.

    Geometric transforms hit pixels (bilinear) and mask (nearest) alike;
    brightness only scales pixels, clipped at 1.  The random stream is
    consumed identically whatever the policy, so seeds stay comparable.
    """
    draws = rng.random(5)
    brightness = rng.uniform(*policy.brightness_range)
    scale = rng.uniform(*policy.scale_range, size=2)
    angle = rng.uniform(*policy.rotate_range)

    params: dict = {"step": "augment", "policy": policy.name}
    pixels = np.asarray(pixels, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.uint8)
    if draws[0] < policy.hflip_p:
        pixels, mask = pixels[:, ::-1], mask[:, ::-1]
        params["hflip"] = True
    if draws[1] < policy.vflip_p:
        pixels, mask = pixels[::-1, :], mask[::-1, :]
        params["vflip"] = True
    sx = sy = 1.0
    rot = 0.0
    if draws[3] < policy.scale_p:
        sx, sy = float(scale[0]), float(scale[1])
        params["scale"] = [sx, sy]
    if draws[4] < policy.rotate_p:
        rot = float(angle)
        params["rotate"] = rot
    if (sx, sy, rot) != (1.0, 1.0, 0.0):
        pixels = _affine_resample(pixels, sx, sy, rot, order=1)
        mask = _affine_resample(mask, sx, sy, rot, order=0).astype(np.uint8)
    if draws[2] < policy.brightness_p:
        pixels = np.clip(pixels * brightness, 0.0, 1.0)
        params["brightness"] = float(brightness)
    return np.ascontiguousarray(pixels), np.ascontiguousarray(mask), params


def online_pipeline(
    record: ImageRecord,
    policy: AugmentationPolicy,
    target: tuple[int, int],
    equalize: bool,
    rng: np.random.Generator,
    equalize_mask: bool = False,
) -> PreprocessedRecord:
    """resize (if too large) -> equalize -> augment -> pad -> normalize."""
    if record.pixels is None:
        raise ValueError(f"{record.image_id}: pixels not loaded")
    pixels = np.asarray(record.pixels, dtype=np.float64)
    mask = np.ones(pixels.shape, np.uint8) if record.mask is None else np.asarray(record.mask, np.uint8)
    prov: list[dict] = []

    th, tw = target
    h, w = pixels.shape
    if h > th or w > tw:
        scale = min(th / h, tw / w)
        shape = (min(th, max(1, round(h * scale))), min(tw, max(1, round(w * scale))))
        pixels = ops.resize(pixels, shape, order=1)
        mask = ops.resize(mask, shape, order=0).astype(np.uint8)
        prov.append({"step": "resize", "shape": list(shape)})
    if equalize:
        pixels = ops.histogram_equalize(pixels, mask if equalize_mask else None)
        prov.append({"step": "equalize", "masked": equalize_mask})
    pixels, mask, aug = augment(pixels, mask, policy, rng)
    prov.append(aug)
    pixels, offset = ops.pad_center(pixels, target)
    mask, _ = ops.pad_center(mask, target)
    prov.append({"step": "pad_center", "offset": list(offset)})
    pixels = ops.min_max_normalize(pixels, mask if mask.any() else None)
    prov.append({"step": "min_max_normalize"})
    return PreprocessedRecord(
        pixels.astype(np.float32),
        mask.astype(np.uint8),
        prov,
        image_id=record.image_id,
        patient_id=record.patient_id,
        study_id=record.study_id,
        label=record.label,
    )


def eval_pipeline(record: ImageRecord, target: tuple[int, int], equalize: bool) -> PreprocessedRecord:
    """Online pipeline without augmentation, for validation and test images."""
    return online_pipeline(record, AugmentationPolicy.identity(), target, equalize, np.random.default_rng(0))


def worker_rng(seed: int, index: int, epoch: int = 0) -> np.random.Generator:
    """Independent stream per (seed, image, epoch)."""
    return np.random.default_rng([seed, epoch, index])


def with_offline(record: ImageRecord, result: OfflineResult, suffix: str = "") -> ImageRecord:
    return replace(record, pixels=result.pixels, mask=result.mask, image_id=record.image_id + suffix)


"""Synthetic radiograph-like fixtures with known anomalies.

A frame is a dark, slightly noisy background holding one (or two) bright
smooth-edged elliptical blobs standing in for hands.  Anomalous frames get
a saturated square inside the blob; cluttered frames get bright marks
(labels, rulers) outside it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import DatasetIndex, ImageRecord, patient_split, write_png
from .evaluation import evaluate_run, hottest_pixels
from .models import desk_config, train_model
from .preprocess import AugmentationPolicy, eval_pipeline, offline_process, replay_offline, with_offline
from .scoring import heatmap_for, score_dataset

SQUARE = 6
BLOB_LEVEL = (0.55, 0.7)  # mean blob intensity range; the square is 1.0


@dataclass
class Fixture:
    pixels: np.ndarray
    anomaly: np.ndarray  # bool, True on the injected square
    blob: np.ndarray  # bool, True inside the blob


def _ellipse(shape, center, axes, angle):
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
    c, s = np.cos(angle), np.sin(angle)
    dx, dy = xx - center[1], yy - center[0]
    u = (c * dx + s * dy) / axes[1]
    v = (-s * dx + c * dy) / axes[0]
    return np.sqrt(u * u + v * v)  # 1 on the boundary


def _blob(rng, shape, center, axes, max_tilt=np.pi / 2):
    angle = rng.uniform(-max_tilt, max_tilt)
    r = _ellipse(shape, center, axes, angle)
    edge = 1.0 / (1.0 + np.exp((r - 1.0) * 12.0))
    texture = ndimage.gaussian_filter(rng.normal(size=shape), 4.0)
    texture /= np.abs(texture).max() + 1e-12
    level = rng.uniform(*BLOB_LEVEL)
    return edge * (level + 0.08 * texture), r


def _clutter(rng, frame, forbidden):
    h, w = frame.shape
    out = frame.copy()
    for _ in range(rng.integers(2, 5)):
        for _attempt in range(20):
            mh, mw = (int(rng.integers(2, 4)), int(rng.integers(6, 16)))
            if rng.random() < 0.5:
                mh, mw = mw, mh
            y, x = int(rng.integers(0, h - mh)), int(rng.integers(0, w - mw))
            if not forbidden[max(0, y - 2):y + mh + 2, max(0, x - 2):x + mw + 2].any():
                out[y:y + mh, x:x + mw] = rng.uniform(0.85, 1.0)
                break
    return out


def make_fixture(
    rng: np.random.Generator,
    anomalous: bool = False,
    clutter: bool = False,
    size: int = 64,
    hands: int = 1,
    carrier: bool = False,
) -> Fixture:
    shape = (size, size)
    frame = 0.05 + 0.01 * rng.normal(size=shape)
    if carrier:  # a dimmer, slightly tilted plate under the hands
        yy, xx = np.mgrid[0:size, 0:size]
        t = rng.uniform(-0.1, 0.1)
        u = np.cos(t) * (xx - size / 2) + np.sin(t) * (yy - size / 2)
        v = -np.sin(t) * (xx - size / 2) + np.cos(t) * (yy - size / 2)
        frame = np.where((np.abs(u) <= 0.45 * size) & (np.abs(v) <= 0.4 * size), 0.4, frame)
    blob_mask = np.zeros(shape, bool)
    inner = None
    for i in range(hands):
        axes = (rng.uniform(0.26, 0.34) * size, rng.uniform(0.18, 0.24) * size)
        if hands == 1:
            center = (size / 2 + rng.uniform(-0.08, 0.08) * size, size / 2 + rng.uniform(-0.08, 0.08) * size)
            blob, r = _blob(rng, shape, center, axes)
        else:  # side by side, roughly upright
            center = (size / 2, size * (0.27 + 0.46 * i))
            blob, r = _blob(rng, shape, center, (axes[0], axes[1] * 0.55), max_tilt=0.15)
        frame = np.maximum(frame, blob)
        blob_mask |= r <= 1.0
        if inner is None:
            inner = r
    anomaly = np.zeros(shape, bool)
    if anomalous:
        core = ndimage.binary_erosion(inner <= 0.75, np.ones((SQUARE, SQUARE), bool))
        ys, xs = np.nonzero(core)
        k = int(rng.integers(len(ys)))
        y0, x0 = ys[k] - SQUARE // 2, xs[k] - SQUARE // 2
        anomaly[y0:y0 + SQUARE, x0:x0 + SQUARE] = True
        frame[anomaly] = 1.0
    if clutter:
        frame = _clutter(rng, frame, ndimage.binary_dilation(blob_mask, iterations=3))
    return Fixture(np.clip(frame, 0.0, 1.0), anomaly, blob_mask)


def fixture_records(
    n_normal: int, n_anomalous: int, seed: int = 0, clutter: bool = False, size: int = 64
) -> tuple[list[ImageRecord], dict[str, Fixture]]:
    """One patient and one study per fixture; returns records and fixtures by image id."""
    rng = np.random.default_rng(seed)
    records, fixtures = [], {}
    for i in range(n_normal + n_anomalous):
        anomalous = i >= n_normal
        fx = make_fixture(rng, anomalous, clutter, size)
        label = "positive" if anomalous else "negative"
        rec = ImageRecord(f"p{i:04d}", "study1", label, pixels=fx.pixels, image_id=f"p{i:04d}_study1_image1")
        records.append(rec)
        fixtures[rec.image_id] = fx
    return records, fixtures


def write_tree(root: str | Path, records: list[ImageRecord]) -> Path:
    """Write records as ``root/<patient>/<study>_<label>/<name>.png``."""
    root = Path(root)
    for rec in records:
        name = rec.image_id.rsplit("_", 1)[-1]
        path = root / rec.patient_id / f"{rec.study_id}_{rec.label}" / f"{name}.png"
        path.parent.mkdir(parents=True, exist_ok=True)
        write_png(path, rec.pixels)
    return root


@dataclass
class ExperimentResult:
    aucs: dict[str, float]
    hottest_pixel_rate: float  # anomalous images whose argmax lies in the square
    hottest_percent_rate: float  # anomalous images whose top 1% touches the square
    history: list[dict]
    seconds: float


def square_in_model_frame(fixture: Fixture, provenance: list[dict], record) -> np.ndarray:
    """Map a fixture's injected square onto the padded model input."""
    sq = replay_offline(fixture.anomaly.astype(np.float64), provenance, order=1) > 0.5
    pad = next(p for p in record.provenance if p["step"] == "pad_center")
    oy, ox = pad["offset"]
    out = np.zeros(record.pixels.shape, bool)
    out[oy:oy + sq.shape[0], ox:ox + sq.shape[1]] = sq
    return out


def run_experiment(
    variant: str = "full",
    clutter: bool = False,
    n_normal: int = 200,
    n_anomalous: int = 100,
    fixture_seed: int = 0,
    seed: int = 42,
    epochs: int | None = None,
    equalize: bool = False,
    policy: AugmentationPolicy | None = None,
) -> ExperimentResult:
    """Fixtures -> offline variant -> split -> desk CAE -> test-set scores."""
    start = time.perf_counter()
    records, fixtures = fixture_records(n_normal, n_anomalous, fixture_seed, clutter)
    split = patient_split(DatasetIndex.from_records(records), seed)
    processed, provenance = [], {}
    for rec in records:
        result = offline_process(rec.pixels, variant)[0]
        processed.append(with_offline(rec, result))
        provenance[rec.image_id] = result.provenance

    config = desk_config("CAE", seed)
    config.equalize = equalize
    if epochs is not None:
        config.epochs = epochs
    trained = train_model("CAE", split.select(processed, "train"), config, policy)

    target = (config.resolution, config.resolution)
    test = [eval_pipeline(r, target, equalize) for r in split.select(processed, "test")]
    table = score_dataset(trained, test, ["MSE", "MSE_topk"])
    aucs = evaluate_run(table, split, "test")

    argmax_hits, percent_hits, n = 0, 0, 0
    for rec in test:
        if rec.label != "positive":
            continue
        square = square_in_model_frame(fixtures[rec.image_id], provenance[rec.image_id], rec)
        heat = heatmap_for(trained, rec).values
        argmax_hits += bool(square.flat[int(np.argmax(heat))])
        percent_hits += bool((hottest_pixels(heat, 0.01) & square).any())
        n += 1
    return ExperimentResult(aucs, argmax_hits / n, percent_hits / n, trained.history, time.perf_counter() - start)

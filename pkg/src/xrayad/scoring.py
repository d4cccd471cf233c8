"""Image-level anomaly scores and pixel-level heatmaps.

Every score follows one polarity: higher means more anomalous.
Discriminator outputs are logits; they are squashed with the logistic
function and the "real" probability is inverted.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
from scipy.special import expit

from .preprocess import PreprocessedRecord

BASE_METRICS = (
    "MSE", "MSE_topk", "L1", "L1_topk", "KLD", "L1_plus_KLD", "MSE_plus_KLD",
    "DiscriminatorProb", "CodeDiscriminatorProb", "C_plus_D",
)
RECONSTRUCTION_KINDS = ("CAE", "VAE", "BiGAN", "aGAN")
METRIC_KINDS = {
    "MSE": RECONSTRUCTION_KINDS,
    "MSE_topk": RECONSTRUCTION_KINDS,
    "L1": RECONSTRUCTION_KINDS,
    "L1_topk": RECONSTRUCTION_KINDS,
    "KLD": ("VAE",),
    "L1_plus_KLD": ("VAE",),
    "MSE_plus_KLD": ("VAE",),
    "DiscriminatorProb": ("DCGAN", "BiGAN", "aGAN"),
    "CodeDiscriminatorProb": ("aGAN",),
    "C_plus_D": ("aGAN",),
}
REFERENCE_TOPK = 200
_TOPK_RE = re.compile(r"^(MSE|L1)_top(\d+|k)$")


def default_topk(resolution: int) -> int:
    """200 pixels at 512x512, scaled with the pixel count."""
    return max(1, int(round(REFERENCE_TOPK * (resolution / 512) ** 2)))


@dataclass(frozen=True)
class ScoreMetric:
    name: str
    k: int | None = None

    def __post_init__(self):
        if self.name not in BASE_METRICS:
            raise ValueError(f"unknown metric {self.name!r}")
        if self.name.endswith("_topk"):
            if self.k is None or self.k < 1:
                raise ValueError("top-k metrics need k >= 1")

    @classmethod
    def parse(cls, text: str, resolution: int = 512) -> "ScoreMetric":
        """Accepts ``MSE``, ``MSE_topk`` (default k) or ``MSE_top200``."""
        m = _TOPK_RE.match(text)
        if m:
            k = default_topk(resolution) if m.group(2) == "k" else int(m.group(2))
            return cls(f"{m.group(1)}_topk", k)
        return cls(text)

    def __str__(self) -> str:
        if self.k is not None:
            return self.name.replace("_topk", f"_top{self.k}")
        return self.name

    def supports(self, kind: str) -> bool:
        return kind in METRIC_KINDS[self.name]


def default_metrics(kind: str, resolution: int) -> list[ScoreMetric]:
    k = default_topk(resolution)
    names = [n for n in BASE_METRICS if kind in METRIC_KINDS[n]]
    return [ScoreMetric(n, k if n.endswith("_topk") else None) for n in names]


@dataclass
class Heatmap:
    values: np.ndarray
    mask: np.ndarray


def pixel_heatmap(x, x_hat, mask=None, error_kind: str = "squared") -> Heatmap:
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    mask = np.ones(x.shape, np.uint8) if mask is None else np.asarray(mask).astype(np.uint8)
    if mask.shape != x.shape:
        raise ValueError("mask shape does not match the image")
    diff = x - x_hat
    if error_kind == "squared":
        err = diff * diff
    elif error_kind == "absolute":
        err = np.abs(diff)
    else:
        raise ValueError(f"unknown error kind {error_kind!r}")
    return Heatmap(np.where(mask > 0, err, 0.0), mask)


def _masked_values(h, mask) -> np.ndarray:
    values = h.values if isinstance(h, Heatmap) else np.asarray(h, dtype=np.float64)
    if mask is None:
        mask = h.mask if isinstance(h, Heatmap) else np.ones(values.shape, np.uint8)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty mask")
    return values[mask]


def aggregate_mean(h, mask=None) -> float:
    """Mean heatmap value over the mask (exactly rounded sum)."""
    vals = _masked_values(h, mask)
    return math.fsum(vals.tolist()) / vals.size


def aggregate_topk(h, mask=None, k: int = REFERENCE_TOPK) -> float:
    """Mean of the ``k`` largest masked values."""
    if k < 1:
        raise ValueError("k must be >= 1")
    vals = _masked_values(h, mask)
    if k >= vals.size:
        return aggregate_mean(h, mask)
    top = np.partition(vals, vals.size - k)[vals.size - k:]
    return math.fsum(top.tolist()) / k


def _squash(logit: float) -> float:
    """Probability of "fake" from a real-vs-fake logit."""
    return float(expit(-logit))


def score_from_outputs(outputs: dict, x: np.ndarray, mask: np.ndarray, metric: ScoreMetric) -> float:
    """Score one image given the model outputs for it."""
    name = metric.name
    if name in ("MSE", "MSE_topk", "L1", "L1_topk", "L1_plus_KLD", "MSE_plus_KLD"):
        if "reconstruction" not in outputs:
            raise ValueError(f"{name} needs a reconstruction")
        error_kind = "absolute" if name.startswith("L1") else "squared"
        heat = pixel_heatmap(x, outputs["reconstruction"], mask, error_kind)
        value = aggregate_topk(heat, mask, metric.k) if name.endswith("_topk") else aggregate_mean(heat, mask)
        if name.endswith("_plus_KLD"):
            value += score_from_outputs(outputs, x, mask, ScoreMetric("KLD"))
        return value
    if name == "KLD":
        mu = np.asarray(outputs["mu"], dtype=np.float64)
        var = np.asarray(outputs["sigma"], dtype=np.float64) ** 2
        return float(0.5 * np.sum(var + mu * mu - 1.0 - np.log(var)))
    d = _squash(float(outputs["d_logit"])) if "d_logit" in outputs else None
    c = _squash(float(outputs["c_logit"])) if "c_logit" in outputs else None
    if name == "DiscriminatorProb" and d is not None:
        return d
    if name == "CodeDiscriminatorProb" and c is not None:
        return c
    if name == "C_plus_D" and c is not None and d is not None:
        return (c + d) / 2.0
    raise ValueError(f"model outputs do not support {name}")


def as_network_input(pixels: np.ndarray) -> np.ndarray:
    """Pixels at the precision the network sees them (float32), as float64."""
    return np.asarray(pixels, dtype=np.float32).astype(np.float64)


def analyze_batch(model, pixels: np.ndarray) -> list[dict]:
    """Run ``model.network.analyze`` on ``(N, H, W)`` pixels; one dict per image."""
    net = model.network if hasattr(model, "network") else model
    net.eval()
    with torch.no_grad():
        out = net.analyze(torch.from_numpy(np.asarray(pixels, dtype=np.float32)[:, None]))
    per_image = []
    for i in range(len(pixels)):
        item = {}
        for key, value in out.items():
            v = value[i].numpy().astype(np.float64)
            item[key] = v[0] if key == "reconstruction" else v
        per_image.append(item)
    return per_image


def _check_metric(model, metric: ScoreMetric) -> None:
    kind = model.kind if hasattr(model, "kind") else model.network.kind
    if not metric.supports(kind):
        raise ValueError(f"metric {metric} is not available for {kind}")


def score_image(model, record: PreprocessedRecord, metric: ScoreMetric | str) -> float:
    if isinstance(metric, str):
        metric = ScoreMetric.parse(metric, record.pixels.shape[0])
    _check_metric(model, metric)
    outputs = analyze_batch(model, record.pixels[None])[0]
    return score_from_outputs(outputs, as_network_input(record.pixels), record.mask, metric)


def heatmap_for(model, record: PreprocessedRecord, error_kind: str = "squared") -> Heatmap:
    outputs = analyze_batch(model, record.pixels[None])[0]
    if "reconstruction" not in outputs:
        raise ValueError("model has no reconstruction to build a heatmap from")
    return pixel_heatmap(as_network_input(record.pixels), outputs["reconstruction"], record.mask, error_kind)


@dataclass(frozen=True)
class ScoreRow:
    image_id: str
    patient_id: str
    label: str
    metric: str
    score: float


class ScoreTable:
    COLUMNS = ("image_id", "patient_id", "label", "metric", "score")

    def __init__(self, rows: Iterable[ScoreRow] = ()):
        self.rows = list(rows)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    @property
    def metrics(self) -> list[str]:
        return list(dict.fromkeys(r.metric for r in self.rows))

    def select(self, metric: str | None = None, patients: set[str] | None = None) -> "ScoreTable":
        return ScoreTable(
            r for r in self.rows
            if (metric is None or r.metric == metric) and (patients is None or r.patient_id in patients)
        )

    def scores_and_labels(self, metric: str, patients: set[str] | None = None) -> tuple[list[float], list[int]]:
        rows = self.select(metric, patients).rows
        return [r.score for r in rows], [int(r.label == "positive") for r in rows]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([r.image_id, r.patient_id, r.label, r.metric, repr(float(r.score))])

    @classmethod
    def from_csv(cls, path: str | Path) -> "ScoreTable":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != cls.COLUMNS:
                raise ValueError(f"{path}: expected columns {cls.COLUMNS}")
            return cls(ScoreRow(d["image_id"], d["patient_id"], d["label"], d["metric"], float(d["score"]))
                       for d in reader)


def score_dataset(
    model,
    records: Sequence[PreprocessedRecord],
    metrics: Sequence[ScoreMetric | str],
    batch_size: int = 32,
    flip: bool = False,
) -> ScoreTable:
    """Score preprocessed (non-augmented) records; one row per image and metric.

    ``flip`` negates every score, for runs whose polarity came out inverted.
    """
    resolution = records[0].pixels.shape[0] if records else 512
    metrics = [ScoreMetric.parse(m, resolution) if isinstance(m, str) else m for m in metrics]
    for metric in metrics:
        _check_metric(model, metric)
    rows = []
    for lo in range(0, len(records), batch_size):
        chunk = records[lo:lo + batch_size]
        outputs = analyze_batch(model, np.stack([r.pixels for r in chunk]))
        for rec, out in zip(chunk, outputs):
            for metric in metrics:
                s = score_from_outputs(out, as_network_input(rec.pixels), rec.mask, metric)
                rows.append(ScoreRow(rec.image_id, rec.patient_id, rec.label, str(metric), -s if flip else s))
    return ScoreTable(rows)


def save_heatmap(path: str | Path, heatmap: Heatmap) -> tuple[Path, Path]:
    """8-bit PNG scaled by the per-image maximum, plus the raw ``.npy`` values."""
    from PIL import Image

    path = Path(path)
    peak = heatmap.values.max()
    scaled = heatmap.values / peak if peak > 0 else np.zeros_like(heatmap.values)
    Image.fromarray(np.rint(scaled * 255).astype(np.uint8), mode="L").save(path)
    raw = path.with_suffix(".npy")
    np.save(raw, heatmap.values)
    return path, raw

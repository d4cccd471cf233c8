"""ROC-AUC, multi-seed aggregation, reports and heatmap overlays."""

from __future__ import annotations

import csv
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from PIL import Image
from scipy.stats import rankdata

from .core import SplitAssignment
from .scoring import ScoreTable

VARIANT_COLUMNS = [(v, he) for v in ("raw", "crop", "full") for he in (False, True)]


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic (ties count 1/2)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC-AUC needs both positive and negative labels")
    ranks = rankdata(scores)  # average ranks on ties
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def evaluate_run(table: ScoreTable, split: SplitAssignment | None = None, part: str = "test") -> dict[str, float]:
    """ROC-AUC per metric over the images of one split part."""
    if not len(table):
        raise ValueError("empty score table")
    patients = split.part(part) if split is not None else None
    result = {}
    for metric in table.metrics:
        scores, labels = table.scores_and_labels(metric, patients)
        if not scores:
            raise ValueError(f"no scored images for metric {metric} in part {part!r}")
        result[metric] = roc_auc(scores, labels)
    return result


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Sample mean and sample (n-1) standard deviation."""
    if len(values) < 2:
        raise ValueError("need at least two seeds")
    # fmean can land one ulp outside the data on ties; clamp it back
    mean = min(max(statistics.fmean(values), min(values)), max(values))
    return mean, statistics.stdev(values)


@dataclass
class EvalRow:
    model: str
    metric: str
    variant: str = "full"
    equalize: bool = False
    aucs: list[float] = field(default_factory=list)
    mean: float = float("nan")
    std: float = float("nan")

    def __post_init__(self):
        if self.variant not in ("raw", "crop", "full"):
            raise ValueError(f"unknown variant {self.variant!r}")
        for a in self.aucs:
            if not 0.0 <= a <= 1.0:
                raise ValueError(f"AUC {a} outside [0, 1]")

    def cell(self) -> str:
        if math.isnan(self.std):
            return _dotless(self.mean)
        return f"{_dotless(self.mean)} ± {_dotless(self.std)}"


def aggregate_seeds(
    aucs: Sequence[float], model: str = "", metric: str = "", variant: str = "full", equalize: bool = False
) -> EvalRow:
    """One report row from the per-seed AUCs of a grid cell."""
    mean, std = mean_std(aucs)
    return EvalRow(model, metric, variant, equalize, [float(a) for a in aucs], mean, std)


def _dotless(x: float) -> str:
    text = f"{x:.3f}"
    return text[1:] if text.startswith("0.") else text


def select_best(candidates: Mapping[str, tuple[float, float]]) -> tuple[str, float]:
    """Pick the configuration with the best validation AUC and return its
    name and test AUC.  ``candidates`` maps name -> (validation, test)."""
    if not candidates:
        raise ValueError("no candidates")
    name = max(sorted(candidates), key=lambda k: candidates[k][0])
    return name, candidates[name][1]


def format_report(rows: Iterable[EvalRow]) -> str:
    """Text table with one column per (variant, equalisation) cell."""
    rows = list(rows)
    header = ["", *(f"{v} {'w/ HE' if he else 'w/o HE'}" for v, he in VARIANT_COLUMNS)]
    grid: dict[tuple[str, str], dict] = {}
    for r in rows:
        grid.setdefault((r.model, r.metric), {})[(r.variant, r.equalize)] = r.cell()
    lines = []
    widths = [max(22, len(header[0]))] + [15] * len(VARIANT_COLUMNS)

    def fmt(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()

    lines.append(fmt(header))
    current = None
    for (model, metric), cells in grid.items():
        if model != current:
            lines.append(model)
            current = model
        lines.append(fmt([f"  {metric}", *(cells.get(col, "-") for col in VARIANT_COLUMNS)]))
    return "\n".join(lines) + "\n"


def write_report_csv(path: str | Path, rows: Iterable[EvalRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "metric", "variant", "equalize", "n_seeds", "mean", "std", "aucs"])
        for r in rows:
            w.writerow([r.model, r.metric, r.variant, int(r.equalize), len(r.aucs), f"{r.mean:.6f}",
                        f"{r.std:.6f}", ";".join(f"{a:.6f}" for a in r.aucs)])


def colorize(heatmap: np.ndarray, cmap: str = "jet") -> np.ndarray:
    """RGB uint8 image of ``heatmap`` scaled by its maximum."""
    from matplotlib import colormaps

    values = np.asarray(heatmap, dtype=np.float64)
    peak = values.max() if values.size else 0.0
    scaled = values / peak if peak > 0 else np.zeros_like(values)
    rgba = colormaps[cmap](scaled)
    return np.rint(rgba[..., :3] * 255).astype(np.uint8)


def render_overlay(image: np.ndarray, heatmap: np.ndarray, path: str | Path | None = None) -> np.ndarray:
    """Grayscale image and colour-mapped heatmap side by side."""
    image = np.asarray(image, dtype=np.float64)
    heat = getattr(heatmap, "values", heatmap)
    if image.shape != np.shape(heat):
        raise ValueError("image and heatmap shapes differ")
    gray = np.rint(np.clip(image, 0, 1) * 255).astype(np.uint8)
    panel = np.concatenate([np.repeat(gray[..., None], 3, axis=2), colorize(heat)], axis=1)
    if path is not None:
        Image.fromarray(panel, mode="RGB").save(path)
    return panel


def hottest_pixels(heatmap: np.ndarray, fraction: float = 0.01) -> np.ndarray:
    """Boolean mask of the top ``fraction`` of heatmap values (at least one pixel)."""
    values = np.asarray(getattr(heatmap, "values", heatmap), dtype=np.float64)
    k = max(1, int(round(fraction * values.size)))
    flat = np.argsort(values, axis=None, kind="stable")[::-1][:k]
    out = np.zeros(values.size, dtype=bool)
    out[flat] = True
    return out.reshape(values.shape)

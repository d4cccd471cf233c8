"""Dataset ingestion, record types and the patient-level split."""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

LABELS = ("negative", "positive")
SPLIT_PARTS = ("train", "validation", "test")


@dataclass
class ImageRecord:
    """One grayscale radiograph plus its patient/study identity.

    ``pixels`` and ``mask`` may be ``None`` for index-only records; use
    :func:`load_pixels` to read them from ``source_path``.
    """

    patient_id: str
    study_id: str
    label: str
    source_path: Path | None = None
    pixels: np.ndarray | None = None
    mask: np.ndarray | None = None
    image_id: str = ""
    channels: int = 1

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")
        if not self.image_id:
            stem = Path(self.source_path).stem if self.source_path else "image"
            self.image_id = f"{self.patient_id}_{self.study_id}_{stem}"
        if self.pixels is not None:
            check_pixels(self.pixels)
            if self.mask is not None and self.mask.shape != self.pixels.shape:
                raise ValueError("mask shape does not match pixels")

    @property
    def is_positive(self) -> bool:
        return self.label == "positive"

    @property
    def needs_grayscale(self) -> bool:
        return self.channels == 3


def check_pixels(pixels: np.ndarray) -> None:
    if pixels.ndim != 2 or pixels.shape[0] < 1 or pixels.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D image, got shape {pixels.shape}")
    if pixels.size and (pixels.min() < 0.0 or pixels.max() > 1.0):
        raise ValueError("pixel intensities must lie in [0, 1]")


@dataclass(frozen=True)
class DatasetIndex:
    records: tuple[ImageRecord, ...]
    patients: frozenset[str]
    positive_patients: frozenset[str]

    @classmethod
    def from_records(cls, records: Iterable[ImageRecord]) -> "DatasetIndex":
        records = tuple(records)
        study_labels: dict[tuple[str, str], str] = {}
        for r in records:
            key = (r.patient_id, r.study_id)
            if study_labels.setdefault(key, r.label) != r.label:
                raise ValueError(f"conflicting labels inside study {key}")
        patients = frozenset(r.patient_id for r in records)
        positive = frozenset(r.patient_id for r in records if r.is_positive)
        return cls(records, patients, positive)

    @property
    def negative_patients(self) -> frozenset[str]:
        return self.patients - self.positive_patients

    @property
    def studies(self) -> set[tuple[str, str]]:
        return {(r.patient_id, r.study_id) for r in self.records}

    def summary(self) -> dict[str, int]:
        positive_studies = {(r.patient_id, r.study_id) for r in self.records if r.is_positive}
        return {
            "images": len(self.records),
            "studies": len(self.studies),
            "patients": len(self.patients),
            "positive_studies": len(positive_studies),
            "positive_images": sum(r.is_positive for r in self.records),
        }


@dataclass(frozen=True)
class SplitAssignment:
    mapping: Mapping[str, str]
    seed: int

    def part(self, name: str) -> set[str]:
        if name not in SPLIT_PARTS:
            raise ValueError(f"unknown split part {name!r}")
        return {p for p, s in self.mapping.items() if s == name}

    def part_of(self, patient_id: str) -> str:
        return self.mapping[patient_id]

    def select(self, records: Iterable, part: str) -> list:
        patients = self.part(part)
        return [r for r in records if r.patient_id in patients]

    def save(self, path: str | Path) -> None:
        lines = [f"# seed={self.seed}", "patient_id\tsplit"]
        lines += [f"{p}\t{self.mapping[p]}" for p in sorted(self.mapping)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SplitAssignment":
        lines = Path(path).read_text().splitlines()
        if not lines or not lines[0].startswith("# seed="):
            raise ValueError(f"{path}: missing seed header")
        seed = int(lines[0].split("=", 1)[1])
        mapping = {}
        for line in lines[2:]:
            if line.strip():
                patient, part = line.split("\t")
                mapping[patient] = part
        return cls(mapping, seed)


def _parse_study_dir(name: str) -> tuple[str, str] | None:
    study, sep, label = name.rpartition("_")
    if not sep or label not in LABELS:
        return None
    return study, label


def ingest_dataset(root: str | Path) -> DatasetIndex:
    """Index ``<root>/<patient>/<study>_<label>/<image>.png``.

    Unreadable files are skipped with a warning.  Pixels are not kept in
    memory; the channel count is recorded so 3-channel images can be
    converted on load.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"{root} is not a directory")
    records = []
    for path in sorted(root.glob("*/*/*.png")):
        parsed = _parse_study_dir(path.parent.name)
        if parsed is None:
            log.warning("skipping %s: study directory is not <study>_<label>", path)
            continue
        study, label = parsed
        try:
            with Image.open(path) as im:
                im.load()
                channels = len(im.getbands())
        except Exception as exc:  # any decoder failure
            log.warning("skipping unreadable image %s: %s", path, exc)
            continue
        if im.mode == "LA":
            channels = 1
        elif channels == 4:
            channels = 3
        records.append(
            ImageRecord(
                patient_id=path.parent.parent.name,
                study_id=study,
                label=label,
                source_path=path,
                channels=channels,
            )
        )
    if not records:
        raise ValueError(f"no images found under {root}")
    return DatasetIndex.from_records(records)


def to_grayscale(pixels: np.ndarray) -> np.ndarray:
    """Reduce an ``(h, w, 3)`` image to one channel by the channel mean."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim == 2:
        return pixels
    if pixels.ndim == 3 and pixels.shape[2] == 1:
        return pixels[..., 0]
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError(f"expected 1 or 3 channels, got shape {pixels.shape}")
    return pixels.mean(axis=2)


def read_png(path: str | Path) -> np.ndarray:
    """Read an 8/16-bit PNG into a float grayscale array in [0, 1]."""
    with Image.open(path) as im:
        if im.mode in ("RGBA", "P", "CMYK"):
            im = im.convert("RGB")
        elif im.mode == "LA":
            im = im.convert("L")
        arr = np.asarray(im)
    scale = 65535.0 if arr.dtype == np.uint16 or im.mode.startswith("I") else 255.0
    return np.clip(to_grayscale(arr.astype(np.float64) / scale), 0.0, 1.0)


def write_png(path: str | Path, pixels: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(pixels, dtype=np.float64) * 255.0), 0, 255)
    Image.fromarray(arr.astype(np.uint8), mode="L").save(path)


def load_pixels(record: ImageRecord) -> ImageRecord:
    """Return a copy of ``record`` with pixels read from disk."""
    if record.source_path is None:
        raise ValueError(f"{record.image_id} has no source path")
    pixels = read_png(record.source_path)
    return ImageRecord(
        patient_id=record.patient_id,
        study_id=record.study_id,
        label=record.label,
        source_path=record.source_path,
        pixels=pixels,
        mask=record.mask,
        image_id=record.image_id,
        channels=1,
    )


def patient_split(index: DatasetIndex, seed: int) -> SplitAssignment:
    """Assign patients to train/validation/test without leakage.

    Positive patients are shuffled and dealt alternately to validation and
    test (validation first, so it takes the extra one on odd counts).  Each
    part then receives as many randomly sampled negative patients as it has
    positives; all remaining negatives go to train.
    """
    if not index.patients:
        raise ValueError("cannot split an empty index")
    rng = random.Random(seed)
    positives = sorted(index.positive_patients)
    negatives = sorted(index.negative_patients)
    if len(negatives) < len(positives):
        raise ValueError(
            f"need at least as many negative patients ({len(negatives)}) "
            f"as positive patients ({len(positives)}) to balance the split"
        )
    rng.shuffle(positives)
    val_pos, test_pos = positives[0::2], positives[1::2]
    picked = rng.sample(negatives, len(positives))
    val_neg, test_neg = picked[: len(val_pos)], picked[len(val_pos):]

    mapping = {p: "train" for p in negatives}
    mapping.update({p: "validation" for p in val_pos + val_neg})
    mapping.update({p: "test" for p in test_pos + test_neg})
    return SplitAssignment(mapping, seed)


@dataclass
class SplitReport:
    """Per-part image counts of a split, handy for logging."""

    counts: dict[str, dict[str, int]] = field(default_factory=dict)

    @classmethod
    def of(cls, index: DatasetIndex, split: SplitAssignment) -> "SplitReport":
        counts = {part: {"negative": 0, "positive": 0} for part in SPLIT_PARTS}
        for r in index.records:
            counts[split.part_of(r.patient_id)][r.label] += 1
        return cls(counts)

    def images(self, part: str) -> int:
        return sum(self.counts[part].values())

"""``xrayad`` command line: preprocess, split, train, score, evaluate, heatmap.

Settings come from a YAML run config overridden by flags.  The data root
may also be given by the ``XRAYAD_DATA_ROOT`` environment variable.

Exit status: 0 success, 1 invalid configuration or missing inputs,
2 failure while running.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import yaml

from .core import ImageRecord, SplitAssignment, ingest_dataset, load_pixels, patient_split, read_png, write_png
from .evaluation import VARIANT_COLUMNS, EvalRow, aggregate_seeds, evaluate_run, format_report, render_overlay, write_report_csv
from .models import desk_config, load_checkpoint, reference_config, save_checkpoint, train_model
from .models.architectures import canonical_kind
from .models.training import write_history_csv
from .preprocess import VARIANTS, AugmentationPolicy, eval_pipeline, offline_process
from .scoring import ScoreMetric, ScoreTable, default_metrics, heatmap_for, save_heatmap, score_dataset

log = logging.getLogger("xrayad")

DATA_ROOT_ENV = "XRAYAD_DATA_ROOT"
MANIFEST_COLUMNS = ("image_id", "source_image_id", "patient_id", "study_id", "label", "pixels", "mask", "provenance")


class ConfigError(Exception):
    """Invalid settings or missing prerequisite files (exit status 1)."""


@dataclass
class RunConfig:
    data_root: str = ""
    output_root: str = "runs"
    model: str = "CAE"
    variant: str = "full"
    equalize: bool = False
    policy: str | None = None  # None: the model's default
    scale: str = "desk"
    train: dict = field(default_factory=dict)
    metrics: list[str] = field(default_factory=list)  # empty: every metric the model supports
    seeds: list[int] = field(default_factory=lambda: [42])
    split_seed: int = 42
    workers: int = 1

    def validate(self, need_data: bool = True) -> None:
        if need_data:
            if not self.data_root:
                raise ConfigError(f"no data root: set data_root or {DATA_ROOT_ENV}")
            if not Path(self.data_root).is_dir():
                raise ConfigError(f"data root {self.data_root} does not exist")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.scale not in ("desk", "reference"):
            raise ConfigError("scale must be 'desk' or 'reference'")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        try:
            self.model = canonical_kind(self.model)
            if self.policy is not None:
                AugmentationPolicy.named(self.policy)
            self.train_config(self.seeds[0])
            for m in self.metrics:
                if not ScoreMetric.parse(m).supports(self.model):
                    raise ValueError(f"metric {m} is not available for {self.model}")
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_yaml(self) -> str:
        return yaml.safe_dump(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_yaml(cls, text: str) -> "RunConfig":
        data = yaml.safe_load(text) or {}
        if not isinstance(data, dict):
            raise ConfigError("run config must be a mapping")
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**data)

    def train_config(self, seed: int):
        base = desk_config(self.model, seed) if self.scale == "desk" else reference_config(self.model, seed)
        d = base.to_dict()
        d.update(self.train)
        d.update(seed=seed, equalize=self.equalize)
        if self.policy is not None:
            d["policy"] = self.policy
        return type(base).from_dict(d)

    # output layout
    @property
    def out(self) -> Path:
        return Path(self.output_root)

    @property
    def preprocessed_dir(self) -> Path:
        return self.out / "preprocessed" / self.variant

    @property
    def manifest_path(self) -> Path:
        return self.preprocessed_dir / "manifest.csv"

    @property
    def split_path(self) -> Path:
        return self.out / "split.tsv"

    def run_dir(self, variant: str | None = None, equalize: bool | None = None) -> Path:
        variant = variant or self.variant
        equalize = self.equalize if equalize is None else equalize
        return self.out / "models" / f"{self.model}_{variant}_{'he' if equalize else 'nohe'}"

    def metric_list(self) -> list[str]:
        if self.metrics:
            return list(self.metrics)
        resolution = self.train_config(self.seeds[0]).resolution
        return [str(m) for m in default_metrics(self.model, resolution)]


# --- manifest ------------------------------------------------------------


def _process_one(args):
    record, variant, out_dir = args
    record = load_pixels(record)
    results = offline_process(record.pixels, variant)
    rows = []
    for i, res in enumerate(results):
        image_id = record.image_id if len(results) == 1 else f"{record.image_id}_h{i}"
        pix, mask = f"{image_id}.png", f"{image_id}.mask.png"
        write_png(out_dir / pix, res.pixels)
        write_png(out_dir / mask, res.mask.astype(np.float64))
        rows.append({
            "image_id": image_id, "source_image_id": record.image_id, "patient_id": record.patient_id,
            "study_id": record.study_id, "label": record.label, "pixels": pix, "mask": mask,
            "provenance": json.dumps(res.provenance, sort_keys=True),
        })
    return record.image_id, rows


def read_manifest(path: Path) -> list[dict]:
    if not path.is_file():
        raise ConfigError(f"manifest {path} not found; run 'xrayad preprocess' first")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_manifest(path: Path, rows: list[dict]) -> None:
    rows = sorted(rows, key=lambda r: r["image_id"])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=MANIFEST_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def manifest_records(cfg: RunConfig) -> list[ImageRecord]:
    records = []
    for row in read_manifest(cfg.manifest_path):
        pixels = read_png(cfg.preprocessed_dir / row["pixels"])
        mask = (read_png(cfg.preprocessed_dir / row["mask"]) > 0.5).astype(np.uint8)
        records.append(ImageRecord(row["patient_id"], row["study_id"], row["label"],
                                   cfg.preprocessed_dir / row["pixels"], pixels, mask, row["image_id"]))
    return records


def load_split(cfg: RunConfig) -> SplitAssignment:
    if not cfg.split_path.is_file():
        raise ConfigError(f"split manifest {cfg.split_path} not found; run 'xrayad split' first")
    return SplitAssignment.load(cfg.split_path)


# --- commands --------------------------------------------------------------


def cmd_preprocess(cfg: RunConfig, force: bool = False) -> int:
    cfg.validate()
    index = ingest_dataset(cfg.data_root)
    out_dir = cfg.preprocessed_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    previous = read_manifest(cfg.manifest_path) if cfg.manifest_path.is_file() and not force else []
    done = {r["source_image_id"] for r in previous}
    todo = [r for r in index.records if r.image_id not in done]
    jobs = [(r, cfg.variant, out_dir) for r in todo]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_process_one, jobs))
    else:
        results = [_process_one(j) for j in jobs]
    rows = previous + [row for _, rs in results for row in rs]
    write_manifest(cfg.manifest_path, rows)
    print(f"preprocessed {len(todo)} new images ({len(index.records) - len(todo)} already done), "
          f"{len(rows)} outputs in {cfg.manifest_path}")
    return 0


def cmd_split(cfg: RunConfig, force: bool = False) -> int:
    cfg.validate()
    if cfg.split_path.exists() and not force:
        print(f"split manifest {cfg.split_path} exists; use --force to redraw it")
        return 0
    index = ingest_dataset(cfg.data_root)
    split = patient_split(index, cfg.split_seed)
    cfg.out.mkdir(parents=True, exist_ok=True)
    split.save(cfg.split_path)
    counts = {p: len(split.part(p)) for p in ("train", "validation", "test")}
    print(f"split {len(index.patients)} patients: {counts} -> {cfg.split_path}")
    return 0


def cmd_train(cfg: RunConfig, force: bool = False) -> int:
    cfg.validate(need_data=False)
    split = load_split(cfg)
    records = manifest_records(cfg)
    unknown = {r.patient_id for r in records} - set(split.mapping)
    if unknown:
        raise ConfigError(f"{len(unknown)} patients missing from the split manifest")
    train = split.select(records, "train")
    if any(r.is_positive for r in train):
        raise ConfigError("train part contains positive images; refusing to train")
    torch.set_num_threads(cfg.workers)
    for seed in cfg.seeds:
        run = cfg.run_dir() / f"seed{seed}"
        ckpt = run / "checkpoint.pt"
        if ckpt.exists() and not force:
            print(f"{ckpt} exists; skipping")
            continue
        run.mkdir(parents=True, exist_ok=True)
        tc = cfg.train_config(seed)
        result = train_model(cfg.model, train, tc)
        save_checkpoint(ckpt, result)
        write_history_csv(run / "history.csv", result.history)
        print(f"trained {cfg.model} seed {seed} on {len(train)} images -> {ckpt}")
    return 0


def _eval_records(cfg: RunConfig, split: SplitAssignment, resolution: int):
    records = [r for r in manifest_records(cfg) if split.mapping.get(r.patient_id) in ("validation", "test")]
    return [eval_pipeline(r, (resolution, resolution), cfg.equalize) for r in records]


def _checkpoint(cfg: RunConfig, seed: int) -> Path:
    ckpt = cfg.run_dir() / f"seed{seed}" / "checkpoint.pt"
    if not ckpt.is_file():
        raise ConfigError(f"checkpoint {ckpt} not found; run 'xrayad train' first")
    return ckpt


def cmd_score(cfg: RunConfig, force: bool = False) -> int:
    cfg.validate(need_data=False)
    split = load_split(cfg)
    torch.set_num_threads(cfg.workers)
    for seed in cfg.seeds:
        out = cfg.run_dir() / f"seed{seed}" / "scores.csv"
        if out.exists() and not force:
            print(f"{out} exists; skipping")
            continue
        model = load_checkpoint(_checkpoint(cfg, seed))
        records = _eval_records(cfg, split, model.config.resolution)
        table = score_dataset(model, records, cfg.metric_list())
        table.to_csv(out)
        print(f"scored {len(records)} images with {len(table.metrics)} metrics -> {out}")
    return 0


def _cell_rows(cfg: RunConfig, split: SplitAssignment, variant: str, equalize: bool):
    """Report rows of one grid cell, or None when no scores exist."""
    run = cfg.run_dir(variant, equalize)
    per_seed = {}
    for seed in cfg.seeds:
        path = run / f"seed{seed}" / "scores.csv"
        if path.is_file():
            per_seed[seed] = evaluate_run(ScoreTable.from_csv(path), split, "test")
    if not per_seed:
        return None
    if len(per_seed) < len(cfg.seeds):
        missing = sorted(set(cfg.seeds) - set(per_seed))
        raise ConfigError(f"{run}: no scores for seeds {missing}")
    metrics = list(next(iter(per_seed.values())))
    rows = []
    for metric in metrics:
        aucs = [per_seed[s][metric] for s in cfg.seeds]
        if len(aucs) > 1:
            rows.append(aggregate_seeds(aucs, cfg.model, metric, variant, equalize))
        else:
            rows.append(EvalRow(cfg.model, metric, variant, equalize, aucs, aucs[0], float("nan")))
    return rows


def cmd_evaluate(cfg: RunConfig, grid: bool = False, heatmaps: Sequence[str] = ()) -> int:
    cfg.validate(need_data=False)
    split = load_split(cfg)
    cells = VARIANT_COLUMNS if grid else [(cfg.variant, cfg.equalize)]
    rows = []
    for variant, equalize in cells:
        cell = _cell_rows(cfg, split, variant, equalize)
        if cell is None and not grid:
            raise ConfigError(f"no score tables under {cfg.run_dir(variant, equalize)}; run 'xrayad score' first")
        rows += cell or []
    if not rows:
        raise ConfigError("no score tables found for any grid cell")
    text = format_report(rows)
    report_dir = cfg.out / "reports"
    report_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{cfg.model}_{'grid' if grid else cfg.variant + ('_he' if cfg.equalize else '_nohe')}"
    (report_dir / f"{stem}.txt").write_text(text)
    write_report_csv(report_dir / f"{stem}.csv", rows)
    print(text, end="")
    if heatmaps:
        cmd_heatmap(cfg, heatmaps)
    return 0


def cmd_heatmap(cfg: RunConfig, image_ids: Sequence[str]) -> int:
    cfg.validate(need_data=False)
    if not image_ids:
        raise ConfigError("no image ids given; use --heatmap ID")
    seed = cfg.seeds[0]
    model = load_checkpoint(_checkpoint(cfg, seed))
    by_id = {r.image_id: r for r in manifest_records(cfg)}
    missing = [i for i in image_ids if i not in by_id]
    if missing:
        raise ConfigError(f"unknown image ids {missing}")
    out_dir = cfg.run_dir() / f"seed{seed}" / "heatmaps"
    out_dir.mkdir(parents=True, exist_ok=True)
    res = model.config.resolution
    for image_id in image_ids:
        rec = eval_pipeline(by_id[image_id], (res, res), cfg.equalize)
        heat = heatmap_for(model, rec)
        save_heatmap(out_dir / f"{image_id}.png", heat)
        render_overlay(rec.pixels, heat, out_dir / f"{image_id}_overlay.png")
        print(f"heatmap for {image_id} -> {out_dir}")
    return 0


# --- argument parsing ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run config")
    common.add_argument("--data-root", help=f"dataset root (default: ${DATA_ROOT_ENV})")
    common.add_argument("--output-root", help="directory for all outputs")
    common.add_argument("--seed", type=int, action="append", help="training seed; repeat for several")
    common.add_argument("--variant", choices=VARIANTS)
    common.add_argument("--equalize", choices=("on", "off"))
    common.add_argument("--model")
    common.add_argument("--metric", action="append", help="score metric; repeat for several")
    common.add_argument("--workers", type=int)
    common.add_argument("--force", action="store_true", help="redo work whose outputs already exist")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="xrayad", description="Anomaly detection pipeline for grayscale radiographs.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("preprocess", "split", "train", "score"):
        sub.add_parser(name, parents=[common])
    ev = sub.add_parser("evaluate", parents=[common])
    ev.add_argument("--grid", action="store_true", help="report every variant/equalization cell found")
    ev.add_argument("--heatmap", action="append", default=[], metavar="ID", help="also write an overlay")
    hm = sub.add_parser("heatmap", parents=[common])
    hm.add_argument("--heatmap", action="append", default=[], metavar="ID", help="image id to render")
    return parser


def resolve_config(args: argparse.Namespace, environ=os.environ) -> RunConfig:
    if args.config is not None and not args.config.is_file():
        raise ConfigError(f"config file {args.config} not found")
    cfg = RunConfig.from_yaml(args.config.read_text()) if args.config else RunConfig()
    if args.config is None or not cfg.data_root:
        cfg.data_root = environ.get(DATA_ROOT_ENV, cfg.data_root)
    overrides = {
        "data_root": args.data_root,
        "output_root": args.output_root,
        "seeds": args.seed,
        "variant": args.variant,
        "equalize": None if args.equalize is None else args.equalize == "on",
        "model": args.model,
        "metrics": args.metric,
        "workers": args.workers,
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "preprocess":
            return cmd_preprocess(cfg, args.force)
        if args.command == "split":
            return cmd_split(cfg, args.force)
        if args.command == "train":
            return cmd_train(cfg, args.force)
        if args.command == "score":
            return cmd_score(cfg, args.force)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.grid, args.heatmap)
        return cmd_heatmap(cfg, args.heatmap)
    except (ConfigError, yaml.YAMLError) as exc:
        print(f"xrayad: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any stage failure maps to status 2
        log.debug("failure", exc_info=True)
        print(f"xrayad: failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Unsupervised anomaly detection for grayscale radiographs.

Offline/online preprocessing, five model families (CAE, VAE, DCGAN,
BiGAN, alpha-GAN), image- and pixel-level scoring, and a patient-level
evaluation harness.
"""

from .core import DatasetIndex, ImageRecord, SplitAssignment, ingest_dataset, patient_split, to_grayscale
from .evaluation import EvalRow, aggregate_seeds, evaluate_run, render_overlay, roc_auc
from .preprocess import AugmentationPolicy, PreprocessedRecord, eval_pipeline, offline_process, online_pipeline
from .scoring import ScoreMetric, ScoreTable, aggregate_mean, aggregate_topk, pixel_heatmap, score_dataset, score_image

__version__ = "0.1.0"

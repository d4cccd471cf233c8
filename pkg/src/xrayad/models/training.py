"""Training configurations, loops and checkpoint files."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..core import ImageRecord
from ..preprocess import AugmentationPolicy, online_pipeline, worker_rng
from .architectures import ArchitectureSpec, build_architecture, canonical_kind
from .losses import (
    hinge_adversarial_loss,
    kld_from_logvar,
    masked_reconstruction_loss,
    reconstruction_loss,
    soften_labels,
)
from .networks import Network, build_network

log = logging.getLogger(__name__)

REFERENCE_SEEDS = (42, 4242, 424242, 42424242)
CHECKPOINT_FORMAT = "xrayad-checkpoint/1"
GAN_KINDS = ("DCGAN", "BiGAN", "aGAN")


@dataclass
class TrainConfig:
    kind: str
    batch_size: int = 32
    resolution: int = 512
    epochs: int = 1000
    lr: dict[str, float] = field(default_factory=lambda: {"model": 1e-4})
    seed: int = 42
    batch_norm: bool = True
    spectral_norm: bool = False
    soft_delta: float = 0.0
    minibatch_discrimination: bool = False
    hinge_loss: bool = False
    z_dim: int | None = None
    width: float = 1.0
    disc_width: float | None = None
    policy: str = "default"
    equalize: bool = False
    masked_loss: bool = True
    recon_weight: float = 1.0
    kld_weight: float | None = None  # None: 1 / pixel count
    adam_betas: tuple[float, float] = (0.9, 0.999)

    def __post_init__(self):
        self.kind = canonical_kind(self.kind)
        self.adam_betas = tuple(self.adam_betas)
        self.validate()

    def validate(self) -> None:
        if self.batch_size < 1 or self.resolution < 1 or self.epochs < 0:
            raise ValueError("batch size, resolution and epochs must be positive")
        if any(v <= 0 for v in self.lr.values()):
            raise ValueError("learning rates must be positive")
        if self.hinge_loss and self.kind not in ("BiGAN", "aGAN"):
            raise ValueError("hinge loss is only used for BiGAN and aGAN")
        if self.kind in ("BiGAN", "aGAN") and not self.hinge_loss:
            raise ValueError(f"{self.kind} is trained with the hinge loss")
        if self.soft_delta and self.kind != "DCGAN":
            raise ValueError("soft labels only apply to the DCGAN discriminator")
        if not 0.0 <= self.soft_delta < 0.5:
            raise ValueError("soft_delta must lie in [0, 0.5)")
        if self.minibatch_discrimination and self.kind not in ("DCGAN", "aGAN"):
            raise ValueError("minibatch discrimination is only used for DCGAN and aGAN")
        missing = set(LR_GROUPS[self.kind]) - set(self.lr)
        if missing:
            raise ValueError(f"{self.kind} needs learning rates for {sorted(missing)}")

    def architecture(self) -> ArchitectureSpec:
        kernels = {"DCGAN": 16, "aGAN": 4}.get(self.kind, 0) if self.minibatch_discrimination else 0
        options = {"batch_norm": self.batch_norm}
        if self.kind in GAN_KINDS:
            options.update(spectral_norm=self.spectral_norm, minibatch_kernels=kernels)
        return build_architecture(
            self.kind, self.resolution, width=self.width, disc_width=self.disc_width, z_dim=self.z_dim, **options
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys {sorted(unknown)}")
        return cls(**d)


LR_GROUPS = {
    "CAE": ("model",),
    "VAE": ("model",),
    "DCGAN": ("generator", "discriminator"),
    "BiGAN": ("generator", "discriminator"),
    "aGAN": ("generator", "discriminator", "code_discriminator"),
}

_GAN_BETAS = (0.5, 0.999)


def reference_config(kind: str, seed: int = 42) -> TrainConfig:
    """Full-size settings as published (GPU scale)."""
    kind = canonical_kind(kind)
    if kind == "CAE":
        return TrainConfig("CAE", 32, 512, 1000, {"model": 1e-4}, seed, policy="advanced")
    if kind == "VAE":
        return TrainConfig("VAE", 32, 512, 500, {"model": 1e-4}, seed, z_dim=1024)
    if kind == "DCGAN":
        return TrainConfig("DCGAN", 80, 512, 500, {"generator": 1e-3, "discriminator": 1e-5}, seed,
                           batch_norm=False, spectral_norm=True, soft_delta=0.01, minibatch_discrimination=True,
                           z_dim=2048, adam_betas=_GAN_BETAS)
    if kind == "BiGAN":
        return TrainConfig("BiGAN", 16, 128, 500, {"generator": 1e-3, "discriminator": 5e-6}, seed,
                           spectral_norm=True, hinge_loss=True, z_dim=100, adam_betas=_GAN_BETAS)
    return TrainConfig("aGAN", 16, 128, 500,
                       {"generator": 1e-3, "discriminator": 5e-6, "code_discriminator": 5e-6}, seed,
                       spectral_norm=True, hinge_loss=True, minibatch_discrimination=True, z_dim=100,
                       recon_weight=10.0, adam_betas=_GAN_BETAS)


def bae_config(seed: int = 42) -> TrainConfig:
    """The listed "BAE" settings: a CAE trained for 500 epochs."""
    return TrainConfig("CAE", 32, 512, 500, {"model": 1e-4}, seed, policy="advanced")


def desk_config(kind: str, seed: int = 42, resolution: int = 64) -> TrainConfig:
    """Small CPU-friendly settings at ``resolution`` (64 by default)."""
    kind = canonical_kind(kind)
    if kind == "CAE":
        return TrainConfig("CAE", 8, resolution, 100, {"model": 2e-3}, seed, width=0.25, policy="advanced")
    if kind == "VAE":
        return TrainConfig("VAE", 16, resolution, 40, {"model": 2e-3}, seed, width=0.5, z_dim=64)
    if kind == "DCGAN":
        return TrainConfig("DCGAN", 16, resolution, 20, {"generator": 1e-3, "discriminator": 2e-4}, seed,
                           batch_norm=False, spectral_norm=True, soft_delta=0.01, minibatch_discrimination=True,
                           z_dim=64, width=1 / 16, disc_width=0.25, adam_betas=_GAN_BETAS)
    if kind == "BiGAN":
        return TrainConfig("BiGAN", 16, resolution, 20, {"generator": 1e-3, "discriminator": 2e-4}, seed,
                           spectral_norm=True, hinge_loss=True, z_dim=32, width=1 / 16, disc_width=1 / 16,
                           adam_betas=_GAN_BETAS)
    return TrainConfig("aGAN", 16, resolution, 20,
                       {"generator": 1e-3, "discriminator": 2e-4, "code_discriminator": 2e-4}, seed,
                       spectral_norm=True, hinge_loss=True, minibatch_discrimination=True, z_dim=32,
                       width=1 / 16, disc_width=1 / 16, recon_weight=10.0, adam_betas=_GAN_BETAS)


@dataclass
class TrainResult:
    network: Network
    config: TrainConfig
    history: list[dict] = field(default_factory=list)

    @property
    def kind(self) -> str:
        return self.config.kind

    @property
    def architecture(self) -> ArchitectureSpec:
        return self.network.arch


# --- per-kind update steps ----------------------------------------------


class _Trainer:
    def __init__(self, net: Network, config: TrainConfig, generator: torch.Generator):
        self.net = net
        self.config = config
        self.gen = generator
        self.opts = self.make_optimizers()

    def adam(self, params, group):
        return torch.optim.Adam(params, lr=self.config.lr[group], betas=self.config.adam_betas)

    def make_optimizers(self):
        return {"model": self.adam(self.net.parameters(), "model")}

    def recon(self, x, x_hat, m):
        if self.config.masked_loss:
            return masked_reconstruction_loss(x, x_hat, m)
        return reconstruction_loss(x, x_hat)

    def step(self, x, m) -> dict[str, float]:
        raise NotImplementedError


class _CAETrainer(_Trainer):
    def step(self, x, m):
        opt = self.opts["model"]
        opt.zero_grad()
        loss = self.recon(x, self.net(x), m)
        loss.backward()
        opt.step()
        return {"loss": loss.item()}


class _VAETrainer(_Trainer):
    def step(self, x, m):
        opt = self.opts["model"]
        opt.zero_grad()
        x_hat, mu, logvar = self.net(x, generator=self.gen)
        rec = self.recon(x, x_hat, m)
        kld = kld_from_logvar(mu, logvar).mean()
        weight = self.config.kld_weight
        if weight is None:
            weight = 1.0 / x[0].numel()
        loss = rec + weight * kld
        loss.backward()
        opt.step()
        return {"loss": loss.item(), "reconstruction": rec.item(), "kld": kld.item()}


def _params(net: Network, *names: str):
    return [p for n in names for p in net.nets[n].parameters()]


class _DCGANTrainer(_Trainer):
    def make_optimizers(self):
        return {
            "generator": self.adam(_params(self.net, "generator"), "generator"),
            "discriminator": self.adam(_params(self.net, "discriminator"), "discriminator"),
        }

    def step(self, x, m):
        net, n, delta = self.net, x.shape[0], self.config.soft_delta
        fake = net.generate(net.noise(n, self.gen))
        ones, zeros = torch.ones(n), torch.zeros(n)

        opt_d = self.opts["discriminator"]
        opt_d.zero_grad()
        d_loss = F.binary_cross_entropy_with_logits(net.discriminate(x), soften_labels(ones, delta, self.gen)) + \
            F.binary_cross_entropy_with_logits(net.discriminate(fake.detach()), soften_labels(zeros, delta, self.gen))
        d_loss.backward()
        opt_d.step()

        opt_g = self.opts["generator"]
        opt_g.zero_grad()
        g_loss = F.binary_cross_entropy_with_logits(net.discriminate(fake), ones)
        g_loss.backward()
        opt_g.step()
        return {"d_loss": d_loss.item(), "g_loss": g_loss.item()}


class _BiGANTrainer(_Trainer):
    def make_optimizers(self):
        return {
            "generator": self.adam(_params(self.net, "generator", "encoder"), "generator"),
            "discriminator": self.adam(_params(self.net, "disc_image", "disc_code", "disc_joint"), "discriminator"),
        }

    def step(self, x, m):
        net = self.net
        z = net.noise(x.shape[0], self.gen)
        fake = net.generate(z)
        z_enc = net.encode(x, self.gen)

        opt_d = self.opts["discriminator"]
        opt_d.zero_grad()
        d_loss, _ = hinge_adversarial_loss(net.discriminate(x, z_enc.detach()), net.discriminate(fake.detach(), z))
        d_loss.backward()
        opt_d.step()

        opt_g = self.opts["generator"]
        opt_g.zero_grad()
        # encoder and generator both try to swap the discriminator's verdicts
        _, g_fake = hinge_adversarial_loss(torch.zeros(1), net.discriminate(fake, z))
        g_loss = g_fake + net.discriminate(x, z_enc).mean()
        g_loss.backward()
        opt_g.step()
        return {"d_loss": d_loss.item(), "g_loss": g_loss.item()}


class _AlphaGANTrainer(_Trainer):
    def make_optimizers(self):
        return {
            "generator": self.adam(_params(self.net, "generator", "encoder"), "generator"),
            "discriminator": self.adam(_params(self.net, "discriminator"), "discriminator"),
            "code_discriminator": self.adam(_params(self.net, "code_discriminator"), "code_discriminator"),
        }

    def step(self, x, m):
        net = self.net
        z = net.noise(x.shape[0], self.gen)
        z_enc = net.encode(x, self.gen)
        rec = net.generate(z_enc)
        fake = net.generate(z)

        opt_d = self.opts["discriminator"]
        opt_d.zero_grad()
        d_rec, _ = hinge_adversarial_loss(net.discriminate(x), net.discriminate(rec.detach()))
        d_fake, _ = hinge_adversarial_loss(net.discriminate(x), net.discriminate(fake.detach()))
        d_loss = 0.5 * (d_rec + d_fake)
        d_loss.backward()
        opt_d.step()

        opt_c = self.opts["code_discriminator"]
        opt_c.zero_grad()
        c_loss, _ = hinge_adversarial_loss(net.discriminate_code(z), net.discriminate_code(z_enc.detach()))
        c_loss.backward()
        opt_c.step()

        opt_g = self.opts["generator"]
        opt_g.zero_grad()
        r_loss = self.recon(x, rec, m)
        g_adv = -0.5 * (net.discriminate(rec).mean() + net.discriminate(fake).mean())
        e_adv = -net.discriminate_code(z_enc).mean()
        g_loss = self.config.recon_weight * r_loss + g_adv + e_adv
        g_loss.backward()
        opt_g.step()
        return {"d_loss": d_loss.item(), "c_loss": c_loss.item(), "g_loss": g_loss.item(),
                "reconstruction": r_loss.item()}


_TRAINERS = {"CAE": _CAETrainer, "VAE": _VAETrainer, "DCGAN": _DCGANTrainer, "BiGAN": _BiGANTrainer,
             "aGAN": _AlphaGANTrainer}


# --- loop ------------------------------------------------------------------


def check_no_positives(records: Sequence) -> None:
    bad = [r.image_id for r in records if r.label != "negative"]
    if bad:
        raise ValueError(f"training data must not contain positive studies; got {len(bad)} e.g. {bad[0]}")


def epoch_batch(records: Sequence[ImageRecord], config: TrainConfig, policy: AugmentationPolicy, epoch: int):
    target = (config.resolution, config.resolution)
    items = [
        online_pipeline(r, policy, target, config.equalize, worker_rng(config.seed, i, epoch))
        for i, r in enumerate(records)
    ]
    x = torch.from_numpy(np.stack([it.pixels for it in items])[:, None].astype(np.float32))
    m = torch.from_numpy(np.stack([it.mask for it in items])[:, None].astype(np.float32))
    return x, m


def train_model(
    kind: str,
    records: Sequence[ImageRecord],
    config: TrainConfig,
    policy: AugmentationPolicy | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train one model on negative-only, offline-processed records.

    Every epoch re-runs the online pipeline with per-image random streams
    derived from ``(config.seed, epoch, index)``.
    """
    kind = canonical_kind(kind)
    if kind != config.kind:
        raise ValueError(f"config is for {config.kind}, asked to train {kind}")
    check_no_positives(records)
    if not records:
        raise ValueError("no training records")
    policy = policy or AugmentationPolicy.named(config.policy)

    torch.manual_seed(config.seed)
    generator = torch.Generator().manual_seed(config.seed)
    net = build_network(config.architecture())
    trainer = _TRAINERS[kind](net, config, generator)
    result = TrainResult(net, config)

    n = len(records)
    for epoch in range(config.epochs):
        start = time.perf_counter()
        net.train()
        x_all, m_all = epoch_batch(records, config, policy, epoch)
        order = torch.randperm(n, generator=generator)
        sums: dict[str, float] = {}
        batches = 0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            if len(idx) < 2 and n > 1:
                continue  # batch statistics need two samples
            for key, value in trainer.step(x_all[idx], m_all[idx]).items():
                sums[key] = sums.get(key, 0.0) + value
            batches += 1
        row = {"epoch": epoch, **{k: v / max(batches, 1) for k, v in sums.items()}}
        result.history.append(row)
        log.debug("%s epoch %d %s (%.1fs)", kind, epoch, row, time.perf_counter() - start)
        if on_epoch:
            on_epoch(row)
    net.eval()
    return result


# --- persistence ---------------------------------------------------------


def save_checkpoint(path: str | Path, result: TrainResult) -> None:
    """Write a ``torch.save`` dict: format tag, architecture, config, seed
    and the parameter map."""
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "kind": result.kind,
            "architecture": result.architecture.to_dict(),
            "config": result.config.to_dict(),
            "seed": result.config.seed,
            "state_dict": result.network.state_dict(),
            "history": result.history,
        },
        path,
    )


def load_checkpoint(path: str | Path) -> TrainResult:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not an {CHECKPOINT_FORMAT} file")
    arch = ArchitectureSpec.from_dict(blob["architecture"])
    net = build_network(arch)
    net.load_state_dict(blob["state_dict"])
    net.eval()
    return TrainResult(net, TrainConfig.from_dict(blob["config"]), blob.get("history", []))


def write_history_csv(path: str | Path, history: Sequence[dict]) -> None:
    keys = ["epoch"] + sorted({k for row in history for k in row} - {"epoch"})
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        for row in history:
            writer.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})


def read_history_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items() if v != ""}
                for row in csv.DictReader(fh)]

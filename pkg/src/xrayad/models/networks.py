"""Turn :class:`ArchitectureSpec` layer lists into torch modules."""

from __future__ import annotations

import torch
import torch.nn as nn

from .architectures import ArchitectureSpec, LayerSpec
from .layers import MinibatchDiscrimination, Reshape, SelfAttention, SpectralNorm

INIT_STD = 0.02


def _activation(name: str) -> nn.Module:
    return {
        "relu": nn.ReLU(),
        "leaky_relu": nn.LeakyReLU(0.2),
        "sigmoid": nn.Sigmoid(),
        "tanh": nn.Tanh(),
    }[name]


def _channels(shape) -> int:
    return shape[-1]


def build_layer(layer: LayerSpec, in_shape: tuple[int, ...]) -> nn.Module:
    kind = layer.kind
    if kind == "conv":
        mod = nn.Conv2d(_channels(in_shape), layer.units, layer.kernel, layer.stride, layer.padding)
    elif kind == "transposed-conv":
        mod = nn.ConvTranspose2d(_channels(in_shape), layer.units, layer.kernel, layer.stride, layer.padding)
    elif kind == "fully-connected":
        features = 1
        for d in in_shape:
            features *= d
        mod = nn.Sequential(nn.Flatten(), nn.Linear(features, layer.units))
        if layer.spectral_norm:
            mod[1] = SpectralNorm(mod[1])
        return mod
    elif kind == "batch-norm":
        return nn.BatchNorm2d(_channels(in_shape)) if len(in_shape) == 3 else nn.BatchNorm1d(in_shape[0])
    elif kind == "activation":
        return _activation(layer.activation)
    elif kind == "self-attention":
        return SelfAttention(_channels(in_shape))
    elif kind == "minibatch-discrimination":
        features = in_shape[0] * in_shape[1] * in_shape[2]
        return MinibatchDiscrimination(features, layer.units)
    elif kind == "reshape":
        t = layer.target
        return Reshape(t[2], t[0], t[1]) if len(t) == 3 else Reshape(*t)
    else:
        raise ValueError(f"cannot build layer kind {kind!r}")
    return SpectralNorm(mod) if layer.spectral_norm else mod


def build_sequential(layers: list[LayerSpec], in_shape: tuple[int, ...]) -> nn.Sequential:
    mods, shape = [], in_shape
    for layer in layers:
        mods.append(build_layer(layer, shape))
        shape = layer.out_shape
    return nn.Sequential(*mods)


def init_weights(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.normal_(m.weight, 0.0, INIT_STD)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, (nn.BatchNorm2d, nn.BatchNorm1d)):
            nn.init.normal_(m.weight, 1.0, INIT_STD)
            nn.init.zeros_(m.bias)


def _split_moments(h: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    h = h.flatten(1)
    mu, logvar = h.chunk(2, dim=1)
    return mu, logvar.clamp(-10.0, 10.0)


def _sample(mu, logvar, generator=None):
    eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
    return mu + torch.exp(0.5 * logvar) * eps


class Network(nn.Module):
    """Base class: one ``nn.Sequential`` per sub-network of the spec."""

    kind = ""

    def __init__(self, arch: ArchitectureSpec):
        super().__init__()
        self.arch = arch
        self.nets = nn.ModuleDict(
            {name: build_sequential(layers, arch.inputs[name]) for name, layers in arch.subnets.items()
             if name != "bottleneck"}
        )
        init_weights(self)

    @property
    def z_dim(self) -> int:
        return self.arch.z_dim

    def noise(self, n: int, generator=None) -> torch.Tensor:
        return torch.randn(n, self.z_dim, 1, 1, generator=generator)

    def analyze(self, x: torch.Tensor) -> dict[str, torch.Tensor]:
        """Deterministic outputs used for anomaly scoring."""
        raise NotImplementedError


class CAE(Network):
    kind = "CAE"

    def forward(self, x):
        return self.nets["decoder"](self.nets["encoder"](x))

    def analyze(self, x):
        return {"reconstruction": self(x)}


class VAE(Network):
    kind = "VAE"

    def __init__(self, arch: ArchitectureSpec):
        super().__init__(arch)
        layers = {l.name: l for l in arch.subnets["bottleneck"] if l.name}
        flat = arch.subnets["bottleneck"][0].out_shape[0]
        self.flatten = nn.Flatten()
        self.mu = nn.Linear(flat, layers["mu"].units)
        self.logvar = nn.Linear(flat, layers["sigma"].units)
        self.decode_fc = nn.Linear(layers["z"].units, layers["decode"].units)
        c_h_w = arch.subnets["bottleneck"][-1].target
        self.unflatten = Reshape(c_h_w[2], c_h_w[0], c_h_w[1])
        init_weights(self)

    def encode(self, x):
        h = self.flatten(self.nets["encoder"](x))
        return self.mu(h), self.logvar(h).clamp(-10.0, 10.0)

    def decode(self, z):
        return self.nets["decoder"](self.unflatten(self.decode_fc(z)))

    def forward(self, x, generator=None):
        mu, logvar = self.encode(x)
        z = _sample(mu, logvar, generator)
        return self.decode(z), mu, logvar

    def analyze(self, x):
        mu, logvar = self.encode(x)
        return {"reconstruction": self.decode(mu), "mu": mu, "sigma": torch.exp(0.5 * logvar)}


class DCGAN(Network):
    kind = "DCGAN"

    def generate(self, z):
        return self.nets["generator"](z)

    def discriminate(self, x):
        return self.nets["discriminator"](x).reshape(-1)

    def analyze(self, x):
        return {"d_logit": self.discriminate(x)}


class BiGAN(Network):
    kind = "BiGAN"

    def generate(self, z):
        return self.nets["generator"](z)

    def encode(self, x, generator=None, sample=True):
        mu, logvar = _split_moments(self.nets["encoder"](x))
        z = _sample(mu, logvar, generator) if sample else mu
        return z.reshape(-1, self.z_dim, 1, 1)

    def discriminate(self, x, z):
        joint = torch.cat([self.nets["disc_image"](x), self.nets["disc_code"](z)], dim=1)
        return self.nets["disc_joint"](joint).reshape(-1)

    def analyze(self, x):
        z = self.encode(x, sample=False)
        return {"reconstruction": self.generate(z), "d_logit": self.discriminate(x, z)}


class AlphaGAN(Network):
    kind = "aGAN"

    def generate(self, z):
        return self.nets["generator"](z)

    def encode(self, x, generator=None, sample=True):
        mu, logvar = _split_moments(self.nets["encoder"](x))
        z = _sample(mu, logvar, generator) if sample else mu
        return z.reshape(-1, self.z_dim, 1, 1)

    def discriminate(self, x):
        return self.nets["discriminator"](x).reshape(-1)

    def discriminate_code(self, z):
        return self.nets["code_discriminator"](z).reshape(-1)

    def analyze(self, x):
        z = self.encode(x, sample=False)
        return {
            "reconstruction": self.generate(z),
            "d_logit": self.discriminate(x),
            "c_logit": self.discriminate_code(z),
        }


NETWORKS = {cls.kind: cls for cls in (CAE, VAE, DCGAN, BiGAN, AlphaGAN)}


def build_network(arch: ArchitectureSpec) -> Network:
    return NETWORKS[arch.name](arch)

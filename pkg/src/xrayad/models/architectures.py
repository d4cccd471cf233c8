"""Declarative layer lists for the five model families.

Every sub-network is a flat list of :class:`LayerSpec`.  Output shapes are
propagated from the sub-network input and stored on each layer, so a spec
can be checked against a hand-written table without building any tensors.
Shapes are ``(height, width, channels)`` or ``(features,)``.

Channel counts are tied to spatial size (e.g. the image generators always
carry 1024 channels at 4x4), so smaller resolutions give the tail of the
full-size network; ``width`` then scales hidden channels for cheap runs.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

MODEL_KINDS = ("CAE", "VAE", "DCGAN", "BiGAN", "aGAN")
KIND_ALIASES = {"αGAN": "aGAN", "alphaGAN": "aGAN", "alpha-GAN": "aGAN", "α-GAN": "aGAN", "BAE": "CAE"}
REFERENCE_RESOLUTION = {"CAE": 512, "VAE": 512, "DCGAN": 512, "BiGAN": 128, "aGAN": 128}
REFERENCE_Z_DIM = {"CAE": 0, "VAE": 1024, "DCGAN": 2048, "BiGAN": 100, "aGAN": 100}

# kinds that appear as rows of the published architecture tables
TABLE_KINDS = frozenset({"conv", "transposed-conv", "fully-connected", "minibatch-discrimination", "sample", "reshape"})
SHAPE_PRESERVING = frozenset({"batch-norm", "activation", "self-attention"})


def canonical_kind(name: str) -> str:
    kind = KIND_ALIASES.get(name, name)
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {name!r}; expected one of {MODEL_KINDS}")
    return kind


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: int = 0  # output channels / features / minibatch kernels
    kernel: tuple[int, int] | None = None
    stride: int = 1
    padding: int = 0
    target: tuple[int, ...] = ()  # reshape target
    activation: str | None = None
    spectral_norm: bool = False
    name: str = ""
    parallel: bool = False  # reads the same input as the previous layer
    out_shape: tuple[int, ...] = ()

    @property
    def is_table_row(self) -> bool:
        return self.kind in TABLE_KINDS


def propagate(layer: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    kind = layer.kind
    if kind in SHAPE_PRESERVING:
        return tuple(shape)
    if kind in ("conv", "transposed-conv"):
        h, w, _ = shape
        kh, kw = layer.kernel
        s, p = layer.stride, layer.padding
        if kind == "conv":
            oh, ow = (h + 2 * p - kh) // s + 1, (w + 2 * p - kw) // s + 1
        else:
            oh, ow = (h - 1) * s - 2 * p + kh, (w - 1) * s - 2 * p + kw
        if oh < 1 or ow < 1:
            raise ValueError(f"{kind} collapses {shape}")
        return (oh, ow, layer.units)
    if kind == "minibatch-discrimination":
        return tuple(shape[:-1]) + (shape[-1] + layer.units,)
    if kind in ("fully-connected", "sample"):
        return (layer.units,)
    if kind == "reshape":
        if math.prod(shape) != math.prod(layer.target):
            raise ValueError(f"cannot reshape {shape} to {layer.target}")
        return tuple(layer.target)
    raise ValueError(f"unknown layer kind {kind!r}")


class _Chain:
    """Appends layers while tracking the running shape."""

    def __init__(self, shape, width: float = 1.0, spectral_norm: bool = False):
        self.input = tuple(shape)
        self.shape = tuple(shape)
        self.width = width
        self.spectral_norm = spectral_norm
        self.layers: list[LayerSpec] = []

    def ch(self, channels: int) -> int:
        return max(1, int(round(channels * self.width)))

    def add(self, layer: LayerSpec, source=None) -> "_Chain":
        out = propagate(layer, self.shape if source is None else source)
        self.layers.append(replace(layer, out_shape=out))
        if not layer.parallel:
            self.shape = out
        return self

    def conv(self, k, s, p, channels, scale=True, transposed=False):
        units = self.ch(channels) if scale else channels
        kind = "transposed-conv" if transposed else "conv"
        sn = self.spectral_norm and not transposed
        return self.add(LayerSpec(kind, units, (k, k), s, p, spectral_norm=sn))

    def tconv(self, k, s, p, channels, scale=True):
        return self.conv(k, s, p, channels, scale, transposed=True)

    def bn(self, enabled=True):
        return self.add(LayerSpec("batch-norm")) if enabled else self

    def act(self, name):
        return self.add(LayerSpec("activation", activation=name))

    def attention(self, enabled=True):
        return self.add(LayerSpec("self-attention")) if enabled else self

    def fc(self, n, name="", parallel=False):
        layer = LayerSpec("fully-connected", n, name=name, parallel=parallel, spectral_norm=self.spectral_norm)
        if parallel:
            return self.add(layer, source=self._last_input())
        return self.add(layer)

    def reshape(self, shape):
        return self.add(LayerSpec("reshape", target=tuple(shape)))

    def mbd(self, kernels):
        return self.add(LayerSpec("minibatch-discrimination", kernels))

    def _last_input(self):
        # input of the most recent non-parallel layer
        shape = self.input
        prev = shape
        for layer in self.layers:
            if not layer.parallel:
                prev, shape = shape, layer.out_shape
        return prev


@dataclass
class ArchitectureSpec:
    name: str
    resolution: int
    z_dim: int
    inputs: dict[str, tuple[int, ...]]
    subnets: dict[str, list[LayerSpec]]
    options: dict = field(default_factory=dict)

    def table(self, subnet: str) -> list[tuple[tuple[int, int] | None, tuple[int, ...]]]:
        """``(kernel, output shape)`` of each table-row layer of ``subnet``."""
        return [(l.kernel, l.out_shape) for l in self.subnets[subnet] if l.is_table_row]

    def output_shape(self, subnet: str) -> tuple[int, ...]:
        return next(l.out_shape for l in reversed(self.subnets[subnet]) if not l.parallel)

    def validate(self) -> None:
        """Re-propagate every sub-network and compare with the stored shapes."""
        for name, layers in self.subnets.items():
            shape = prev = self.inputs[name]
            for layer in layers:
                out = propagate(layer, prev if layer.parallel else shape)
                if out != layer.out_shape:
                    raise ValueError(f"{self.name}.{name}: {layer.kind} yields {out}, spec says {layer.out_shape}")
                if not layer.parallel:
                    prev, shape = shape, out

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "resolution": self.resolution,
            "z_dim": self.z_dim,
            "inputs": {k: list(v) for k, v in self.inputs.items()},
            "subnets": {k: [asdict(l) for l in v] for k, v in self.subnets.items()},
            "options": dict(self.options),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        def layer(ld):
            ld = dict(ld)
            for key in ("out_shape", "target"):
                ld[key] = tuple(ld[key])
            if ld["kernel"] is not None:
                ld["kernel"] = tuple(ld["kernel"])
            return LayerSpec(**ld)

        spec = cls(
            d["name"],
            d["resolution"],
            d["z_dim"],
            {k: tuple(v) for k, v in d["inputs"].items()},
            {k: [layer(l) for l in v] for k, v in d["subnets"].items()},
            dict(d.get("options", {})),
        )
        spec.validate()
        return spec


def _halvings(resolution: int, stop: int) -> int:
    steps = math.log2(resolution / stop)
    if steps < 1 or not steps.is_integer():
        raise ValueError(f"resolution {resolution} must be {stop} times a power of two")
    return int(steps)


def _cae(res, width, batch_norm, **_):
    n_down = 5
    if res % 2 ** n_down:
        raise ValueError("CAE resolution must be divisible by 32")
    enc = _Chain((res, res, 1), width)
    enc.conv(3, 1, 1, 16).bn(batch_norm).act("relu")
    for i in range(1, n_down + 1):
        enc.conv(4, 2, 1, 16 * 2 ** i).bn(batch_norm).act("relu")
        if i < n_down:
            enc.conv(3, 1, 1, 16 * 2 ** i).bn(batch_norm).act("relu")
    dec = _Chain(enc.shape, width)
    for i in range(n_down - 1, -1, -1):
        dec.tconv(4, 2, 1, 16 * 2 ** i).bn(batch_norm).act("relu")
    dec.conv(3, 1, 1, 1, scale=False).act("sigmoid")
    return {"encoder": enc, "decoder": dec}


def _vae(res, width, batch_norm, z_dim, **_):
    enc = _Chain((res, res, 1), width)
    n_enc, c = 0, 8
    while (enc.shape[0] - 4) // 2 + 1 >= 2:
        enc.conv(4, 2, 0, c).bn(batch_norm).act("leaky_relu")
        n_enc += 1
        c *= 2
    flat = math.prod(enc.shape)
    bott = _Chain(enc.shape)
    bott.reshape((flat,)).fc(z_dim, "mu").fc(z_dim, "sigma", parallel=True)
    bott.add(LayerSpec("sample", z_dim, name="z"))
    bott.fc(flat, "decode").reshape(enc.shape)
    dec = _Chain(enc.shape)
    c = enc.shape[-1]
    for _ in range(n_enc - 1):
        c = max(1, c // 2)
        dec.tconv(4, 2, 0, c, scale=False).bn(batch_norm).act("leaky_relu")
    last = res - 2 * (dec.shape[0] - 1)
    if last < 2:
        raise ValueError(f"VAE decoder cannot reach resolution {res}")
    dec.add(LayerSpec("transposed-conv", 1, (last, last), 2, 0))
    dec.act("sigmoid")
    return {"encoder": enc, "bottleneck": bott, "decoder": dec}


def _generator(res, width, z_dim, batch_norm, attention):
    n_up = _halvings(res, 4)
    g = _Chain((1, 1, z_dim), width)
    g.tconv(4, 1, 0, 1024).bn(batch_norm).act("relu")
    for i in range(1, n_up):
        g.tconv(4, 2, 1, 1024 // 2 ** i).bn(batch_norm).act("relu")
        g.attention(attention and i >= n_up - 2)
    g.tconv(4, 2, 1, 1, scale=False).act("sigmoid")
    return g


def _downsampler(res, width, spectral_norm, channels_at_half, batch_norm, attention):
    """Strided 4x4 convs from ``res`` down to 4x4, doubling channels."""
    chain = _Chain((res, res, 1), width, spectral_norm)
    n_down = _halvings(res, 4)
    for i in range(n_down):
        chain.conv(4, 2, 1, channels_at_half * 2 ** i).bn(batch_norm).act("leaky_relu")
        chain.attention(attention and i >= n_down - 2)
    return chain


def _dcgan(res, width, disc_width, z_dim, batch_norm, spectral_norm, minibatch_kernels, **_):
    gen = _generator(res, width, z_dim, batch_norm, attention=False)
    # 4 channels at 256x256, doubling per halving
    disc = _downsampler(res, disc_width, spectral_norm, 4 * 256 // (res // 2), batch_norm, False)
    disc.conv(4, 1, 0, 2 * disc.shape[-1], scale=False).act("leaky_relu")
    if minibatch_kernels:
        disc.mbd(minibatch_kernels)
    disc.fc(1)
    return {"generator": gen, "discriminator": disc}


def _image_encoder(res, width, spectral_norm, batch_norm):
    # 64 channels at 64x64, doubling per halving
    return _downsampler(res, width, spectral_norm, max(1, 64 * 64 // (res // 2)), batch_norm, True)


def _bigan(res, width, disc_width, z_dim, batch_norm, spectral_norm, **_):
    gen = _generator(res, width, z_dim, batch_norm, attention=True)
    enc = _image_encoder(res, width, False, batch_norm)
    enc.conv(4, 1, 0, 2 * z_dim, scale=False)
    img = _image_encoder(res, disc_width, spectral_norm, False)
    img.conv(4, 1, 0, 1024).act("leaky_relu")
    code = _Chain((1, 1, z_dim), disc_width, spectral_norm)
    code.conv(1, 1, 0, 512).act("leaky_relu").conv(1, 1, 0, 512).act("leaky_relu")
    joint = _Chain((1, 1, img.shape[-1] + code.shape[-1]), disc_width, spectral_norm)
    joint.conv(1, 1, 0, 1024).act("leaky_relu").conv(1, 1, 0, 1024).act("leaky_relu")
    joint.conv(1, 1, 0, 1, scale=False)
    return {"generator": gen, "encoder": enc, "disc_image": img, "disc_code": code, "disc_joint": joint}


def _agan(res, width, disc_width, z_dim, batch_norm, spectral_norm, minibatch_kernels, **_):
    gen = _generator(res, width, z_dim, batch_norm, attention=True)
    enc = _image_encoder(res, width, False, batch_norm)
    enc.conv(4, 1, 0, 2 * z_dim, scale=False)
    disc = _image_encoder(res, disc_width, spectral_norm, False)
    if minibatch_kernels:
        disc.mbd(minibatch_kernels)
    disc.conv(4, 1, 0, 1, scale=False)
    code = _Chain((1, 1, z_dim), disc_width, spectral_norm)
    code.conv(1, 1, 0, 100).act("leaky_relu").conv(1, 1, 0, 50).act("leaky_relu")
    code.conv(1, 1, 0, 25).act("leaky_relu").conv(1, 1, 0, 1, scale=False)
    return {"generator": gen, "encoder": enc, "discriminator": disc, "code_discriminator": code}


_BUILDERS = {"CAE": _cae, "VAE": _vae, "DCGAN": _dcgan, "BiGAN": _bigan, "aGAN": _agan}
_DEFAULTS = {
    "CAE": dict(batch_norm=True),
    "VAE": dict(batch_norm=True),
    "DCGAN": dict(batch_norm=False, spectral_norm=True, minibatch_kernels=16),
    "BiGAN": dict(batch_norm=True, spectral_norm=True),
    "aGAN": dict(batch_norm=True, spectral_norm=True, minibatch_kernels=4),
}


def build_architecture(
    name: str,
    resolution: int | None = None,
    *,
    width: float = 1.0,
    disc_width: float | None = None,
    z_dim: int | None = None,
    **options,
) -> ArchitectureSpec:
    """Architecture for a model kind.

    With default arguments the shapes equal the published tables at the
    published resolution.  ``width`` scales hidden channels of generators
    and encoders, ``disc_width`` those of discriminators (defaults to
    ``width``).  ``options`` override ``batch_norm``, ``spectral_norm`` and
    ``minibatch_kernels``.
    """
    kind = canonical_kind(name)
    res = resolution or REFERENCE_RESOLUTION[kind]
    z = z_dim or REFERENCE_Z_DIM[kind]
    unknown = set(options) - set(_DEFAULTS[kind]) - {"spectral_norm", "minibatch_kernels", "batch_norm"}
    if unknown:
        raise ValueError(f"unknown architecture options {sorted(unknown)}")
    opts = {"spectral_norm": False, "minibatch_kernels": 0, **_DEFAULTS[kind], **options}
    dw = width if disc_width is None else disc_width
    chains = _BUILDERS[kind](res, width, disc_width=dw, z_dim=z, **opts)
    spec = ArchitectureSpec(
        kind,
        res,
        z,
        {k: c.input for k, c in chains.items()},
        {k: c.layers for k, c in chains.items()},
        {"width": width, "disc_width": dw, **opts},
    )
    spec.validate()
    return spec

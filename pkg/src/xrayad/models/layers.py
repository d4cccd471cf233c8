"""Custom layers: spectral normalisation, minibatch discrimination,
self-attention and a reshape helper."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.func import functional_call


def spectral_normalize(weight, u: torch.Tensor | None = None, n_power_iterations: int = 1, eps: float = 1e-12):
    """Divide ``weight`` by its largest singular value.

    The singular value is estimated by power iteration starting from ``u``
    (random when omitted).  Returns ``(normalized_weight, u)`` so callers can
    carry ``u`` over to the next call.  A zero matrix is returned unchanged.
    """
    if not torch.is_tensor(weight):
        weight = torch.as_tensor(weight, dtype=torch.float64)
    mat = weight.reshape(weight.shape[0], -1) if weight.dim() > 1 else weight.reshape(1, -1)
    if u is None:
        u = F.normalize(torch.randn(mat.shape[0], dtype=mat.dtype, device=mat.device), dim=0, eps=eps)
    u0 = u
    with torch.no_grad():
        for _ in range(max(1, n_power_iterations)):
            v = F.normalize(mat.t() @ u, dim=0, eps=eps)
            u = F.normalize(mat @ v, dim=0, eps=eps)
    sigma = torch.dot(u, mat @ v)
    # no branching on tensor values: a zero matrix keeps its weight and vector
    nonzero = sigma > eps
    u = torch.where(nonzero, u, u0)
    return weight / torch.where(nonzero, sigma, torch.ones_like(sigma)), u


class SpectralNorm(nn.Module):
    """Wraps a layer and rescales its ``weight`` on every forward pass,
    keeping the power-iteration vector in a buffer."""

    def __init__(self, module: nn.Module, n_power_iterations: int = 1):
        super().__init__()
        self.module = module
        self.n_power_iterations = n_power_iterations
        rows = module.weight.shape[1 if isinstance(module, nn.ConvTranspose2d) else 0]
        self.register_buffer("u", F.normalize(torch.randn(rows), dim=0))

    def normalized_weight(self) -> torch.Tensor:
        weight = self.module.weight
        if isinstance(self.module, nn.ConvTranspose2d):
            weight = weight.transpose(0, 1)
        w_sn, u = spectral_normalize(weight, self.u, self.n_power_iterations)
        if self.training:
            self.u.copy_(u)
        if isinstance(self.module, nn.ConvTranspose2d):
            w_sn = w_sn.transpose(0, 1)
        return w_sn

    def forward(self, x):
        return functional_call(self.module, {"weight": self.normalized_weight()}, (x,), strict=False)


def minibatch_discrimination(features: torch.Tensor, params: torch.Tensor) -> torch.Tensor:
    """Append ``B`` batch-similarity features to ``(N, F)`` features.

    ``params`` has shape ``(F, B, C)``.  For each kernel ``b`` the feature is
    the sum over the other samples of ``exp(-L1 distance)`` between rows of
    ``features @ params``.
    """
    n = features.shape[0]
    f, b, c = params.shape
    m = (features @ params.reshape(f, b * c)).reshape(n, b, c)
    dist = (m.unsqueeze(0) - m.unsqueeze(1)).abs().sum(dim=3)  # (N, N, B)
    others = 1.0 - torch.eye(n, dtype=dist.dtype, device=dist.device)
    sim = (torch.exp(-dist) * others[:, :, None]).sum(dim=1)
    return torch.cat([features, sim], dim=1)


class MinibatchDiscrimination(nn.Module):
    """Works on ``(N, C, H, W)`` maps: the flattened map is compared across
    the batch and the ``B`` resulting features are tiled as extra channels."""

    def __init__(self, in_features: int, n_kernels: int, kernel_dim: int = 8):
        super().__init__()
        self.n_kernels = n_kernels
        self.T = nn.Parameter(torch.randn(in_features, n_kernels, kernel_dim) * 0.1)

    def forward(self, x):
        n = x.shape[0]
        flat = x.reshape(n, -1)
        extra = minibatch_discrimination(flat, self.T)[:, flat.shape[1]:]
        tiled = extra[:, :, None, None].expand(n, self.n_kernels, x.shape[2], x.shape[3])
        return torch.cat([x, tiled], dim=1)


class SelfAttention(nn.Module):
    """Non-local attention over spatial positions with a learned residual gate."""

    def __init__(self, channels: int):
        super().__init__()
        inner = max(1, channels // 8)
        self.query = nn.Conv2d(channels, inner, 1)
        self.key = nn.Conv2d(channels, inner, 1)
        self.value = nn.Conv2d(channels, channels, 1)
        self.gamma = nn.Parameter(torch.zeros(1))

    def forward(self, x):
        n, c, h, w = x.shape
        q = self.query(x).reshape(n, -1, h * w)
        k = self.key(x).reshape(n, -1, h * w)
        v = self.value(x).reshape(n, c, h * w)
        attn = torch.softmax(q.transpose(1, 2) @ k, dim=-1)  # (N, HW, HW)
        out = (v @ attn.transpose(1, 2)).reshape(n, c, h, w)
        return x + self.gamma * out


class Reshape(nn.Module):
    def __init__(self, *shape: int):
        super().__init__()
        self.shape = shape

    def forward(self, x):
        return x.reshape(x.shape[0], *self.shape)

    def extra_repr(self):
        return f"shape={self.shape}"

"""Training objectives. All functions take and return torch tensors."""

from __future__ import annotations

import torch
import torch.nn.functional as F


def _check_shapes(x: torch.Tensor, x_hat: torch.Tensor) -> None:
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")


def reconstruction_loss(x, x_hat) -> torch.Tensor:
    """Mean of pixel-wise squared differences."""
    x, x_hat = torch.as_tensor(x), torch.as_tensor(x_hat)
    _check_shapes(x, x_hat)
    return ((x - x_hat) ** 2).mean()


def masked_reconstruction_loss(x, x_hat, mask, squared: bool = True) -> torch.Tensor:
    """Reconstruction error over mask pixels only, divided by the mask size.

    With ``squared=False`` the numerator is the plain 2-norm of the masked
    residual instead of its square.
    """
    x, x_hat = torch.as_tensor(x), torch.as_tensor(x_hat)
    mask = torch.as_tensor(mask, dtype=x.dtype)
    _check_shapes(x, x_hat)
    if mask.shape != x.shape:
        raise ValueError("mask shape does not match the image")
    count = mask.sum()
    if count <= 0:
        raise ValueError("empty mask")
    residual = torch.where(mask > 0, x - x_hat, torch.zeros_like(x))
    sq = (residual ** 2).sum()
    return (sq if squared else torch.sqrt(sq)) / count


def kld_diag_gaussian(mu, sigma) -> torch.Tensor:
    """KL(N(mu, diag sigma^2) || N(0, I)), summed over the last axis."""
    mu, sigma = torch.as_tensor(mu), torch.as_tensor(sigma)
    if (sigma <= 0).any():
        raise ValueError("sigma must be positive")
    var = sigma ** 2
    return 0.5 * (var + mu ** 2 - 1.0 - torch.log(var)).sum(dim=-1)


def kld_from_logvar(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """Same divergence parameterised by log-variance, safe for training."""
    return 0.5 * (logvar.exp() + mu ** 2 - 1.0 - logvar).sum(dim=-1)


def reparameterize(mu, sigma, eps) -> torch.Tensor:
    mu, sigma, eps = torch.as_tensor(mu), torch.as_tensor(sigma), torch.as_tensor(eps)
    if not (mu.shape == sigma.shape == eps.shape):
        raise ValueError("mu, sigma and eps must share a shape")
    return sigma * eps + mu


def hinge_adversarial_loss(real_logits, fake_logits) -> tuple[torch.Tensor, torch.Tensor]:
    """Discriminator and generator hinge losses."""
    real_logits, fake_logits = torch.as_tensor(real_logits), torch.as_tensor(fake_logits)
    d_loss = F.relu(1.0 - real_logits).mean() + F.relu(1.0 + fake_logits).mean()
    g_loss = -fake_logits.mean()
    return d_loss, g_loss


def soften_labels(hard, delta: float, generator: torch.Generator | None = None) -> torch.Tensor:
    """Replace 1 by U[1-delta, 1] and 0 by U[0, delta]."""
    if not 0.0 <= delta < 0.5:
        raise ValueError("delta must lie in [0, 0.5)")
    hard = torch.as_tensor(hard, dtype=torch.float32)
    if delta == 0.0:
        return hard.clone()
    noise = torch.rand(hard.shape, generator=generator, dtype=hard.dtype) * delta
    return torch.where(hard > 0.5, 1.0 - noise, noise)


def bce_with_logits(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    return F.binary_cross_entropy_with_logits(logits, targets)

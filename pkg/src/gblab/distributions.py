"""Diagonal Gaussian primitives shared by every latent and the pixel likelihood."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch

LOG_VAR_MIN = -14.0
LOG_VAR_MAX = 14.0


@dataclass
class DiagGauss:
    """Diagonal Gaussian parameterised by mean and log-variance."""

    mean: torch.Tensor
    log_var: torch.Tensor

    def __post_init__(self):
        if self.mean.shape != self.log_var.shape:
            raise ValueError(
                f"mean shape {tuple(self.mean.shape)} != log_var shape {tuple(self.log_var.shape)}"
            )

    @classmethod
    def from_params(cls, params: torch.Tensor) -> "DiagGauss":
        """Split the last dimension of an encoder head output into (mean, log_var)."""
        if params.shape[-1] % 2:
            raise ValueError("parameter tensor must have an even last dimension")
        mean, log_var = params.chunk(2, dim=-1)
        return cls(mean, log_var)

    @classmethod
    def standard(cls, shape, like: torch.Tensor | None = None) -> "DiagGauss":
        kw = {} if like is None else {"dtype": like.dtype, "device": like.device}
        return cls(torch.zeros(shape, **kw), torch.zeros(shape, **kw))

    @property
    def shape(self):
        return self.mean.shape

    @property
    def clamped_log_var(self) -> torch.Tensor:
        return self.log_var.clamp(LOG_VAR_MIN, LOG_VAR_MAX)

    @property
    def std(self) -> torch.Tensor:
        return torch.exp(0.5 * self.clamped_log_var)


def sample_reparam(d: DiagGauss, noise: torch.Tensor) -> torch.Tensor:
    """Reparameterised sample ``mean + std * noise``."""
    if noise.shape != d.shape:
        raise ValueError(f"noise shape {tuple(noise.shape)} != distribution shape {tuple(d.shape)}")
    return d.mean + d.std * noise


def kl_diag_gauss(q: DiagGauss, p: DiagGauss) -> torch.Tensor:
    """Analytic KL(q || p) summed over the last dimension.

    Returns one value per leading index (per batch element for B x L inputs).
    """
    if q.shape != p.shape:
        raise ValueError(f"shape mismatch: {tuple(q.shape)} vs {tuple(p.shape)}")
    q_lv, p_lv = q.clamped_log_var, p.clamped_log_var
    # grouped so that identical inputs give exactly zero
    kl = 0.5 * ((p_lv - q_lv) + torch.expm1(q_lv - p_lv) + (q.mean - p.mean) ** 2 * torch.exp(-p_lv))
    return kl.sum(dim=-1)


def gauss_log_prob(x: torch.Tensor, mean: torch.Tensor, sigma: float) -> torch.Tensor:
    """Elementwise log N(x; mean, sigma^2), normalising constant included."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if x.shape != mean.shape:
        raise ValueError(f"x shape {tuple(x.shape)} != mean shape {tuple(mean.shape)}")
    return -0.5 * ((x - mean) / sigma) ** 2 - 0.5 * math.log(2 * math.pi * sigma**2)

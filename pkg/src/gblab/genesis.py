"""GENESIS: autoregressive mask VAE + per-component appearance VAE under a
spatial Gaussian mixture likelihood.
"""
from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, fields

import torch
import torch.nn.functional as F
from torch import nn

from .distributions import DiagGauss, gauss_log_prob, kl_diag_gauss, sample_reparam
from .networks import IMAGE_SIZE, DCDecoder, DCEncoder, SBDDecoder, SBDEncoder, init_fan_in_uniform


class ComponentArch(str, enum.Enum):
    ASYMMETRIC_SBD = "ASYMMETRIC_SBD"
    SYMMETRIC_DC = "SYMMETRIC_DC"


CONFIG_KEYS = (
    "K", "mask_latent_dim", "component_latent_dim", "component_arch",
    "pixel_sigma", "rnn_hidden", "prior_mlp_hidden",
)


@dataclass
class GenesisConfig:
    K: int = 5
    mask_latent_dim: int = 64
    component_latent_dim: int = 16
    component_arch: ComponentArch = ComponentArch.ASYMMETRIC_SBD
    pixel_sigma: float = 0.7
    rnn_hidden: int = 256
    prior_mlp_hidden: int = 256

    def __post_init__(self):
        self.component_arch = ComponentArch(self.component_arch)
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.mask_latent_dim < 1 or self.component_latent_dim < 1:
            raise ValueError("latent dims must be >= 1")
        if not self.pixel_sigma > 0:
            raise ValueError("pixel_sigma must be positive")
        if self.rnn_hidden < 1 or self.prior_mlp_hidden < 1:
            raise ValueError("hidden sizes must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["component_arch"] = self.component_arch.value
        return {k: d[k] for k in CONFIG_KEYS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "GenesisConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, s: str) -> "GenesisConfig":
        return cls.from_dict(json.loads(s))


@dataclass
class MixtureMasks:
    """Per-pixel mixture probabilities, B x K x 1 x H x W."""

    pi: torch.Tensor
    log_pi: torch.Tensor | None = None

    @property
    def K(self) -> int:
        return self.pi.shape[1]


@dataclass
class LatentSet:
    mask_samples: list
    mask_posteriors: list
    mask_priors: list
    comp_samples: list
    comp_posteriors: list
    comp_priors: list


@dataclass
class ForwardOutput:
    masks: MixtureMasks
    appearances: torch.Tensor
    latents: LatentSet
    nll_per_pixel: torch.Tensor
    kl_mask: torch.Tensor
    kl_component: torch.Tensor
    nll_per_image: torch.Tensor

    @property
    def reconstruction(self) -> torch.Tensor:
        return (self.masks.pi * self.appearances).sum(dim=1)


@dataclass
class Samples:
    images: torch.Tensor
    masks: MixtureMasks
    appearances: torch.Tensor


def stick_breaking(scope_logits: torch.Tensor) -> MixtureMasks:
    """Mixture masks from B x (K-1) x 1 x H x W scope logits.

    Component k takes sigmoid(s_k) of the remaining stick; the last component
    takes whatever is left. Computed in log space.
    """
    log_take = F.logsigmoid(scope_logits)
    log_keep = F.logsigmoid(-scope_logits)
    b, _, _, h, w = scope_logits.shape
    zero = scope_logits.new_zeros(b, 1, 1, h, w)
    log_remaining = torch.cat([zero, torch.cumsum(log_keep, dim=1)], dim=1)
    log_pi = log_remaining + torch.cat([log_take, zero], dim=1)
    return MixtureMasks(torch.exp(log_pi), log_pi)


def sgmm_nll(x: torch.Tensor, masks, appearances: torch.Tensor, sigma: float) -> torch.Tensor:
    """Negative log-likelihood per batch element under the spatial mixture.

    Each pixel channel is scored as ``-log sum_k pi_k N(x; mu_k, sigma^2)``
    and the result is summed over pixels and channels.
    """
    if isinstance(masks, MixtureMasks):
        pi, log_pi = masks.pi, masks.log_pi
    else:
        pi, log_pi = masks, None
    if (pi < 0).any():
        raise ValueError("mixture probabilities must be non-negative")
    if log_pi is None:
        log_pi = torch.log(pi)
    target = x.unsqueeze(1).expand_as(appearances)
    log_comp = gauss_log_prob(target, appearances, sigma)
    log_mix = torch.logsumexp(log_pi + log_comp, dim=1)
    return -log_mix.flatten(1).sum(dim=1)


def _randn(shape, like: torch.Tensor, generator: torch.Generator | None) -> torch.Tensor:
    return torch.randn(shape, generator=generator, dtype=like.dtype, device=like.device)


class Genesis(nn.Module):
    def __init__(self, cfg: GenesisConfig):
        super().__init__()
        self.cfg = cfg
        lm, lc = cfg.mask_latent_dim, cfg.component_latent_dim

        # mask VAE
        self.mask_encoder = DCEncoder(lm, in_channels=3)
        self.mask_posterior_rnn = nn.LSTMCell(lm + 2 * lm, cfg.rnn_hidden)
        self.mask_posterior_head = nn.Linear(cfg.rnn_hidden, 2 * lm)
        self.mask_prior_start = nn.Parameter(torch.zeros(lm))
        self.mask_prior_rnn = nn.LSTMCell(lm, cfg.rnn_hidden)
        self.mask_prior_head = nn.Linear(cfg.rnn_hidden, 2 * lm)
        self.mask_decoder = DCDecoder(lm, out_channels=1)

        # component VAE
        if cfg.component_arch == ComponentArch.ASYMMETRIC_SBD:
            self.comp_encoder = SBDEncoder(lc, in_channels=4)
            self.comp_decoder = SBDDecoder(lc, out_channels=3)
        else:
            self.comp_encoder = DCEncoder(lc, in_channels=4)
            self.comp_decoder = DCDecoder(lc, out_channels=3)
        h = cfg.prior_mlp_hidden
        self.comp_prior_mlp = nn.Sequential(
            nn.Linear(lm, h), nn.ELU(), nn.Linear(h, h), nn.ELU(), nn.Linear(h, 2 * lc)
        )
        init_fan_in_uniform(self.mask_posterior_head)
        init_fan_in_uniform(self.mask_prior_head)
        init_fan_in_uniform(self.comp_prior_mlp)

    # -- mask VAE -----------------------------------------------------------

    def infer_mask_latents(self, x: torch.Tensor, generator: torch.Generator | None = None):
        b = x.shape[0]
        lm = self.cfg.mask_latent_dim
        feats = self.mask_encoder.features(x)
        state = None
        z_prev = x.new_zeros(b, lm)
        samples, posteriors = [], []
        for _ in range(self.cfg.K):
            state = self.mask_posterior_rnn(torch.cat([z_prev, feats], dim=1), state)
            q = DiagGauss.from_params(self.mask_posterior_head(state[0]))
            z_prev = sample_reparam(q, _randn(q.shape, x, generator))
            posteriors.append(q)
            samples.append(z_prev)
        return samples, posteriors

    def mask_prior(self, mask_samples: list) -> list:
        if len(mask_samples) != self.cfg.K:
            raise ValueError(f"expected {self.cfg.K} mask samples, got {len(mask_samples)}")
        b = mask_samples[0].shape[0]
        inp = self.mask_prior_start.to(mask_samples[0].dtype).expand(b, -1)
        state = None
        priors = []
        for k in range(self.cfg.K):
            state = self.mask_prior_rnn(inp, state)
            priors.append(DiagGauss.from_params(self.mask_prior_head(state[0])))
            inp = mask_samples[k]
        return priors

    def decode_masks(self, mask_samples: list) -> MixtureMasks:
        k = self.cfg.K
        b = mask_samples[0].shape[0]
        if k == 1:
            ref = mask_samples[0]
            logits = ref.new_zeros(b, 0, 1, IMAGE_SIZE, IMAGE_SIZE)
        else:
            z = torch.cat(mask_samples[: k - 1], dim=0)
            logits = self.mask_decoder(z).view(k - 1, b, 1, IMAGE_SIZE, IMAGE_SIZE).transpose(0, 1)
        return stick_breaking(logits)

    # -- component VAE ------------------------------------------------------

    def infer_component_latents(
        self, x: torch.Tensor, masks: MixtureMasks, generator: torch.Generator | None = None
    ):
        b, k = x.shape[0], masks.K
        pi = masks.pi.transpose(0, 1)  # K x B x 1 x H x W
        inp = torch.cat([x.unsqueeze(0).expand(k, *x.shape), pi], dim=2).flatten(0, 1)
        q_all = self.comp_encoder(inp)
        noise = _randn(q_all.shape, x, generator)
        z_all = sample_reparam(q_all, noise)
        posteriors = [
            DiagGauss(m, lv)
            for m, lv in zip(q_all.mean.view(k, b, -1), q_all.log_var.view(k, b, -1))
        ]
        return list(z_all.view(k, b, -1)), posteriors

    def component_prior(self, mask_samples: list) -> list:
        k = len(mask_samples)
        params = self.comp_prior_mlp(torch.cat(mask_samples, dim=0))
        return [DiagGauss.from_params(p) for p in params.chunk(k, dim=0)]

    def decode_components(self, comp_samples: list) -> torch.Tensor:
        k = len(comp_samples)
        b = comp_samples[0].shape[0]
        out = self.comp_decoder(torch.cat(comp_samples, dim=0))
        return out.view(k, b, 3, IMAGE_SIZE, IMAGE_SIZE).transpose(0, 1)

    # -- full passes --------------------------------------------------------

    def _pixel_count(self, x):
        return x[0].numel()

    def forward(self, x: torch.Tensor, generator: torch.Generator | None = None) -> ForwardOutput:
        if self.cfg.K == 1:
            # a single-component model has no use for the mask VAE: pi == 1
            return self.vanilla_forward(x, generator)
        mask_samples, mask_posts = self.infer_mask_latents(x, generator)
        masks = self.decode_masks(mask_samples)
        comp_samples, comp_posts = self.infer_component_latents(x, masks, generator)
        comp_priors = self.component_prior(mask_samples)
        mask_priors = self.mask_prior(mask_samples)
        appearances = self.decode_components(comp_samples)
        nll = sgmm_nll(x, masks, appearances, self.cfg.pixel_sigma)
        kl_m = sum(kl_diag_gauss(q, p) for q, p in zip(mask_posts, mask_priors))
        kl_c = sum(kl_diag_gauss(q, p) for q, p in zip(comp_posts, comp_priors))
        return ForwardOutput(
            masks=masks,
            appearances=appearances,
            latents=LatentSet(mask_samples, mask_posts, mask_priors, comp_samples, comp_posts, comp_priors),
            nll_per_pixel=nll.mean() / self._pixel_count(x),
            kl_mask=kl_m.mean(),
            kl_component=kl_c.mean(),
            nll_per_image=nll,
        )

    def vanilla_forward(self, x: torch.Tensor, generator: torch.Generator | None = None) -> ForwardOutput:
        """Single-component VAE: pi == 1, standard-normal prior on the component latent."""
        if self.cfg.K != 1:
            raise ValueError(f"vanilla_forward requires K == 1, got K={self.cfg.K}")
        b = x.shape[0]
        ones = x.new_ones(b, 1, 1, IMAGE_SIZE, IMAGE_SIZE)
        masks = MixtureMasks(ones, torch.zeros_like(ones))
        comp_samples, comp_posts = self.infer_component_latents(x, masks, generator)
        comp_priors = [DiagGauss.standard(comp_posts[0].shape, like=x)]
        appearances = self.decode_components(comp_samples)
        nll = sgmm_nll(x, masks, appearances, self.cfg.pixel_sigma)
        kl_c = kl_diag_gauss(comp_posts[0], comp_priors[0])
        lm = self.cfg.mask_latent_dim
        std_m = DiagGauss.standard((b, lm), like=x)
        return ForwardOutput(
            masks=masks,
            appearances=appearances,
            latents=LatentSet([x.new_zeros(b, lm)], [std_m], [std_m], comp_samples, comp_posts, comp_priors),
            nll_per_pixel=nll.mean() / self._pixel_count(x),
            kl_mask=x.new_zeros(()),
            kl_component=kl_c.mean(),
            nll_per_image=nll,
        )

    @torch.no_grad()
    def generate(self, n: int, generator: torch.Generator | None = None) -> Samples:
        """Ancestral sampling from the priors; images are the clipped mixture means."""
        ref = self.mask_prior_start
        k = self.cfg.K
        if k == 1:
            z = _randn((n, self.cfg.component_latent_dim), ref, generator)
            ones = ref.new_ones(n, 1, 1, IMAGE_SIZE, IMAGE_SIZE)
            masks = MixtureMasks(ones, torch.zeros_like(ones))
            appearances = self.decode_components([z])
        else:
            inp = ref.expand(n, -1)
            state = None
            mask_samples = []
            for _ in range(k):
                state = self.mask_prior_rnn(inp, state)
                p = DiagGauss.from_params(self.mask_prior_head(state[0]))
                inp = sample_reparam(p, _randn(p.shape, ref, generator))
                mask_samples.append(inp)
            masks = self.decode_masks(mask_samples)
            comp_samples = [
                sample_reparam(p, _randn(p.shape, ref, generator))
                for p in self.component_prior(mask_samples)
            ]
            appearances = self.decode_components(comp_samples)
        images = (masks.pi * appearances).sum(dim=1).clamp(0.0, 1.0)
        return Samples(images, masks, appearances)

"""
Length-adaptive VAE.

A 1-D convolutional encoder maps a series of length L to a latent sequence h of
ceil(L / stride) tokens with d_latent = grid_size channels. h is resampled along the
token axis onto the fixed grid_size x grid_size latent grid used by the denoiser,
and back to any token count before decoding to the requested length.
"""

import logging
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from t2s.errors import ArgumentError
from t2s.schemas import VaeConfig
from t2s.utils import resampling

logger = logging.getLogger(__name__)

LOGVAR_MIN, LOGVAR_MAX = -30.0, 20.0


@dataclass
class VaePosterior:
    """Diagonal Gaussian q(h | x); mean and logvar are (B, tokens, d_latent)."""

    mean: torch.Tensor
    logvar: torch.Tensor

    def __post_init__(self):
        self.logvar = torch.clamp(self.logvar, LOGVAR_MIN, LOGVAR_MAX)

    def sample(self, generator: torch.Generator | None = None) -> torch.Tensor:
        eps = torch.randn(self.mean.shape, generator=generator, dtype=self.mean.dtype, device=self.mean.device)
        return self.mean + torch.exp(0.5 * self.logvar) * eps

    def kl(self) -> torch.Tensor:
        """Mean elementwise KL against N(0, I); zero only for mean = 0, logvar = 0."""
        return 0.5 * torch.mean(self.mean.pow(2) + torch.exp(self.logvar) - 1.0 - self.logvar)


@dataclass
class VaeLossTerms:
    total: torch.Tensor
    reconstruction: torch.Tensor
    consistency: torch.Tensor
    kl: torch.Tensor

    def as_dict(self) -> dict[str, float]:
        return {
            "total": float(self.total.detach()),
            "reconstruction": float(self.reconstruction.detach()),
            "consistency": float(self.consistency.detach()),
            "kl": float(self.kl.detach()),
        }


@dataclass
class VaeOutput:
    x_hat: torch.Tensor
    h: torch.Tensor
    h_hat: torch.Tensor
    posterior: VaePosterior


def vae_loss(
    x: torch.Tensor,
    x_hat: torch.Tensor,
    h: torch.Tensor,
    h_hat: torch.Tensor,
    posterior: VaePosterior | None,
    lam: float,
    beta_kl: float,
) -> VaeLossTerms:
    """MSE(x, x̂) + λ·MSE(h, ĥ) + β_kl·KL; the reported terms are already weighted."""
    if x.shape != x_hat.shape:
        raise ArgumentError(f"x shape {tuple(x.shape)} != x_hat shape {tuple(x_hat.shape)}")
    if h.shape != h_hat.shape:
        raise ArgumentError(f"h shape {tuple(h.shape)} != h_hat shape {tuple(h_hat.shape)}")

    reconstruction = F.mse_loss(x_hat, x)
    consistency = lam * F.mse_loss(h_hat, h)
    kl = beta_kl * posterior.kl() if posterior is not None else torch.zeros((), dtype=x.dtype, device=x.device)
    return VaeLossTerms(
        total=reconstruction + consistency + kl,
        reconstruction=reconstruction,
        consistency=consistency,
        kl=kl,
    )


class SeriesEncoder(nn.Module):
    def __init__(self, config: VaeConfig):
        super().__init__()
        hidden, stride = config.hidden, config.stride
        self.stride = stride
        self.stem = nn.Conv1d(1, hidden, kernel_size=5, padding=2)
        self.down = nn.Conv1d(hidden, hidden, kernel_size=stride, stride=stride)
        self.mix = nn.Conv1d(hidden, hidden, kernel_size=3, padding=1)
        self.to_moments = nn.Conv1d(hidden, 2 * config.d_latent, kernel_size=1)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        # x: (B, L) -> right-pad (replicate) to a multiple of stride
        length = x.shape[-1]
        pad = -length % self.stride
        y = x.unsqueeze(1)
        if pad:
            y = F.pad(y, (0, pad), mode="replicate")
        y = F.silu(self.stem(y))
        y = F.silu(self.down(y))
        y = F.silu(self.mix(y)) + y
        mean, logvar = self.to_moments(y).chunk(2, dim=1)
        return mean.transpose(1, 2), logvar.transpose(1, 2)


class SeriesDecoder(nn.Module):
    def __init__(self, config: VaeConfig):
        super().__init__()
        hidden, stride = config.hidden, config.stride
        self.stride = stride
        self.inp = nn.Conv1d(config.d_latent, hidden, kernel_size=3, padding=1)
        self.up = nn.ConvTranspose1d(hidden, hidden, kernel_size=stride, stride=stride)
        self.mix = nn.Conv1d(hidden, hidden, kernel_size=5, padding=2)
        self.out = nn.Conv1d(hidden, 1, kernel_size=1)

    def forward(self, h: torch.Tensor, target_length: int) -> torch.Tensor:
        tokens = -(-target_length // self.stride)
        if h.shape[1] != tokens:
            h = resampling.resample_tokens(h, tokens)
        y = F.silu(self.inp(h.transpose(1, 2)))
        y = F.silu(self.up(y))
        y = F.silu(self.mix(y)) + y
        return self.out(y).squeeze(1)[:, :target_length]


class LaVae(nn.Module):
    def __init__(self, config: VaeConfig | None = None):
        super().__init__()
        self.config = config or VaeConfig()
        self.encoder = SeriesEncoder(self.config)
        self.decoder = SeriesDecoder(self.config)

    def _check_length(self, length: int) -> None:
        if not self.config.l_min <= length <= self.config.l_max:
            raise ArgumentError(f"Length {length} outside [{self.config.l_min}, {self.config.l_max}]")

    def encode(self, x: torch.Tensor, generator: torch.Generator | None = None) -> tuple[torch.Tensor, VaePosterior]:
        """(B, L) series -> (h, posterior); h is sampled in training mode and the mean in eval mode."""
        if x.dim() == 1:
            x = x.unsqueeze(0)
        self._check_length(x.shape[-1])
        mean, logvar = self.encoder(x)
        posterior = VaePosterior(mean, logvar)
        h = posterior.sample(generator) if self.training else posterior.mean
        return h, posterior

    def decode(self, h: torch.Tensor, target_length: int) -> torch.Tensor:
        self._check_length(target_length)
        return self.decoder(h, target_length)

    def upsample(self, h: torch.Tensor) -> torch.Tensor:
        return resampling.upsample(h, self.config.grid_size)

    def downsample(self, z: torch.Tensor, target_tokens: int) -> torch.Tensor:
        return resampling.downsample(z, target_tokens)

    def forward(self, x: torch.Tensor, generator: torch.Generator | None = None) -> VaeOutput:
        h, posterior = self.encode(x, generator)
        h_hat = self.downsample(self.upsample(h), h.shape[1])
        return VaeOutput(x_hat=self.decode(h_hat, x.shape[-1]), h=h, h_hat=h_hat, posterior=posterior)

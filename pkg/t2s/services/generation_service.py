import logging
from collections.abc import Sequence
from pathlib import Path

import numpy as np
import torch

from t2s import checkpoint
from t2s.errors import ArgumentError, ConfigError, NumericalDivergenceError
from t2s.models.dit import TextSeriesDiT
from t2s.models.la_vae import LaVae
from t2s.schemas import SamplerConfig
from t2s.services.flow_service import ode_sample
from t2s.services.text_service import OfflineTextEncoder, TextEncoder

logger = logging.getLogger(__name__)


class TextSeriesGenerator:
    """Loaded LA-VAE + denoiser + text encoder; turns (caption, length, seed) into a series."""

    def __init__(self, vae: LaVae, denoiser: TextSeriesDiT, text_encoder: TextEncoder):
        if denoiser.config.grid_size != vae.config.grid_size:
            raise ConfigError(f"Denoiser grid {denoiser.config.grid_size} != VAE grid {vae.config.grid_size}")
        if denoiser.config.d_text != text_encoder.d_text:
            raise ConfigError(f"Denoiser d_text {denoiser.config.d_text} != encoder d_text {text_encoder.d_text}")
        self.vae = vae.eval()
        self.denoiser = denoiser.eval()
        self.text_encoder = text_encoder

    @classmethod
    def from_checkpoints(
        cls, vae_dir: str | Path, dit_dir: str | Path, text_encoder: TextEncoder | None = None
    ) -> "TextSeriesGenerator":
        vae, _ = checkpoint.load_la_vae(vae_dir)
        denoiser, manifest = checkpoint.load_denoiser(dit_dir)
        trained_with = manifest.extra.get("text_encoder", "offline")
        if text_encoder is None:
            if trained_with != "offline":
                raise ConfigError(f"Denoiser was trained with '{trained_with}' embeddings; pass a matching encoder")
            text_encoder = OfflineTextEncoder(denoiser.config.d_text)
        elif text_encoder.name != trained_with:
            logger.warning(f"Denoiser trained with '{trained_with}' embeddings, generating with '{text_encoder.name}'")
        return cls(vae, denoiser, text_encoder)

    @property
    def latent_scale(self) -> float:
        return float(self.denoiser.latent_scale)

    def condition_for(self, caption: str | None) -> torch.Tensor:
        """(1, d_text) condition; an empty caption gives the null condition."""
        if not caption:
            return torch.zeros(1, self.text_encoder.d_text)
        return torch.tensor(self.text_encoder.encode([caption]), dtype=torch.float32)

    @torch.no_grad()
    def generate_many(self, caption: str | None, length: int, sampler: SamplerConfig, seeds: Sequence[int]) -> np.ndarray:
        """(len(seeds), length) array; each row's noise comes from its own seed."""
        cfg = self.vae.config
        if not cfg.l_min <= length <= cfg.l_max:
            raise ArgumentError(f"Length {length} outside [{cfg.l_min}, {cfg.l_max}]")
        if not seeds:
            raise ArgumentError("generate_many needs at least one seed")

        g = cfg.grid_size
        z0 = torch.cat([torch.randn((1, 1, g, g), generator=torch.Generator().manual_seed(int(s))) for s in seeds])
        z1 = ode_sample(self.denoiser, self.condition_for(caption), sampler, z0=z0)
        h = self.vae.downsample(z1 / self.latent_scale, cfg.tokens_for(length))
        series = self.vae.decode(h, length)
        if not torch.isfinite(series).all():
            raise NumericalDivergenceError("Decoder produced a non-finite series")
        return series.double().numpy()

    def generate(self, caption: str | None, length: int, sampler: SamplerConfig) -> np.ndarray:
        return self.generate_many(caption, length, sampler, [sampler.seed])[0]


def generate(
    vae_ckpt: str | Path,
    dit_ckpt: str | Path,
    caption: str,
    length: int,
    sampler: SamplerConfig,
    text_encoder: TextEncoder | None = None,
) -> np.ndarray:
    generator = TextSeriesGenerator.from_checkpoints(vae_ckpt, dit_ckpt, text_encoder)
    return generator.generate(caption, length, sampler)

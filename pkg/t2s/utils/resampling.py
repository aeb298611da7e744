import torch
import torch.nn.functional as F

from t2s.errors import ArgumentError, ConfigError


def resample_tokens(h: torch.Tensor, target_tokens: int) -> torch.Tensor:
    """Linear interpolation of a (B, tokens, d) sequence along the token axis."""
    if target_tokens < 1:
        raise ArgumentError(f"target_tokens must be >= 1, got {target_tokens}")
    if h.dim() != 3:
        raise ArgumentError(f"Expected (batch, tokens, d) tensor, got shape {tuple(h.shape)}")
    if h.shape[1] == target_tokens:
        return h.clone()
    out = F.interpolate(h.transpose(1, 2), size=target_tokens, mode="linear", align_corners=True)
    return out.transpose(1, 2)


def upsample(h: torch.Tensor, grid_size: int) -> torch.Tensor:
    """(B, tokens, G) latent sequence -> (B, 1, G, G) latent grid."""
    if h.shape[-1] != grid_size:
        raise ConfigError(f"d_latent ({h.shape[-1]}) must equal grid size ({grid_size})")
    return resample_tokens(h, grid_size).unsqueeze(1)


def downsample(z: torch.Tensor, target_tokens: int) -> torch.Tensor:
    """(B, 1, G, G) latent grid -> (B, target_tokens, G) latent sequence."""
    if z.dim() == 4:
        z = z.squeeze(1)
    return resample_tokens(z, target_tokens)

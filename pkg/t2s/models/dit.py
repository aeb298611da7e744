"""
Diffusion transformer velocity predictor u(z_t, t, C) over the latent grid.

Conditioning is adaLN-Zero only: c_t = MLP(sincos(t)) + MLP(C) modulates every block's
layer norms and gates its residual branches. All gates and the output head start at
zero, so a fresh model is the zero velocity field.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from t2s.errors import ArgumentError, ConfigError, NumericalDivergenceError
from t2s.schemas import DenoiserConfig

logger = logging.getLogger(__name__)

TIMESTEP_SCALE = 1000.0


def _check_divisible(grid_size: int, patch_size: int) -> None:
    if grid_size % patch_size:
        raise ConfigError(f"Grid size {grid_size} is not divisible by patch size {patch_size}")


def patchify(z: torch.Tensor, patch_size: int) -> torch.Tensor:
    """(B, 1, G, G) grid -> (B, (G/p)^2, p*p) raster-order patches."""
    if z.dim() == 3:
        z = z.unsqueeze(1)
    b, _, g, _ = z.shape
    _check_divisible(g, patch_size)
    n = g // patch_size
    x = z.reshape(b, n, patch_size, n, patch_size)
    return x.permute(0, 1, 3, 2, 4).reshape(b, n * n, patch_size * patch_size)


def unpatchify(tokens: torch.Tensor, grid_size: int, patch_size: int) -> torch.Tensor:
    """Inverse of patchify: (B, (G/p)^2, p*p) -> (B, 1, G, G)."""
    _check_divisible(grid_size, patch_size)
    b, num, dim = tokens.shape
    n = grid_size // patch_size
    if num != n * n or dim != patch_size * patch_size:
        raise ArgumentError(f"Token shape {(num, dim)} does not match grid {grid_size} / patch {patch_size}")
    x = tokens.reshape(b, n, n, patch_size, patch_size).permute(0, 1, 3, 2, 4)
    return x.reshape(b, 1, grid_size, grid_size)


def _sincos_1d(dim: int, positions: np.ndarray) -> np.ndarray:
    omega = np.arange(dim // 2, dtype=np.float64) / (dim / 2.0)
    omega = 1.0 / 10000**omega
    out = np.outer(positions.reshape(-1), omega)
    return np.concatenate([np.sin(out), np.cos(out)], axis=1)


def positional_embedding(num_patches: int, d_model: int) -> np.ndarray:
    """Fixed 2-D sincos table of shape (num_patches, d_model); half the channels per axis."""
    side = math.isqrt(num_patches)
    if side * side != num_patches:
        raise ArgumentError(f"num_patches ({num_patches}) must be a perfect square")
    if d_model % 4:
        raise ConfigError(f"d_model ({d_model}) must be divisible by 4 for 2-D sincos embeddings")
    rows, cols = np.meshgrid(np.arange(side, dtype=np.float64), np.arange(side, dtype=np.float64), indexing="ij")
    return np.concatenate(
        [_sincos_1d(d_model // 2, rows.reshape(-1)), _sincos_1d(d_model // 2, cols.reshape(-1))],
        axis=1,
    )


class TimestepEmbedder(nn.Module):
    def __init__(self, d_model: int, frequency_embedding_size: int = 256):
        super().__init__()
        self.frequency_embedding_size = frequency_embedding_size
        self.mlp = nn.Sequential(
            nn.Linear(frequency_embedding_size, d_model),
            nn.SiLU(),
            nn.Linear(d_model, d_model),
        )

    @staticmethod
    def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
        half = dim // 2
        freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=t.dtype, device=t.device) / half)
        args = (t * TIMESTEP_SCALE)[:, None] * freqs[None]
        embedding = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
        if dim % 2:
            embedding = torch.cat([embedding, torch.zeros_like(embedding[:, :1])], dim=-1)
        return embedding

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        return self.mlp(self.timestep_embedding(t, self.frequency_embedding_size))


class TextEmbedder(nn.Module):
    """Bias-free projection of the caption embedding, so the null condition maps to zero."""

    def __init__(self, d_text: int, d_model: int):
        super().__init__()
        self.d_text = d_text
        self.mlp = nn.Sequential(
            nn.Linear(d_text, d_model, bias=False),
            nn.SiLU(),
            nn.Linear(d_model, d_model, bias=False),
        )

    def forward(self, condition: torch.Tensor) -> torch.Tensor:
        if condition.shape[-1] != self.d_text:
            raise ConfigError(f"Condition dimension {condition.shape[-1]} does not match d_text={self.d_text}")
        return self.mlp(condition)


@dataclass
class BlockConditioning:
    """Per-block (γ1, β1, α1, γ2, β2, α2), each (B, d_model); γ already offset by 1."""

    gamma1: torch.Tensor
    beta1: torch.Tensor
    alpha1: torch.Tensor
    gamma2: torch.Tensor
    beta2: torch.Tensor
    alpha2: torch.Tensor

    @classmethod
    def neutral(cls, batch: int, d_model: int, dtype: torch.dtype = torch.float32) -> "BlockConditioning":
        ones, zeros = torch.ones(batch, d_model, dtype=dtype), torch.zeros(batch, d_model, dtype=dtype)
        return cls(ones, zeros, ones.clone(), ones.clone(), zeros.clone(), ones.clone())


def modulate(x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    return gamma.unsqueeze(1) * x + beta.unsqueeze(1)


class SelfAttention(nn.Module):
    def __init__(self, d_model: int, heads: int):
        super().__init__()
        if d_model % heads:
            raise ConfigError(f"d_model ({d_model}) must be divisible by heads ({heads})")
        self.heads = heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        out = F.scaled_dot_product_attention(qkv[0], qkv[1], qkv[2])
        return self.proj(out.transpose(1, 2).reshape(b, n, d))


class DiTBlock(nn.Module):
    def __init__(self, d_model: int, heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        hidden = int(d_model * mlp_ratio)
        self.norm1 = nn.LayerNorm(d_model, elementwise_affine=False, eps=1e-6)
        self.attn = SelfAttention(d_model, heads)
        self.norm2 = nn.LayerNorm(d_model, elementwise_affine=False, eps=1e-6)
        self.mlp = nn.Sequential(
            nn.Linear(d_model, hidden),
            nn.GELU(approximate="tanh"),
            nn.Linear(hidden, d_model),
        )
        self.adaLN_modulation = nn.Sequential(nn.SiLU(), nn.Linear(d_model, 6 * d_model))

    def modulation(self, c: torch.Tensor) -> BlockConditioning:
        g1, b1, a1, g2, b2, a2 = self.adaLN_modulation(c).chunk(6, dim=-1)
        return BlockConditioning(1.0 + g1, b1, a1, 1.0 + g2, b2, a2)

    def forward(self, x: torch.Tensor, cond: BlockConditioning) -> torch.Tensor:
        x = x + cond.alpha1.unsqueeze(1) * self.attn(modulate(self.norm1(x), cond.gamma1, cond.beta1))
        return x + cond.alpha2.unsqueeze(1) * self.mlp(modulate(self.norm2(x), cond.gamma2, cond.beta2))


class FinalLayer(nn.Module):
    def __init__(self, d_model: int, patch_dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(d_model, elementwise_affine=False, eps=1e-6)
        self.adaLN_modulation = nn.Sequential(nn.SiLU(), nn.Linear(d_model, 2 * d_model))
        self.linear = nn.Linear(d_model, patch_dim)

    def forward(self, x: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        shift, scale = self.adaLN_modulation(c).chunk(2, dim=-1)
        return self.linear(modulate(self.norm(x), 1.0 + scale, shift))


class TextSeriesDiT(nn.Module):
    def __init__(self, config: DenoiserConfig | None = None):
        super().__init__()
        self.config = config = config or DenoiserConfig()
        _check_divisible(config.grid_size, config.patch_size)
        patch_dim = config.patch_size * config.patch_size

        self.patch_embed = nn.Linear(patch_dim, config.d_model)
        self.t_embedder = TimestepEmbedder(config.d_model, config.frequency_embedding_size)
        self.text_embedder = TextEmbedder(config.d_text, config.d_model)
        pos = torch.from_numpy(positional_embedding(config.num_patches, config.d_model)).float()
        self.register_buffer("pos_embed", pos.unsqueeze(0), persistent=False)
        # multiplier applied to VAE latents before the flow; set from training latents
        self.register_buffer("latent_scale", torch.ones(()))
        self.blocks = nn.ModuleList(
            [DiTBlock(config.d_model, config.heads, config.mlp_ratio) for _ in range(config.depth)]
        )
        self.final_layer = FinalLayer(config.d_model, patch_dim)
        self.initialize_weights()

    def initialize_weights(self) -> None:
        def _basic_init(module):
            if isinstance(module, nn.Linear):
                nn.init.xavier_uniform_(module.weight)
                if module.bias is not None:
                    nn.init.zeros_(module.bias)

        self.apply(_basic_init)
        for layer in (self.t_embedder.mlp[0], self.t_embedder.mlp[2]):
            nn.init.normal_(layer.weight, std=0.02)
        for block in self.blocks:
            nn.init.zeros_(block.adaLN_modulation[-1].weight)
            nn.init.zeros_(block.adaLN_modulation[-1].bias)
        nn.init.zeros_(self.final_layer.adaLN_modulation[-1].weight)
        nn.init.zeros_(self.final_layer.adaLN_modulation[-1].bias)
        nn.init.zeros_(self.final_layer.linear.weight)
        nn.init.zeros_(self.final_layer.linear.bias)

    def condition_embed(self, t: torch.Tensor, condition: torch.Tensor) -> torch.Tensor:
        """c_t = MLP(sincos(t)) + MLP(C)."""
        if t.dim() == 0:
            t = t.expand(condition.shape[0])
        return self.t_embedder(t) + self.text_embedder(condition)

    def forward(self, z_t: torch.Tensor, t: torch.Tensor, condition: torch.Tensor) -> torch.Tensor:
        """(B, 1, G, G) latent, (B,) times, (B, d_text) conditions -> (B, 1, G, G) velocity."""
        x = self.patch_embed(patchify(z_t, self.config.patch_size)) + self.pos_embed.to(z_t.dtype)
        c = self.condition_embed(t, condition)
        for block in self.blocks:
            x = block(x, block.modulation(c))
        velocity = unpatchify(self.final_layer(x, c), self.config.grid_size, self.config.patch_size)
        if not torch.isfinite(velocity).all():
            raise NumericalDivergenceError("Denoiser produced a non-finite velocity")
        return velocity

import logging
from collections.abc import Callable

import torch
import torch.nn.functional as F

from t2s.errors import ArgumentError, NumericalDivergenceError
from t2s.schemas import SamplerConfig

logger = logging.getLogger(__name__)

VelocityField = Callable[[torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]


def _check_shapes(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ArgumentError(f"{what}: shape {tuple(a.shape)} != {tuple(b.shape)}")


def _broadcast_time(t: float | torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=like.dtype, device=like.device)
    if t.numel() and (t.min() < 0 or t.max() > 1):
        raise ArgumentError("t must lie in [0, 1]")
    if t.dim() == 1 and like.dim() > 1:
        t = t.reshape(-1, *([1] * (like.dim() - 1)))
    return t


def forward_path(z0: torch.Tensor, z1: torch.Tensor, t: float | torch.Tensor) -> torch.Tensor:
    """z_t = t·z1 + (1 − t)·z0; a (B,) time tensor broadcasts over the trailing dims."""
    _check_shapes(z0, z1, "forward_path")
    t = _broadcast_time(t, z0)
    return t * z1 + (1 - t) * z0


def target_velocity(z0: torch.Tensor, z1: torch.Tensor) -> torch.Tensor:
    _check_shapes(z0, z1, "target_velocity")
    return z1 - z0


def fm_loss(predicted: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    _check_shapes(predicted, target, "fm_loss")
    return F.mse_loss(predicted, target)


def sample_training_time(generator: torch.Generator | None = None, n: int = 1, dtype=torch.float32) -> torch.Tensor:
    """n draws of t ~ Uniform(0, 1)."""
    return torch.rand(n, generator=generator, dtype=dtype)


def guided_velocity(u_cond: torch.Tensor, u_uncond: torch.Tensor, cfg_scale: float) -> torch.Tensor:
    """(1 + δ)·u_cond − δ·u_uncond, written so equal inputs return u_cond exactly."""
    _check_shapes(u_cond, u_uncond, "guided_velocity")
    if cfg_scale < 0:
        raise ArgumentError(f"cfg_scale must be >= 0, got {cfg_scale}")
    if cfg_scale == 0:
        return u_cond
    return u_cond + cfg_scale * (u_cond - u_uncond)


def _as_condition(condition, batch: int, dtype: torch.dtype) -> torch.Tensor:
    c = torch.as_tensor(getattr(condition, "vector", condition), dtype=dtype)
    if c.dim() == 1:
        c = c.unsqueeze(0)
    if c.shape[0] == 1 and batch > 1:
        c = c.expand(batch, -1)
    if c.shape[0] != batch:
        raise ArgumentError(f"Got {c.shape[0]} conditions for a batch of {batch}")
    return c


@torch.no_grad()
def ode_sample(
    denoiser: VelocityField,
    condition,
    config: SamplerConfig,
    z0: torch.Tensor | None = None,
    shape: tuple[int, ...] | None = None,
) -> torch.Tensor:
    """
    Explicit Euler from t=0 to t=1 in `config.steps` equal increments.

    With cfg_scale > 0 the conditional and null-condition velocities come from one
    batched call. `z0` defaults to standard normal noise drawn from `config.seed`.
    """
    if z0 is None:
        if shape is None:
            raise ArgumentError("ode_sample needs either z0 or shape")
        generator = torch.Generator().manual_seed(config.seed)
        z0 = torch.randn(shape, generator=generator)

    z = z0.clone()
    batch = z.shape[0]
    cond = _as_condition(condition, batch, z.dtype)
    null = torch.zeros_like(cond)
    dt = 1.0 / config.steps
    guided = config.cfg_scale > 0

    for step in range(config.steps):
        t = torch.full((batch,), step * dt, dtype=z.dtype)
        try:
            if guided:
                u = denoiser(torch.cat([z, z]), torch.cat([t, t]), torch.cat([cond, null]))
                u_cond, u_uncond = u.chunk(2, dim=0)
                u = guided_velocity(u_cond, u_uncond, config.cfg_scale)
            else:
                u = denoiser(z, t, cond)
        except NumericalDivergenceError as e:
            raise NumericalDivergenceError(f"Sampling diverged at step {step + 1}: {e}", step=step + 1) from e
        z = z + dt * u
        if not torch.isfinite(z).all():
            raise NumericalDivergenceError(f"Non-finite latent at step {step + 1}/{config.steps}", step=step + 1)

    return z

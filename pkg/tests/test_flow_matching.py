import math

import pytest
import torch

from t2s.errors import ArgumentError, NumericalDivergenceError
from t2s.models.dit import TextSeriesDiT
from t2s.schemas import SamplerConfig
from t2s.services.flow_service import (
    fm_loss,
    forward_path,
    guided_velocity,
    ode_sample,
    sample_training_time,
    target_velocity,
)

COND = torch.zeros(1, 8, dtype=torch.float64)


def _scalar(value: float) -> torch.Tensor:
    return torch.tensor([[value]], dtype=torch.float64)


def test_forward_path_endpoints_and_midpoint():
    z0, z1 = torch.randn(2, 1, 4, 4), torch.randn(2, 1, 4, 4)
    assert torch.equal(forward_path(z0, z1, 0.0), z0)
    assert torch.equal(forward_path(z0, z1, 1.0), z1)
    assert float(forward_path(_scalar(0.0), _scalar(2.0), 0.5)) == 1.0


def test_forward_path_degenerate():
    v = torch.randn(3, 5, dtype=torch.float64)
    for t in (0.1, 0.37, 0.9):
        torch.testing.assert_close(forward_path(v, v.clone(), t), v, atol=1e-15, rtol=0)


def test_forward_path_per_sample_time():
    z0, z1 = torch.zeros(2, 1, 2, 2), torch.ones(2, 1, 2, 2)
    z_t = forward_path(z0, z1, torch.tensor([0.25, 0.75]))
    assert torch.equal(z_t[0], torch.full((1, 2, 2), 0.25))
    assert torch.equal(z_t[1], torch.full((1, 2, 2), 0.75))


def test_path_consistency_on_dyadic_values():
    z0 = torch.tensor([1.0, -2.0, 4.0, 0.5])
    z1 = torch.tensor([3.0, 1.0, -4.0, 0.25])
    for t in (0.0, 0.25, 0.5, 0.75, 1.0):
        assert torch.equal(forward_path(z0, z1, t), z0 + t * target_velocity(z0, z1))


def test_forward_path_rejects_bad_input():
    with pytest.raises(ArgumentError):
        forward_path(torch.zeros(2), torch.zeros(3), 0.5)
    with pytest.raises(ArgumentError):
        forward_path(torch.zeros(2), torch.zeros(2), 1.5)


def test_target_velocity_examples():
    assert float(target_velocity(_scalar(0.0), _scalar(1.0))) == 1.0
    assert not target_velocity(torch.ones(3), torch.ones(3)).any()
    assert torch.equal(target_velocity(torch.tensor([1.0, 2.0]), torch.tensor([3.0, 1.0])), torch.tensor([2.0, -1.0]))
    with pytest.raises(ArgumentError):
        target_velocity(torch.zeros(2), torch.zeros(1, 2))


def test_fm_loss_examples():
    target = torch.randn(4, 1, 8, 8)
    assert float(fm_loss(target.clone(), target)) == 0.0
    assert float(fm_loss(target + 1, target)) == pytest.approx(1.0)


def test_fm_loss_gradient_matches_finite_differences():
    target = torch.randn(6, dtype=torch.float64)
    predicted = torch.randn(6, dtype=torch.float64, requires_grad=True)
    fm_loss(predicted, target).backward()

    step, base = 1e-5, predicted.detach()
    numeric = torch.stack(
        [
            (fm_loss(base + step * e, target) - fm_loss(base - step * e, target)) / (2 * step)
            for e in torch.eye(6, dtype=torch.float64)
        ]
    )
    assert float((predicted.grad - numeric).abs().max() / predicted.grad.abs().max()) < 1e-4


def test_training_time_distribution():
    t = sample_training_time(torch.Generator().manual_seed(0), n=100_000, dtype=torch.float64)
    assert float(t.min()) >= 0.0
    assert float(t.max()) <= 1.0
    assert abs(float(t.mean()) - 0.5) < 0.005

    again = sample_training_time(torch.Generator().manual_seed(0), n=100_000, dtype=torch.float64)
    assert torch.equal(t, again)


def test_guided_velocity_examples():
    u_c, u_u = torch.randn(2, 1, 4, 4), torch.randn(2, 1, 4, 4)
    assert guided_velocity(u_c, u_u, 0.0) is u_c
    for delta in (0.5, 7.5, 13.0):
        assert torch.equal(guided_velocity(u_c, u_c.clone(), delta), u_c)
    assert float(guided_velocity(_scalar(1.0), _scalar(0.5), 1.0)) == 1.5
    with pytest.raises(ArgumentError):
        guided_velocity(u_c, u_u, -1.0)


@pytest.mark.parametrize("steps", [1, 3, 7, 30])
def test_euler_is_exact_on_constant_fields(steps):
    z0 = torch.randn(2, 1, 4, 4, dtype=torch.float64)
    v = torch.randn(1, 1, 4, 4, dtype=torch.float64)
    result = ode_sample(lambda z, t, c: v.expand_as(z), COND, SamplerConfig(steps=steps, cfg_scale=0.0), z0=z0)
    torch.testing.assert_close(result, z0 + v, atol=1e-12, rtol=0)


def test_zero_field_keeps_the_noise():
    z0 = torch.randn(1, 1, 4, 4)
    assert torch.equal(ode_sample(lambda z, t, c: torch.zeros_like(z), COND, SamplerConfig(steps=5), z0=z0), z0)


def test_euler_converges_on_linear_field():
    """u(z, t) = z from z0 = 1 gives (1 + 1/N)^N after N steps, approaching e."""
    errors = []
    for steps in (1, 2, 4, 8, 16, 32, 64):
        result = float(ode_sample(lambda z, t, c: z, COND, SamplerConfig(steps=steps, cfg_scale=0.0), z0=_scalar(1.0)))
        assert abs(result - (1 + 1 / steps) ** steps) < 1e-12
        errors.append(abs(result - math.e))
    assert errors[0] == pytest.approx(abs(2.0 - math.e))
    assert all(a > b for a, b in zip(errors, errors[1:], strict=False))


def test_linear_field_small_step_counts():
    sampler = SamplerConfig(steps=2, cfg_scale=0.0)
    assert float(ode_sample(lambda z, t, c: z, COND, sampler, z0=_scalar(1.0))) == 2.25


def test_guidance_is_inert_when_branches_agree():
    z0 = torch.randn(1, 1, 4, 4, dtype=torch.float64)

    def field(z, t, c):
        return torch.sin(z) + t.reshape(-1, 1, 1, 1)

    plain = ode_sample(field, COND, SamplerConfig(steps=10, cfg_scale=0.0), z0=z0)
    guided = ode_sample(field, COND, SamplerConfig(steps=10, cfg_scale=7.5), z0=z0)
    torch.testing.assert_close(plain, guided, atol=0, rtol=0)


def test_guided_sampling_batches_both_branches():
    seen = []

    def field(z, t, c):
        seen.append(c.clone())
        return torch.zeros_like(z)

    ode_sample(field, torch.ones(1, 8), SamplerConfig(steps=1, cfg_scale=2.0), z0=torch.zeros(1, 1, 4, 4))
    assert seen[0].shape == (2, 8)
    assert seen[0][0].eq(1).all()
    assert not seen[0][1].any()


def test_divergence_reports_step():
    def field(z, t, c):
        return torch.full_like(z, float("inf")) if float(t[0]) >= 0.5 else z

    with pytest.raises(NumericalDivergenceError) as exc:
        ode_sample(field, COND, SamplerConfig(steps=4, cfg_scale=0.0), z0=_scalar(1.0))
    assert exc.value.step == 3


def test_seeded_noise_is_reproducible():
    sampler = SamplerConfig(steps=3, cfg_scale=0.0, seed=11)
    a = ode_sample(lambda z, t, c: -z, torch.zeros(1, 8), sampler, shape=(2, 1, 4, 4))
    b = ode_sample(lambda z, t, c: -z, torch.zeros(1, 8), sampler, shape=(2, 1, 4, 4))
    assert torch.equal(a, b)
    with pytest.raises(ArgumentError):
        ode_sample(lambda z, t, c: z, COND, sampler)


def test_fresh_denoiser_leaves_noise_unchanged(tiny_denoiser_config):
    model = TextSeriesDiT(tiny_denoiser_config).eval()
    z0 = torch.randn(2, 1, 8, 8)
    result = ode_sample(model, torch.randn(1, 16), SamplerConfig(steps=4, cfg_scale=7.5), z0=z0)
    assert torch.equal(result, z0)

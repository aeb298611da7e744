import pytest
import torch

from t2s.errors import ArgumentError, ConfigError
from t2s.models.la_vae import LaVae, VaePosterior, vae_loss
from t2s.utils import resampling


@pytest.fixture
def vae(tiny_vae_config):
    torch.manual_seed(0)
    return LaVae(tiny_vae_config).eval()


@pytest.mark.parametrize(("length", "tokens"), [(24, 6), (96, 24), (25, 7)])
def test_encode_token_count(vae, length, tokens):
    h, posterior = vae.encode(torch.randn(2, length))
    assert h.shape == (2, tokens, vae.config.grid_size)
    assert posterior.mean.shape == posterior.logvar.shape == h.shape


def test_eval_encode_is_deterministic(vae):
    x = torch.randn(3, 48)
    h1, _ = vae.encode(x)
    h2, _ = vae.encode(x)
    assert torch.equal(h1, h2)


def test_train_mode_samples_from_posterior(vae):
    vae.train()
    x = torch.randn(2, 24)
    h, posterior = vae.encode(x, torch.Generator().manual_seed(1))
    assert not torch.equal(h, posterior.mean)


def test_decode_length_fidelity(vae):
    """Every length in range decodes to exactly that many finite points."""
    for length in range(24, 97):
        h, _ = vae.encode(torch.randn(1, length))
        out = vae.decode(h, length)
        assert out.shape == (1, length)
        assert torch.isfinite(out).all()


def test_decode_from_other_token_count(vae):
    h, _ = vae.encode(torch.randn(1, 24))
    assert vae.decode(h, 96).shape == (1, 96)


@pytest.mark.parametrize("length", [4, 97])
def test_lengths_outside_range_are_rejected(vae, length):
    with pytest.raises(ArgumentError):
        vae.encode(torch.randn(1, length))
    with pytest.raises(ArgumentError):
        vae.decode(torch.zeros(1, 6, vae.config.grid_size), length)


def test_forward_shapes(vae):
    out = vae(torch.randn(4, 48))
    assert out.x_hat.shape == (4, 48)
    assert out.h.shape == out.h_hat.shape == (4, 12, vae.config.grid_size)


def test_upsample_constant():
    h = torch.full((1, 5, 8), 0.37, dtype=torch.float64)
    z = resampling.upsample(h, 8)
    assert z.shape == (1, 1, 8, 8)
    torch.testing.assert_close(z, torch.full_like(z, 0.37))


def test_upsample_ramp_along_tokens_gives_ramp_along_rows():
    h = torch.linspace(0, 1, 4, dtype=torch.float64).reshape(1, 4, 1).expand(1, 4, 8)
    z = resampling.upsample(h, 8)[0, 0]
    expected = torch.linspace(0, 1, 8, dtype=torch.float64)
    for col in range(8):
        torch.testing.assert_close(z[:, col], expected, atol=1e-12, rtol=0)


def test_upsample_is_identity_at_grid_size():
    h = torch.randn(2, 8, 8)
    assert torch.equal(resampling.upsample(h, 8)[:, 0], h)
    assert torch.equal(resampling.downsample(resampling.upsample(h, 8), 8), h)


def test_downsample_constant_grid():
    z = torch.full((1, 1, 8, 8), -2.5)
    torch.testing.assert_close(resampling.downsample(z, 3), torch.full((1, 3, 8), -2.5))


@pytest.mark.parametrize("tokens", [2, 3, 5, 7, 8])
def test_affine_latents_survive_round_trip(tokens):
    rows = torch.linspace(-1, 2, tokens, dtype=torch.float64)
    cols = torch.linspace(0.5, 1.5, 8, dtype=torch.float64)
    h = (0.3 + 1.7 * rows[:, None] * cols[None, :]).unsqueeze(0)
    recovered = resampling.downsample(resampling.upsample(h, 8), tokens)
    torch.testing.assert_close(recovered, h, atol=1e-6, rtol=0)


def test_upsample_rejects_wrong_latent_width():
    with pytest.raises(ConfigError):
        resampling.upsample(torch.zeros(1, 4, 6), 8)


def test_loss_vanishes_at_prior_and_perfect_reconstruction():
    x = torch.randn(2, 24)
    h = torch.randn(2, 6, 8)
    prior = VaePosterior(torch.zeros(2, 6, 8), torch.zeros(2, 6, 8))
    terms = vae_loss(x, x.clone(), h, h.clone(), prior, lam=0.1, beta_kl=1e-4)
    assert float(terms.total) == 0.0


def test_loss_reconstruction_example():
    x, x_hat = torch.zeros(1, 2), torch.ones(1, 2)
    h = torch.zeros(1, 1, 8)
    terms = vae_loss(x, x_hat, h, h + 5, None, lam=0.0, beta_kl=0.0)
    assert float(terms.total) == pytest.approx(1.0)


def _randn(g: torch.Generator, *shape: int, requires_grad: bool = False) -> torch.Tensor:
    return torch.randn(*shape, generator=g, dtype=torch.float64, requires_grad=requires_grad)


def test_loss_decomposition():
    g = torch.Generator().manual_seed(3)
    x, x_hat = _randn(g, 3, 24), _randn(g, 3, 24)
    h, h_hat = _randn(g, 3, 6, 8), _randn(g, 3, 6, 8)
    posterior = VaePosterior(_randn(g, 3, 6, 8), torch.zeros(3, 6, 8, dtype=torch.float64))

    terms = vae_loss(x, x_hat, h, h_hat, posterior, lam=0.1, beta_kl=1e-4)
    parts = terms.as_dict()
    assert abs(parts["total"] - (parts["reconstruction"] + parts["consistency"] + parts["kl"])) < 1e-9
    assert min(parts.values()) >= 0.0


def test_kl_is_zero_only_at_prior():
    zeros = torch.zeros(1, 4, 8)
    assert float(VaePosterior(zeros, zeros).kl()) == 0.0
    assert float(VaePosterior(zeros + 0.1, zeros).kl()) > 0.0
    assert float(VaePosterior(zeros, zeros - 0.1).kl()) > 0.0


def test_loss_gradient_matches_finite_differences():
    g = torch.Generator().manual_seed(7)
    x = _randn(g, 2, 12)
    h, h_hat = _randn(g, 2, 3, 8), _randn(g, 2, 3, 8)
    x_hat = _randn(g, 2, 12, requires_grad=True)

    vae_loss(x, x_hat, h, h_hat, None, lam=0.1, beta_kl=0.0).total.backward()
    analytic = x_hat.grad.clone()

    step = 1e-5
    numeric = torch.zeros_like(analytic)
    base = x_hat.detach()
    for idx in range(base.numel()):
        plus, minus = base.clone().view(-1), base.clone().view(-1)
        plus[idx] += step
        minus[idx] -= step
        f_plus = vae_loss(x, plus.view_as(base), h, h_hat, None, 0.1, 0.0).total
        f_minus = vae_loss(x, minus.view_as(base), h, h_hat, None, 0.1, 0.0).total
        numeric.view(-1)[idx] = (f_plus - f_minus) / (2 * step)

    rel = (analytic - numeric).abs().max() / analytic.abs().max()
    assert float(rel) < 1e-4


def test_loss_shape_mismatch():
    with pytest.raises(ArgumentError):
        vae_loss(torch.zeros(1, 4), torch.zeros(1, 5), torch.zeros(1, 1, 8), torch.zeros(1, 1, 8), None, 0.1, 0.0)

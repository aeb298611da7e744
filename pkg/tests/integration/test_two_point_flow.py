"""A one-dimensional two-mode flow-matching task with a known answer per caption."""

import numpy as np
import pytest
import torch
from torch import nn

from t2s.schemas import SamplerConfig
from t2s.services.flow_service import fm_loss, forward_path, ode_sample, sample_training_time, target_velocity
from t2s.services.text_service import OfflineTextEncoder, encode_offline
from t2s.services.training_service import condition_dropout

pytestmark = pytest.mark.slow

TARGETS = {"goes up": 1.0, "goes down": -1.0}


class VelocityMLP(nn.Module):
    def __init__(self, d_text: int, hidden: int = 128):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(2 + d_text, hidden), nn.SiLU(), nn.Linear(hidden, hidden), nn.SiLU(), nn.Linear(hidden, 1)
        )

    def forward(self, z: torch.Tensor, t: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([z, t[:, None], cond], dim=-1))


@pytest.fixture(scope="module")
def trained_field():
    torch.manual_seed(0)
    d_text = 16
    encoder = OfflineTextEncoder(d_text)
    captions = list(TARGETS)
    table = dict(zip(captions, encoder.encode(captions), strict=True))
    rng = np.random.default_rng(0)
    generator = torch.Generator().manual_seed(0)
    model = VelocityMLP(d_text)
    optimizer = torch.optim.Adam(model.parameters(), lr=1e-3)

    for _ in range(4000):
        picks = rng.integers(0, 2, size=256)
        z1 = torch.tensor([[TARGETS[captions[i]]] for i in picks], dtype=torch.float32)
        conds = [condition_dropout(encode_offline(captions[i], d_text), 0.1, rng) for i in picks]
        cond = torch.tensor(np.stack([c.vector for c in conds]), dtype=torch.float32)
        z0 = torch.randn(z1.shape, generator=generator)
        t = sample_training_time(generator, n=len(picks))

        optimizer.zero_grad()
        loss = fm_loss(model(forward_path(z0, z1, t), t, cond), target_velocity(z0, z1))
        loss.backward()
        optimizer.step()

    return model.eval(), table


@pytest.mark.parametrize("caption", list(TARGETS))
def test_guided_samples_land_on_the_captioned_mode(trained_field, caption):
    model, table = trained_field
    cond = torch.tensor(table[caption], dtype=torch.float32)
    samples = ode_sample(model, cond, SamplerConfig(steps=30, cfg_scale=2.0, seed=1), shape=(512, 1))
    assert abs(float(samples.mean()) - TARGETS[caption]) <= 0.15

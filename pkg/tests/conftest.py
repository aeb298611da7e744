from collections.abc import Sequence

import numpy as np
import pytest
from httpx import ASGITransport

from t2s.mock_server import create_mock_app
from t2s.schemas import CaptionedSample, CaptionLevel, DenoiserConfig, VaeConfig
from t2s.services.dataset_service import Dataset
from t2s.services.synth_service import synth_samples


@pytest.fixture(autouse=True)
def isolated_env(tmp_path, monkeypatch):
    """Keep settings, caches and run directories inside the test's tmp_path."""
    for var in ("T2S_EMBED_API_KEY", "T2S_LLM_API_KEY", "T2S_LOG_LEVEL", "T2S_D_TEXT"):
        monkeypatch.delenv(var, raising=False)
    monkeypatch.setenv("T2S_CACHE_DIR", str(tmp_path / "cache"))
    monkeypatch.setenv("T2S_RUNS_DIR", str(tmp_path / "runs"))
    monkeypatch.chdir(tmp_path)


def make_sample(
    series: Sequence[float],
    caption: str = "flat",
    level: CaptionLevel = CaptionLevel.INSTANCE,
    source_id: str = "",
) -> CaptionedSample:
    return CaptionedSample(series=list(series), caption=caption, level=level, source_id=source_id)


def make_dataset(name: str, lengths: Sequence[int], count: int = 6, seed: int = 0) -> Dataset:
    rng = np.random.default_rng(seed)
    samples = []
    for length in lengths:
        samples.extend(synth_samples(CaptionLevel.INSTANCE, length, count, rng, noise=0.01))
    return Dataset(name=name, samples=tuple(samples))


@pytest.fixture
def tiny_vae_config() -> VaeConfig:
    return VaeConfig(stride=4, grid_size=8, hidden=16, l_min=8, l_max=96)


@pytest.fixture
def tiny_denoiser_config() -> DenoiserConfig:
    return DenoiserConfig(
        d_model=16, depth=2, heads=2, patch_size=2, d_text=16, grid_size=8, frequency_embedding_size=16
    )


@pytest.fixture
def toy_datasets() -> list[Dataset]:
    return [make_dataset("toy_24", [24], seed=1), make_dataset("toy_48", [48], seed=2)]


@pytest.fixture
def mock_app():
    return create_mock_app(dim=16)


@pytest.fixture
def mock_transport(mock_app) -> ASGITransport:
    return ASGITransport(app=mock_app)


@pytest.fixture
def sample_factory():
    return make_sample


@pytest.fixture
def dataset_factory():
    return make_dataset

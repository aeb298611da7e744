import math
from enum import StrEnum
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class CaptionLevel(StrEnum):
    POINT = "point"
    FRAGMENT = "fragment"
    INSTANCE = "instance"


class CaptionedSample(BaseModel):
    """One series paired with its caption; the JSONL record of every dataset file."""

    model_config = ConfigDict(frozen=True)

    series: list[float] = Field(..., min_length=2)
    caption: str
    level: CaptionLevel
    domain: str = "unknown"
    source_id: str = ""

    @field_validator("series")
    @classmethod
    def check_finite(cls, v: list[float]) -> list[float]:
        for i, value in enumerate(v):
            if not math.isfinite(value):
                raise ValueError(f"series[{i}] is not finite ({value})")
        return v

    @property
    def length(self) -> int:
        return len(self.series)


class NormalizationParams(BaseModel):
    """Per-sample statistics: minmax stores (min, max - min), zscore stores (mean, std)."""

    model_config = ConfigDict(frozen=True)

    scheme: Literal["minmax", "zscore"]
    offset: float
    scale: float


class VaeConfig(BaseModel):
    stride: int = Field(4, ge=1)
    grid_size: int = Field(16, ge=2)
    hidden: int = Field(64, ge=4)
    l_min: int = Field(8, ge=2)
    l_max: int = Field(128, ge=2)

    @model_validator(mode="after")
    def check_range(self):
        if self.l_min > self.l_max:
            raise ValueError(f"l_min ({self.l_min}) must not exceed l_max ({self.l_max})")
        return self

    @property
    def d_latent(self) -> int:
        return self.grid_size

    def tokens_for(self, length: int) -> int:
        return math.ceil(length / self.stride)


class DenoiserConfig(BaseModel):
    d_model: int = Field(128, ge=4)
    depth: int = Field(4, ge=1)
    heads: int = Field(4, ge=1)
    patch_size: int = Field(4, ge=1)
    d_text: int = Field(64, ge=1)
    grid_size: int = Field(16, ge=1)
    mlp_ratio: float = Field(4.0, gt=0)
    frequency_embedding_size: int = Field(256, ge=2)

    @property
    def num_patches(self) -> int:
        return (self.grid_size // self.patch_size) ** 2


class SamplerConfig(BaseModel):
    steps: int = Field(30, ge=1)
    cfg_scale: float = Field(7.5, ge=0.0)
    seed: int = 0


class TrainingConfig(BaseModel):
    phase: Literal["vae", "diffusion"]
    iterations: int = Field(2000, ge=1)
    batch_size: int = Field(32, ge=1)
    learning_rate: float | None = Field(None, gt=0)
    lam: float = Field(0.1, ge=0.0)
    beta_kl: float = Field(1e-4, ge=0.0)
    p_drop: float = Field(0.1, ge=0.0, le=1.0)
    lengths: list[int] = Field(default_factory=lambda: [24, 48, 96], min_length=1)
    seed: int = 0
    output_dir: Path = Path("runs/run")
    normalization: Literal["minmax", "zscore"] = "minmax"
    unfreeze_vae: bool = False
    text_guidance: bool = True
    log_every: int = Field(50, ge=1)

    @property
    def effective_learning_rate(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return 1e-3 if self.phase == "vae" else 3e-4


class EmbeddingClientConfig(BaseModel):
    endpoint: str
    model: str = "text-embedding-3-small"
    timeout: float = Field(30.0, gt=0)
    max_retries: int = Field(3, ge=0)
    cache_path: Path | None = None
    d_text: int = Field(64, ge=1)
    api_key: str = ""
    backoff_seconds: float = Field(0.5, ge=0.0)
    max_concurrency: int = Field(4, ge=1)
    batch_size: int = Field(64, ge=1)


class PipelineConfig(BaseModel):
    fragment_length: int = Field(24, ge=2)
    token_limit: int = Field(30, ge=8)
    n_candidates: int = Field(5, ge=2)
    concurrency: int = Field(4, ge=1)
    output_path: Path = Path("fragments.jsonl")
    llm_cache_path: Path | None = None
    domain: str = "unknown"


class SynthConfig(BaseModel):
    samples_per_length: int = Field(300, ge=1)
    lengths: list[int] = Field(default_factory=lambda: [24, 48, 96], min_length=1)
    seed: int = 0
    noise: float = Field(0.02, ge=0.0)
    output_dir: Path = Path("data/synth")


class RunRecord(BaseModel):
    """One RunLog line: per-length loss terms for a single iteration."""

    iteration: int
    total: float
    terms: dict[str, dict[str, float]]
    wall_time: float
    updates: int


class GenerationSettings(BaseModel):
    cfg_scale: float
    steps: int
    seed: int
    candidates_per_caption: int
    threshold: float
    normalization: str


class MetricRow(BaseModel):
    dataset: str
    length: int
    wape: float | None = Field(None, ge=0.0)
    mse: float = Field(..., ge=0.0)
    mrr_at_10: float | None = Field(None, ge=0.0, le=1.0)
    samples: int = Field(..., gt=0)
    failures: int = Field(0, ge=0)


class EvalReport(BaseModel):
    settings: GenerationSettings
    rows: list[MetricRow]
    failures: int = 0

    def row(self, length: int) -> MetricRow | None:
        return next((r for r in self.rows if r.length == length), None)

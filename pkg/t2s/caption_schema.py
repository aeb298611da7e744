"""
Prompt templates and records for the fragment-captioning pipeline.

Seed prompts ship as versioned data in `t2s/data/seed_prompts.json`; every emitted
caption record carries the prompt version it was produced with.
"""

import json
from collections.abc import Sequence
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from t2s.errors import ArgumentError, ConfigError

PROMPT_VERSION = "fragment-v1"
SEED_PROMPTS_PATH = Path(__file__).parent / "data" / "seed_prompts.json"
TOKEN_LIMIT_SLOT = "{token_limit}"
MIN_TOKEN_LIMIT = 8
VALUE_PRECISION = 4


class SeedPrompt(BaseModel):
    version: str = PROMPT_VERSION
    exemplars: list[str] = Field(..., min_length=1)
    template: str

    @field_validator("template")
    @classmethod
    def require_token_limit(cls, v: str) -> str:
        if TOKEN_LIMIT_SLOT not in v:
            raise ValueError(f"template must contain the {TOKEN_LIMIT_SLOT} slot")
        return v


class CandidateSet(BaseModel):
    """Candidate captions for one fragment and the embedding-agreement scores used to pick one."""

    fragment_id: str
    candidates: list[str] = Field(..., min_length=2)
    embeddings: list[list[float]]
    scores: list[float]
    selected: int = Field(..., ge=0)
    prompt_version: str = PROMPT_VERSION

    @model_validator(mode="after")
    def check_consistency(self):
        n = len(self.candidates)
        if len(self.embeddings) != n or len(self.scores) != n:
            raise ValueError("candidates, embeddings and scores must have equal length")
        if self.selected >= n or self.selected != int(np.argmax(self.scores)):
            raise ValueError(f"selected index {self.selected} does not maximize the scores")
        return self

    @property
    def caption(self) -> str:
        return self.candidates[self.selected]

    def sidecar_record(self) -> dict:
        return {
            "fragment_id": self.fragment_id,
            "candidates": self.candidates,
            "scores": [round(s, 6) for s in self.scores],
            "selected": self.selected,
            "prompt_version": self.prompt_version,
        }


def load_seed_prompt(path: str | Path | None = None) -> SeedPrompt:
    path = Path(path) if path else SEED_PROMPTS_PATH
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read seed prompts from {path}: {e}") from e
    data.pop("note", None)
    return SeedPrompt(**data)


def fragment_stats(fragment: Sequence[float]) -> dict[str, float]:
    x = np.asarray(fragment, dtype=np.float64)
    slope = float(np.polyfit(np.arange(len(x)), x, 1)[0]) if len(x) > 1 else 0.0
    return {
        "min": float(x.min()),
        "max": float(x.max()),
        "mean": float(x.mean()),
        "std": float(x.std()),
        "start": float(x[0]),
        "end": float(x[-1]),
        "slope": slope,
    }


def build_prompt(fragment: Sequence[float], seeds: SeedPrompt, token_limit: int) -> str:
    """Deterministic fill of the seed template with the fragment values, its stats and M."""
    if len(fragment) == 0:
        raise ArgumentError("Cannot build a prompt for an empty fragment")
    if token_limit < MIN_TOKEN_LIMIT:
        raise ArgumentError(f"token_limit must be >= {MIN_TOKEN_LIMIT}, got {token_limit}")

    values = ", ".join(f"{v:.{VALUE_PRECISION}f}" for v in fragment)
    stats = ", ".join(f"{k}={v:.{VALUE_PRECISION}f}" for k, v in fragment_stats(fragment).items())
    exemplars = "\n".join(f"- {e}" for e in seeds.exemplars)
    return (
        seeds.template.replace("{exemplars}", exemplars)
        .replace("{length}", str(len(fragment)))
        .replace("{values}", values)
        .replace("{stats}", stats)
        .replace(TOKEN_LIMIT_SLOT, str(token_limit))
    )

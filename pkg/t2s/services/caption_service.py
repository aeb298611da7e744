import asyncio
import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field

from t2s.caption_schema import CandidateSet, SeedPrompt, build_prompt
from t2s.errors import ArgumentError, EmptyDatasetError, T2SError
from t2s.schemas import CaptionedSample, CaptionLevel, PipelineConfig
from t2s.services.dataset_service import Dataset, normalize, segment_series, write_dataset
from t2s.services.llm_service import LLMConfig, LLMService
from t2s.utils.cache import ResponseCache

logger = logging.getLogger(__name__)

ZERO_NORM_SCORE = -1.0


class RawSeries(BaseModel):
    series: list[float] = Field(..., min_length=2)
    source_id: str
    domain: str = "unknown"
    boundaries: list[int] | None = None


def score_candidates(embeddings: Sequence[Sequence[float]] | np.ndarray) -> list[float]:
    """Mean cosine of each embedding to all others; zero-norm embeddings score -1."""
    e = np.asarray(embeddings, dtype=np.float64)
    n = e.shape[0]
    if n < 2:
        raise ArgumentError(f"Need at least two candidates to score, got {n}")
    norms = np.linalg.norm(e, axis=1)
    valid = norms > 0
    unit = np.zeros_like(e)
    unit[valid] = e[valid] / norms[valid, None]
    sim = unit @ unit.T
    scores = (sim.sum(axis=1) - np.diag(sim)) / (n - 1)
    scores[~valid] = ZERO_NORM_SCORE
    return [float(s) for s in scores]


def select_best(candidates: Sequence[str], embeddings: Sequence[Sequence[float]] | np.ndarray) -> int:
    """Index of the candidate most similar on average to the others; lowest index wins ties."""
    if len(candidates) != len(embeddings):
        raise ArgumentError(f"{len(candidates)} candidates but {len(embeddings)} embeddings")
    return int(np.argmax(score_candidates(embeddings)))


def fragment_boundaries(length: int, fragment_length: int) -> list[int]:
    """Cut points every fragment_length; a trailing piece shorter than 2 points joins its neighbour."""
    bounds = list(range(fragment_length, length, fragment_length))
    if bounds and length - bounds[-1] < 2:
        bounds.pop()
    return bounds


async def _embed(embedder, captions: list[str]) -> np.ndarray:
    if hasattr(embedder, "embed"):
        return np.asarray(await embedder.embed(captions), dtype=np.float64)
    return np.asarray(embedder.encode(captions), dtype=np.float64)


@dataclass
class PipelineResult:
    samples: list[CaptionedSample]
    candidate_sets: list[CandidateSet]
    skipped: int
    total_fragments: int
    output_path: Path
    scores_path: Path
    failures: list[str] = field(default_factory=list)

    @property
    def dataset(self) -> Dataset:
        return Dataset(name=self.output_path.stem, samples=tuple(self.samples))


async def caption_fragment(
    fragment: np.ndarray,
    fragment_id: str,
    seeds: SeedPrompt,
    llm_config: LLMConfig,
    embedder,
    config: PipelineConfig,
    llm_cache: ResponseCache | None = None,
) -> CandidateSet:
    prompt = build_prompt(normalize(fragment)[0], seeds, config.token_limit)
    candidates = await LLMService.generate_candidates(
        prompt, n=config.n_candidates, config=llm_config, token_limit=config.token_limit, cache=llm_cache
    )
    embeddings = await _embed(embedder, candidates)
    scores = score_candidates(embeddings)
    return CandidateSet(
        fragment_id=fragment_id,
        candidates=candidates,
        embeddings=embeddings.tolist(),
        scores=scores,
        selected=int(np.argmax(scores)),
        prompt_version=seeds.version,
    )


async def build_fragment_dataset(
    corpus: Sequence[RawSeries],
    seeds: SeedPrompt,
    llm_config: LLMConfig,
    embedder,
    config: PipelineConfig,
) -> PipelineResult:
    """
    Segment every series, caption each fragment with the best of n LLM candidates, and
    write the fragment-level JSONL plus a `.scores.jsonl` sidecar. Failed fragments are
    logged and skipped; if none succeeds, EmptyDatasetError is raised and nothing is written.
    """
    llm_cache = ResponseCache(config.llm_cache_path) if config.llm_cache_path else None
    work: list[tuple[str, np.ndarray, RawSeries]] = []
    for raw in corpus:
        bounds = raw.boundaries
        if bounds is None:
            bounds = fragment_boundaries(len(raw.series), config.fragment_length)
        for j, fragment in enumerate(segment_series(raw.series, bounds)):
            work.append((f"{raw.source_id}#f{j}", fragment, raw))

    semaphore = asyncio.Semaphore(config.concurrency)

    async def run(fragment_id: str, fragment: np.ndarray) -> CandidateSet | None:
        async with semaphore:
            try:
                return await caption_fragment(fragment, fragment_id, seeds, llm_config, embedder, config, llm_cache)
            except T2SError as e:
                logger.warning(f"Skipping fragment {fragment_id}: {e}")
                return None

    logger.info(f"Captioning {len(work)} fragments from {len(corpus)} series")
    results = await asyncio.gather(*(run(fid, frag) for fid, frag, _ in work))

    samples, sets, failures = [], [], []
    for (fragment_id, fragment, raw), candidate_set in zip(work, results, strict=True):
        if candidate_set is None:
            failures.append(fragment_id)
            continue
        sets.append(candidate_set)
        samples.append(
            CaptionedSample(
                series=[float(v) for v in fragment],
                caption=candidate_set.caption,
                level=CaptionLevel.FRAGMENT,
                domain=raw.domain if raw.domain != "unknown" else config.domain,
                source_id=fragment_id,
            )
        )

    if not samples:
        raise EmptyDatasetError(f"All {len(work)} fragments failed; nothing written to {config.output_path}")

    output_path = write_dataset(samples, config.output_path)
    scores_path = output_path.with_suffix(".scores.jsonl")
    with scores_path.open("w", encoding="utf-8") as fh:
        for candidate_set in sets:
            fh.write(json.dumps(candidate_set.sidecar_record(), separators=(",", ":")) + "\n")

    logger.info(f"Wrote {len(samples)} captioned fragments to {output_path} ({len(failures)} skipped)")
    return PipelineResult(
        samples=samples,
        candidate_sets=sets,
        skipped=len(failures),
        total_fragments=len(work),
        output_path=output_path,
        scores_path=scores_path,
        failures=failures,
    )

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
import pandas as pd

from t2s.errors import ArgumentError, T2SError, UndefinedMetricError
from t2s.schemas import EvalReport, GenerationSettings, MetricRow, SamplerConfig
from t2s.services.dataset_service import Dataset, normalize, subsample_dataset
from t2s.utils import metrics, plotting

logger = logging.getLogger(__name__)

DEFAULT_CANDIDATES = 10


class SeriesGenerator(Protocol):
    def generate_many(
        self, caption: str | None, length: int, sampler: SamplerConfig, seeds: Sequence[int]
    ) -> np.ndarray: ...


def candidate_seeds(base_seed: int, sample_index: int, k: int) -> list[int]:
    return [base_seed + sample_index * k + n for n in range(k)]


@dataclass
class _LengthBucket:
    truths: list[np.ndarray] = field(default_factory=list)
    candidates: list[np.ndarray] = field(default_factory=list)
    failures: int = 0


def evaluate(
    generator: SeriesGenerator,
    dataset: Dataset,
    sampler: SamplerConfig,
    candidates_per_caption: int = DEFAULT_CANDIDATES,
    threshold: float = metrics.DEFAULT_THRESHOLD,
    normalization: str = "minmax",
) -> EvalReport:
    """
    Per-length WAPE / MSE (first candidate) and MRR@10 (all candidates) against the
    normalized truths. MRR@10 is only reported when exactly ten candidates are drawn
    per caption. Samples whose generation fails are counted and left out.
    """
    if candidates_per_caption < 1:
        raise ArgumentError(f"candidates_per_caption must be >= 1, got {candidates_per_caption}")
    ranked = candidates_per_caption == metrics.MRR_CUTOFF
    if not ranked:
        logger.info(
            f"MRR@{metrics.MRR_CUTOFF} needs {metrics.MRR_CUTOFF} candidates per caption, "
            f"got {candidates_per_caption}; leaving it unset"
        )

    buckets: dict[int, _LengthBucket] = {}
    for index, sample in enumerate(dataset.samples):
        bucket = buckets.setdefault(sample.length, _LengthBucket())
        seeds = candidate_seeds(sampler.seed, index, candidates_per_caption)
        try:
            generated = np.asarray(generator.generate_many(sample.caption, sample.length, sampler, seeds))
        except T2SError as e:
            logger.warning(f"Generation failed for sample {index} ({sample.source_id}): {e}")
            bucket.failures += 1
            continue
        bucket.truths.append(normalize(sample.series, normalization)[0])
        bucket.candidates.append(generated)

    rows, failures = [], 0
    for length in sorted(buckets):
        bucket = buckets[length]
        failures += bucket.failures
        if not bucket.truths:
            logger.warning(f"No successful generations at length {length}; row omitted")
            continue
        firsts = [c[0] for c in bucket.candidates]
        try:
            wape = metrics.wape(bucket.truths, firsts)
        except UndefinedMetricError as e:
            logger.warning(f"WAPE undefined at length {length}: {e}")
            wape = None
        rows.append(
            MetricRow(
                dataset=dataset.name,
                length=length,
                wape=wape,
                mse=metrics.mse(bucket.truths, firsts),
                mrr_at_10=metrics.mrr_at_10(bucket.candidates, bucket.truths, threshold) if ranked else None,
                samples=len(bucket.truths),
                failures=bucket.failures,
            )
        )

    settings = GenerationSettings(
        cfg_scale=sampler.cfg_scale,
        steps=sampler.steps,
        seed=sampler.seed,
        candidates_per_caption=candidates_per_caption,
        threshold=threshold,
        normalization=normalization,
    )
    if failures:
        logger.warning(f"{failures} sample(s) failed during evaluation of '{dataset.name}'")
    return EvalReport(settings=settings, rows=rows, failures=failures)


@dataclass
class SweepCell:
    cfg_scale: float
    steps: int
    report: EvalReport


@dataclass
class SweepResult:
    cells: list[SweepCell]

    def to_frame(self) -> pd.DataFrame:
        """One row per (cfg_scale, steps, dataset, length)."""
        records = [
            {
                "cfg_scale": cell.cfg_scale,
                "steps": cell.steps,
                **row.model_dump(),
                "threshold": cell.report.settings.threshold,
            }
            for cell in self.cells
            for row in cell.report.rows
        ]
        return pd.DataFrame(records)

    def matrix(self, metric: str = "mrr_at_10") -> pd.DataFrame:
        """cfg_scale x steps matrix of the metric averaged over lengths."""
        frame = self.to_frame()
        if frame.empty or metric not in frame or frame[metric].isna().all():
            raise UndefinedMetricError(f"No sweep cell produced a value for {metric}")
        return frame.pivot_table(index="cfg_scale", columns="steps", values=metric, aggfunc="mean")

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path

    def plot_heatmap(self, path: str | Path, metric: str = "mrr_at_10") -> Path:
        return plotting.plot_heatmap(self.matrix(metric), path, title=f"mean {metric} by cfg scale and steps")


def sweep(
    generator: SeriesGenerator,
    dataset: Dataset,
    cfg_grid: Sequence[float],
    steps_grid: Sequence[int],
    base_sampler: SamplerConfig | None = None,
    **eval_kwargs,
) -> SweepResult:
    if not cfg_grid or not steps_grid:
        raise ArgumentError("Sweep grids must be non-empty")
    base_sampler = base_sampler or SamplerConfig()
    cells = []
    for cfg_scale in cfg_grid:
        for steps in steps_grid:
            sampler = base_sampler.model_copy(update={"cfg_scale": float(cfg_scale), "steps": int(steps)})
            logger.info(f"Sweep cell cfg_scale={cfg_scale} steps={steps}")
            cells.append(SweepCell(float(cfg_scale), int(steps), evaluate(generator, dataset, sampler, **eval_kwargs)))
    return SweepResult(cells)


def data_scarcity(
    train_fn: Callable[[Dataset], SeriesGenerator],
    train_dataset: Dataset,
    test_dataset: Dataset,
    ratios: Sequence[float],
    sampler: SamplerConfig,
    seed: int = 0,
    **eval_kwargs,
) -> dict[float, EvalReport]:
    """Train on deterministic subsets of the training data and evaluate each on the same test set."""
    if not ratios:
        raise ArgumentError("data_scarcity needs at least one ratio")
    reports = {}
    for ratio in ratios:
        subset = subsample_dataset(train_dataset, ratio, seed)
        logger.info(f"Data-scarcity run: ratio={ratio} ({len(subset)}/{len(train_dataset)} samples)")
        reports[ratio] = evaluate(train_fn(subset), test_dataset, sampler, **eval_kwargs)
    return reports

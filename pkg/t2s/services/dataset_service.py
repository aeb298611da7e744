import json
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
import pandas as pd
from pydantic import ValidationError

from t2s.errors import ArgumentError, DatasetParseError, EmptyDatasetError
from t2s.schemas import CaptionedSample, CaptionLevel, NormalizationParams

logger = logging.getLogger(__name__)

RECORD_FIELDS = ("series", "caption", "level", "domain", "source_id")


@dataclass(frozen=True)
class Dataset:
    """Immutable, level-homogeneous list of captioned samples."""

    name: str
    samples: tuple[CaptionedSample, ...]

    def __post_init__(self):
        if not self.samples:
            raise EmptyDatasetError(f"Dataset '{self.name}' has no samples")
        levels = {s.level for s in self.samples}
        if len(levels) > 1:
            raise ArgumentError(f"Dataset '{self.name}' mixes caption levels: {sorted(levels)}")

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, index: int) -> CaptionedSample:
        return self.samples[index]

    @property
    def level(self) -> CaptionLevel:
        return self.samples[0].level

    @property
    def lengths(self) -> set[int]:
        return {s.length for s in self.samples}


def _validate_record(data: object, line: int, default_source: str) -> CaptionedSample:
    if not isinstance(data, dict):
        raise DatasetParseError("record must be a JSON object", line=line)
    missing = [key for key in ("series", "caption", "level") if key not in data]
    if missing:
        raise DatasetParseError(f"missing fields {missing}", line=line)
    data = {"source_id": default_source, **data}
    try:
        return CaptionedSample(**data)
    except ValidationError as exc:
        raise DatasetParseError(str(exc.errors()[0]["msg"]), line=line) from exc


def _check_single_level(samples: list[CaptionedSample], lines: list[int]) -> None:
    first = samples[0].level
    for sample, line in zip(samples, lines, strict=True):
        if sample.level != first:
            raise DatasetParseError(f"level '{sample.level}' differs from dataset level '{first}'", line=line)


def _load_jsonl(path: Path) -> tuple[list[CaptionedSample], list[int]]:
    samples, lines = [], []
    with path.open(encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                data = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(f"invalid JSON ({exc.msg})", line=line_no) from exc
            samples.append(_validate_record(data, line_no, f"{path.stem}-{line_no}"))
            lines.append(line_no)
    return samples, lines


def _parse_csv_series(value: object, line: int) -> list[float]:
    text = str(value).strip()
    try:
        if text.startswith("["):
            return [float(v) for v in json.loads(text)]
        return [float(v) for v in text.split(";") if v.strip()]
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        raise DatasetParseError(f"series column is not a list of numbers ({exc})", line=line) from exc


def _load_csv(path: Path) -> tuple[list[CaptionedSample], list[int]]:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        return [], []
    if "series" not in frame.columns or "caption" not in frame.columns:
        raise DatasetParseError("CSV must have 'series' and 'caption' columns", line=1)

    samples, lines = [], []
    for row_no, row in enumerate(frame.to_dict(orient="records")):
        line_no = row_no + 2  # header is line 1
        record = {key: row[key] for key in RECORD_FIELDS if key in row and row[key] != ""}
        if "series" in record:
            record["series"] = _parse_csv_series(record["series"], line_no)
        samples.append(_validate_record(record, line_no, f"{path.stem}-{line_no}"))
        lines.append(line_no)
    return samples, lines


def load_dataset(path: str | Path, fmt: Literal["jsonl", "csv"] | None = None) -> Dataset:
    """Load a dataset file, preserving record order."""
    path = Path(path)
    if not path.is_file():
        raise ArgumentError(f"Dataset file not found: {path}")
    fmt = fmt or ("csv" if path.suffix.lower() == ".csv" else "jsonl")

    samples, lines = _load_csv(path) if fmt == "csv" else _load_jsonl(path)
    if not samples:
        raise EmptyDatasetError(f"Dataset file {path} contains no records")
    _check_single_level(samples, lines)

    logger.info(f"Loaded {len(samples)} samples from {path} (level={samples[0].level})")
    return Dataset(name=path.stem, samples=tuple(samples))


def write_dataset(samples: Sequence[CaptionedSample], path: str | Path) -> Path:
    """Write one compact JSON object per line; the output is byte-stable for equal input."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(json.dumps(sample.model_dump(mode="json"), separators=(",", ":")) + "\n")
    return path


def normalize(series: Sequence[float] | np.ndarray, scheme: str = "minmax") -> tuple[np.ndarray, NormalizationParams]:
    x = np.asarray(series, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ArgumentError("Cannot normalize a series with non-finite values")
    if scheme == "minmax":
        lo = float(x.min())
        params = NormalizationParams(scheme="minmax", offset=lo, scale=float(x.max()) - lo)
    elif scheme == "zscore":
        params = NormalizationParams(scheme="zscore", offset=float(x.mean()), scale=float(x.std()))
    else:
        raise ArgumentError(f"Unknown normalization scheme: {scheme}")

    if params.scale == 0.0:
        return np.zeros_like(x), params
    return (x - params.offset) / params.scale, params


def denormalize(series: Sequence[float] | np.ndarray, params: NormalizationParams) -> np.ndarray:
    return np.asarray(series, dtype=np.float64) * params.scale + params.offset


def segment_series(series: Sequence[float] | np.ndarray, boundaries: Sequence[int]) -> list[np.ndarray]:
    """Cut a series at the given indices into len(boundaries) + 1 contiguous fragments."""
    x = np.asarray(series)
    bounds = list(boundaries)
    for i, b in enumerate(bounds):
        if int(b) != b or not 0 < b < len(x):
            raise ArgumentError(f"Boundary {b} is outside (0, {len(x)})")
        if i and b <= bounds[i - 1]:
            raise ArgumentError(f"Boundaries must be strictly increasing, got {bounds}")
    return np.split(x, [int(b) for b in bounds])


def concat_point_texts(point_texts: Sequence[str]) -> str:
    """Join per-point texts in temporal order, collapsing consecutive repeats."""
    parts: list[str] = []
    prev, run = None, 0
    for text in [*point_texts, None]:
        if text == prev:
            run += 1
            continue
        if prev is not None:
            parts.append(prev if run == 1 else f"{prev} ({run} points)")
        prev, run = text, 1
    return "; ".join(parts)


def locate_index(sizes: Sequence[int], j: int) -> tuple[int, int]:
    """Map a 1-based index over the concatenated datasets to (dataset, sample) 0-based positions."""
    total = sum(sizes)
    if not 1 <= j <= total:
        raise ArgumentError(f"Index {j} outside [1, {total}]")
    bounds = np.cumsum(sizes)
    m = int(np.searchsorted(bounds, j, side="left"))
    before = int(bounds[m - 1]) if m else 0
    return m, j - before - 1


def dataset_sampling(datasets: Sequence[Dataset], rng: np.random.Generator, j: int | None = None) -> CaptionedSample:
    """Draw one sample uniformly over the concatenated index space of all datasets."""
    if not datasets:
        raise ArgumentError("dataset_sampling needs at least one dataset")
    sizes = [len(d) for d in datasets]
    if j is None:
        j = int(rng.integers(1, sum(sizes) + 1))
    m, k = locate_index(sizes, j)
    return datasets[m][k]


def make_mixed_batch(
    datasets: Sequence[Dataset], batch_size: int, rng: np.random.Generator
) -> dict[int, list[CaptionedSample]]:
    """Draw batch_size samples and group them by series length (sorted by length)."""
    if batch_size < 1:
        raise ArgumentError(f"batch_size must be >= 1, got {batch_size}")
    groups: dict[int, list[CaptionedSample]] = {}
    for _ in range(batch_size):
        sample = dataset_sampling(datasets, rng)
        groups.setdefault(sample.length, []).append(sample)
    return dict(sorted(groups.items()))


def subsample_dataset(dataset: Dataset, ratio: float, seed: int = 0) -> Dataset:
    """Deterministic subset of ceil(ratio * n) samples for data-scarcity runs."""
    if not 0 < ratio <= 1:
        raise ArgumentError(f"ratio must be in (0, 1], got {ratio}")
    keep = max(1, math.ceil(ratio * len(dataset)))
    order = np.random.default_rng(seed).permutation(len(dataset))[:keep]
    return Dataset(name=f"{dataset.name}@{ratio:g}", samples=tuple(dataset[int(i)] for i in sorted(order)))


class MixedLengthSampler:
    """Sampler over a list of datasets with its own RNG; not meant to be shared between workers."""

    def __init__(self, datasets: Sequence[Dataset], seed: int = 0):
        if not datasets:
            raise ArgumentError("MixedLengthSampler needs at least one dataset")
        self.datasets = list(datasets)
        self._rng = np.random.default_rng(seed)

    def draw(self) -> CaptionedSample:
        return dataset_sampling(self.datasets, self._rng)

    def batch(self, batch_size: int) -> dict[int, list[CaptionedSample]]:
        return make_mixed_batch(self.datasets, batch_size, self._rng)

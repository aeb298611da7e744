from collections.abc import Sequence

import numpy as np

from t2s.errors import ArgumentError, UndefinedMetricError

DEFAULT_THRESHOLD = 0.9
MRR_CUTOFF = 10


def _paired(truths: Sequence, generated: Sequence) -> tuple[list[np.ndarray], list[np.ndarray]]:
    if len(truths) != len(generated):
        raise ArgumentError(f"Got {len(truths)} truths but {len(generated)} generated series")
    if not truths:
        raise ArgumentError("Metrics need at least one pair")
    ys = [np.asarray(y, dtype=np.float64) for y in truths]
    hats = [np.asarray(g, dtype=np.float64) for g in generated]
    for i, (y, g) in enumerate(zip(ys, hats, strict=True)):
        if y.shape != g.shape:
            raise ArgumentError(f"Pair {i}: truth shape {y.shape} != generated shape {g.shape}")
    return ys, hats


def wape(truths: Sequence, generated: Sequence) -> float:
    """Σ|y − ŷ| / Σ|y| over every point of every pair."""
    ys, hats = _paired(truths, generated)
    denominator = sum(float(np.abs(y).sum()) for y in ys)
    if denominator == 0.0:
        raise UndefinedMetricError("WAPE is undefined when every truth value is zero")
    numerator = sum(float(np.abs(y - g).sum()) for y, g in zip(ys, hats, strict=True))
    return numerator / denominator


def mse(truths: Sequence, generated: Sequence) -> float:
    ys, hats = _paired(truths, generated)
    total = sum(float(np.square(y - g).sum()) for y, g in zip(ys, hats, strict=True))
    count = sum(y.size for y in ys)
    return total / count


def cosine_similarity(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> float | None:
    """Cosine of two vectors, or None when either has zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return None
    return float(np.dot(a, b) / (na * nb))


def first_relevant_rank(candidates: Sequence, truth: Sequence[float], threshold: float = DEFAULT_THRESHOLD) -> int | None:
    """1-based rank of the first candidate whose cosine to the truth exceeds the threshold."""
    truth = np.asarray(truth, dtype=np.float64)
    for n, candidate in enumerate(candidates, start=1):
        candidate = np.asarray(candidate, dtype=np.float64)
        if candidate.shape != truth.shape:
            raise ArgumentError(f"Candidate {n} has shape {candidate.shape}, truth has {truth.shape}")
        cos = cosine_similarity(candidate, truth)
        if cos is not None and cos > threshold:
            return n
    return None


def mrr_at_10(
    candidate_lists: Sequence[Sequence],
    truths: Sequence,
    threshold: float = DEFAULT_THRESHOLD,
    k: int = MRR_CUTOFF,
) -> float:
    """Mean reciprocal rank of the first relevant candidate; a truth with none contributes 0."""
    if len(candidate_lists) != len(truths):
        raise ArgumentError(f"Got {len(candidate_lists)} candidate lists for {len(truths)} truths")
    if not truths:
        raise ArgumentError("MRR needs at least one truth")

    total = 0.0
    for i, (candidates, truth) in enumerate(zip(candidate_lists, truths, strict=True)):
        if len(candidates) != k:
            raise ArgumentError(f"Truth {i} has {len(candidates)} candidates, expected exactly {k}")
        rank = first_relevant_rank(candidates, truth, threshold)
        if rank is not None:
            total += 1.0 / rank
    return total / len(truths)

import logging
from pathlib import Path

import numpy as np

from t2s.schemas import CaptionedSample, CaptionLevel, SynthConfig
from t2s.services.dataset_service import concat_point_texts, write_dataset

logger = logging.getLogger(__name__)

FAMILIES = ("ramp_up", "ramp_down", "sinusoid", "step_up", "step_down", "flat")
LEVEL_ORDER = (CaptionLevel.POINT, CaptionLevel.FRAGMENT, CaptionLevel.INSTANCE)

INSTANCE_CAPTIONS = {
    "ramp_up": ("increasing", "steadily increasing", "increasing trend"),
    "ramp_down": ("decreasing", "steadily decreasing", "decreasing trend"),
    "sinusoid": ("oscillating", "periodic oscillation", "oscillating around a constant level"),
    "step_up": ("flat then step up", "sudden upward step", "level shift upward"),
    "step_down": ("flat then step down", "sudden downward step", "level shift downward"),
    "flat": ("flat", "flat and stable", "constant level"),
}


def _pattern(family: str, length: int, rng: np.random.Generator) -> tuple[np.ndarray, dict]:
    t = np.linspace(0.0, 1.0, length)
    base = rng.uniform(-1.0, 1.0)
    if family in ("ramp_up", "ramp_down"):
        rise = rng.uniform(0.5, 2.0) * (1 if family == "ramp_up" else -1)
        return base + rise * t, {"rise": rise}
    if family == "sinusoid":
        cycles = int(rng.integers(1, 4))
        amplitude = rng.uniform(0.3, 1.0)
        phase = rng.uniform(0, 2 * np.pi)
        return base + amplitude * np.sin(2 * np.pi * cycles * t + phase), {"cycles": cycles}
    if family in ("step_up", "step_down"):
        at = int(rng.integers(length // 4, 3 * length // 4))
        jump = rng.uniform(0.5, 2.0) * (1 if family == "step_up" else -1)
        x = np.full(length, base)
        x[at:] += jump
        return x, {"at": at}
    return np.full(length, base), {}


def _point_texts(family: str, x: np.ndarray, info: dict) -> list[str]:
    if family == "ramp_up":
        return ["up"] * len(x)
    if family == "ramp_down":
        return ["down"] * len(x)
    if family in ("step_up", "step_down"):
        at = info["at"]
        jump = "jump up" if family == "step_up" else "jump down"
        return ["flat"] * at + [jump] + ["flat"] * (len(x) - at - 1)
    if family == "sinusoid":
        diffs = np.diff(x, prepend=x[0] - (x[1] - x[0]))
        return ["rising" if d > 0 else "falling" for d in diffs]
    return ["flat"] * len(x)


def _fragment_caption(family: str, x: np.ndarray, info: dict) -> str:
    if family in ("ramp_up", "ramp_down"):
        word = "increasing" if family == "ramp_up" else "decreasing"
        pace = "sharply" if abs(info["rise"]) > 1.25 else "gently"
        return f"{word} {pace} from {x[0]:.1f} to {x[-1]:.1f}"
    if family == "sinusoid":
        return f"oscillating with {info['cycles']} cycle{'s' if info['cycles'] > 1 else ''}"
    if family in ("step_up", "step_down"):
        direction = "up" if family == "step_up" else "down"
        return f"flat then step {direction} near point {info['at']}"
    return f"flat around {x[0]:.1f}"


def synth_samples(
    level: CaptionLevel, length: int, count: int, rng: np.random.Generator, noise: float = 0.02
) -> list[CaptionedSample]:
    """`count` series cycling through the pattern families, captioned at the given level."""
    samples = []
    for i in range(count):
        family = FAMILIES[i % len(FAMILIES)]
        clean, info = _pattern(family, length, rng)
        x = clean + noise * rng.standard_normal(length)
        if level == CaptionLevel.INSTANCE:
            options = INSTANCE_CAPTIONS[family]
            caption = options[int(rng.integers(len(options)))]
        elif level == CaptionLevel.FRAGMENT:
            caption = _fragment_caption(family, clean, info)
        else:
            caption = concat_point_texts(_point_texts(family, clean, info))
        samples.append(
            CaptionedSample(
                series=[round(float(v), 6) for v in x],
                caption=caption,
                level=level,
                domain="synthetic",
                source_id=f"synth-{level}-{length}-{i}",
            )
        )
    return samples


def make_synth(config: SynthConfig, levels: tuple[CaptionLevel, ...] = LEVEL_ORDER) -> dict[str, Path]:
    """Write `synth_<level>_<length>.jsonl` for every level and length; returns name -> path."""
    out_dir = Path(config.output_dir)
    written = {}
    for level in levels:
        for length in config.lengths:
            rng = np.random.default_rng([config.seed, LEVEL_ORDER.index(level), length])
            samples = synth_samples(level, length, config.samples_per_length, rng, config.noise)
            name = f"synth_{level}_{length}"
            written[name] = write_dataset(samples, out_dir / f"{name}.jsonl")
    logger.info(
        f"Wrote {len(written)} synthetic files ({config.samples_per_length} samples each) to {out_dir}"
    )
    return written

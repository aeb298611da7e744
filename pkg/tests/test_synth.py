import numpy as np
import pytest

from t2s.schemas import CaptionLevel, SynthConfig
from t2s.services.dataset_service import load_dataset
from t2s.services.synth_service import FAMILIES, make_synth, synth_samples


def test_synth_is_deterministic(tmp_path):
    config = SynthConfig(samples_per_length=12, lengths=[24, 48], output_dir=tmp_path / "a")
    first = make_synth(config)
    second = make_synth(config.model_copy(update={"output_dir": tmp_path / "b"}))
    assert first.keys() == second.keys()
    for name in first:
        assert first[name].read_bytes() == second[name].read_bytes()


def test_default_corpus_size(tmp_path):
    written = make_synth(SynthConfig(output_dir=tmp_path), levels=(CaptionLevel.INSTANCE,))
    datasets = [load_dataset(path) for path in written.values()]
    assert sum(len(ds) for ds in datasets) == 900
    assert sorted(ds.samples[0].length for ds in datasets) == [24, 48, 96]


def test_families_cycle():
    samples = synth_samples(CaptionLevel.FRAGMENT, 24, 2 * len(FAMILIES), np.random.default_rng(0))
    assert samples[0].caption.startswith("increasing")
    assert samples[1].caption.startswith("decreasing")
    assert samples[len(FAMILIES)].caption.startswith("increasing")


@pytest.mark.parametrize(("word", "sign"), [("increasing", 1), ("decreasing", -1)])
def test_trend_captions_match_slope(word, sign):
    samples = synth_samples(CaptionLevel.INSTANCE, 48, 120, np.random.default_rng(1))
    trend = [s for s in samples if s.caption.startswith(word) or s.caption == f"steadily {word}"]
    assert trend
    for sample in trend:
        slope = np.polyfit(np.arange(sample.length), sample.series, 1)[0]
        assert np.sign(slope) == sign


def test_point_captions_collapse_repeats():
    sample = synth_samples(CaptionLevel.POINT, 24, 1, np.random.default_rng(2))[0]
    assert sample.caption.split().count("up") <= 2
    assert sample.level == CaptionLevel.POINT

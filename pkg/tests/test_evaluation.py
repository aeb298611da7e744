import numpy as np
import pytest

from t2s.errors import ArgumentError, NumericalDivergenceError, UndefinedMetricError
from t2s.schemas import SamplerConfig
from t2s.services.dataset_service import Dataset, normalize
from t2s.services.evaluation_service import candidate_seeds, data_scarcity, evaluate, sweep


class OracleGenerator:
    """Returns the normalized truth for every seed."""

    def __init__(self, dataset: Dataset):
        self.truths = {s.caption: normalize(s.series)[0] for s in dataset.samples}
        self.calls: list[list[int]] = []

    def generate_many(self, caption, length, sampler, seeds):
        self.calls.append(list(seeds))
        return np.tile(self.truths[caption], (len(seeds), 1))


class ZeroGenerator:
    def generate_many(self, caption, length, sampler, seeds):
        return np.zeros((len(seeds), length))


class FlakyGenerator(OracleGenerator):
    def generate_many(self, caption, length, sampler, seeds):
        if "fail" in caption:
            raise NumericalDivergenceError("diverged", step=3)
        return super().generate_many(caption, length, sampler, seeds)


@pytest.fixture
def dataset(sample_factory):
    rng = np.random.default_rng(0)
    samples = [
        sample_factory(np.cumsum(rng.normal(size=length)) + 5, caption=f"walk {i} at {length}", source_id=f"w{i}")
        for i, length in enumerate([24, 24, 48, 48, 48])
    ]
    return Dataset("walks", tuple(samples))


def test_oracle_generator_scores_perfectly(dataset):
    report = evaluate(OracleGenerator(dataset), dataset, SamplerConfig())

    assert [row.length for row in report.rows] == [24, 48]
    for row in report.rows:
        assert (row.wape, row.mse, row.mrr_at_10) == (0.0, 0.0, 1.0)
    assert report.row(48).samples == 3
    assert report.failures == 0


def test_zero_generator_has_unit_wape(dataset):
    report = evaluate(ZeroGenerator(), dataset, SamplerConfig())
    for row in report.rows:
        assert row.wape == pytest.approx(1.0)
        assert row.mrr_at_10 == 0.0


def test_settings_are_recorded(dataset):
    sampler = SamplerConfig(cfg_scale=4.0, steps=12, seed=3)
    report = evaluate(ZeroGenerator(), dataset, sampler, threshold=0.8, normalization="zscore")
    settings = report.settings
    assert (settings.cfg_scale, settings.steps, settings.seed) == (4.0, 12, 3)
    assert (settings.threshold, settings.normalization, settings.candidates_per_caption) == (0.8, "zscore", 10)


def test_candidate_seeds_are_offset_by_sample_index(dataset):
    generator = OracleGenerator(dataset)
    evaluate(generator, dataset, SamplerConfig(seed=100))
    assert generator.calls[0] == list(range(100, 110))
    assert generator.calls[2] == candidate_seeds(100, 2, 10) == list(range(120, 130))


def test_failures_are_counted_and_excluded(sample_factory, dataset):
    failing = sample_factory(np.linspace(0, 1, 24), caption="fail here", source_id="bad")
    mixed = Dataset("mixed", (*dataset.samples, failing))

    report = evaluate(FlakyGenerator(dataset), mixed, SamplerConfig())

    assert report.failures == 1
    assert report.row(24).failures == 1
    assert report.row(24).samples == 2
    assert report.row(24).mrr_at_10 == 1.0


def test_flat_truths_leave_wape_undefined(sample_factory):
    flat = Dataset("flat", (sample_factory([2.0] * 24, caption="flat"),))
    report = evaluate(ZeroGenerator(), flat, SamplerConfig())
    assert report.rows[0].wape is None
    assert report.rows[0].mse == 0.0


def test_evaluate_is_deterministic(dataset):
    first = evaluate(OracleGenerator(dataset), dataset, SamplerConfig(seed=1))
    second = evaluate(OracleGenerator(dataset), dataset, SamplerConfig(seed=1))
    assert first.model_dump() == second.model_dump()


def test_sweep_covers_the_cross_product(dataset, tmp_path):
    result = sweep(ZeroGenerator(), dataset, [0.0, 7.5], [10, 30])

    assert [(c.cfg_scale, c.steps) for c in result.cells] == [(0.0, 10), (0.0, 30), (7.5, 10), (7.5, 30)]
    frame = result.to_frame()
    assert len(frame) == 4 * 2
    assert {"cfg_scale", "steps", "wape", "mse", "mrr_at_10", "threshold"} <= set(frame.columns)
    assert result.matrix("wape").shape == (2, 2)

    assert result.write_csv(tmp_path / "sweep.csv").is_file()
    assert result.plot_heatmap(tmp_path / "heatmap.png").stat().st_size > 0


def test_single_cell_sweep_matches_evaluate(dataset):
    sampler = SamplerConfig(cfg_scale=3.0, steps=5, seed=2)
    cell = sweep(OracleGenerator(dataset), dataset, [3.0], [5], sampler).cells[0]
    assert cell.report.model_dump() == evaluate(OracleGenerator(dataset), dataset, sampler).model_dump()


def test_sweep_rejects_empty_grid(dataset):
    with pytest.raises(ArgumentError):
        sweep(ZeroGenerator(), dataset, [], [10])


def test_data_scarcity_trains_on_each_subset(dataset):
    seen = []

    def train(subset):
        seen.append(len(subset))
        return OracleGenerator(dataset)

    reports = data_scarcity(train, dataset, dataset, [0.4, 1.0], SamplerConfig())
    assert seen == [2, 5]
    assert set(reports) == {0.4, 1.0}
    assert all(row.mrr_at_10 == 1.0 for row in reports[1.0].rows)


class BrokenGenerator:
    def generate_many(self, caption, length, sampler, seeds):
        raise NumericalDivergenceError("diverged", step=1)


def test_mrr_needs_ten_candidates(dataset):
    report = evaluate(OracleGenerator(dataset), dataset, SamplerConfig(), candidates_per_caption=3)

    assert report.settings.candidates_per_caption == 3
    for row in report.rows:
        assert row.mrr_at_10 is None
        assert (row.wape, row.mse) == (0.0, 0.0)


def test_sweep_without_mrr_still_has_error_matrices(dataset):
    result = sweep(OracleGenerator(dataset), dataset, [1.0, 4.0], [2], candidates_per_caption=1)

    assert result.to_frame()["mrr_at_10"].isna().all()
    assert result.matrix("mse").shape == (2, 1)
    with pytest.raises(UndefinedMetricError, match="mrr_at_10"):
        result.matrix()


def test_sweep_where_every_cell_fails(dataset, tmp_path):
    result = sweep(BrokenGenerator(), dataset, [1.0, 4.0], [2, 3])

    assert all(cell.report.failures == len(dataset) for cell in result.cells)
    assert result.to_frame().empty
    with pytest.raises(UndefinedMetricError, match="No sweep cell"):
        result.matrix("wape")
    with pytest.raises(UndefinedMetricError):
        result.plot_heatmap(tmp_path / "heatmap.png")
    assert not (tmp_path / "heatmap.png").exists()

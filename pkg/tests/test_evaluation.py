from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from csnet.aeml import average_params, select_top_t
from csnet.config import RunConfig, load_data, load_run_config
from csnet.episodes import SynthFamilyConfig, synth_family
from csnet.errors import SamplingError, StatisticsError
from csnet.evaluation import (
    SCHEMA,
    AblationGrid,
    EvalReport,
    ci95,
    evaluate,
    nearest_neighbor_baseline,
    run_ablation,
)
from csnet.trainer import train, with_overrides

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


class TestConfidenceInterval:
    def test_constant_values(self):
        assert ci95([0.6] * 50) == 0.0

    def test_alternating_values(self):
        assert ci95([0.0, 1.0] * 1000) == pytest.approx(0.0219, abs=1e-4)

    def test_scales_linearly(self, rng):
        accs = rng.uniform(size=40)
        assert ci95(accs * 0.5) == pytest.approx(0.5 * ci95(accs), rel=1e-12)

    def test_matches_formula(self, rng):
        accs = rng.uniform(size=123)
        std = np.sqrt(np.sum((accs - accs.mean()) ** 2) / (len(accs) - 1))
        assert ci95(accs) == pytest.approx(1.96 * std / np.sqrt(len(accs)), abs=1e-12)

    @pytest.mark.parametrize("values", [[], [0.5]])
    def test_too_few(self, values):
        with pytest.raises(StatisticsError):
            ci95(values)


def random_predictor(episode):
    seed = abs(hash(episode.query_ids[0])) + int(1e6 * abs(episode.query_x.sum()))
    rng = np.random.default_rng(seed % 2**32)
    return rng.uniform(size=(len(episode.query_y), episode.way))


class TestEvaluate:
    def test_perfect_predictor(self, tiny_dataset):
        report = evaluate(
            lambda ep: np.eye(ep.way)[ep.query_y], tiny_dataset, "test", 5, 1, 5, 30, 1
        )
        assert report.mean == 1.0
        assert report.ci95 == 0.0
        assert report.episodes == 30

    def test_random_predictor_near_chance(self, tiny_dataset):
        report = evaluate(random_predictor, tiny_dataset, "test", 5, 1, 10, 2000, 2)
        assert 0.18 <= report.mean <= 0.22

    def test_same_seed_same_report(self, tiny_model, tiny_dataset):
        a = evaluate(tiny_model, tiny_dataset, "test", 5, 1, 5, 25, 9, workers=4)
        b = evaluate(tiny_model, tiny_dataset, "test", 5, 1, 5, 25, 9, workers=1)
        assert a == b
        assert not a.bypass_support

    def test_sampling_failure_names_episode(self, tiny_model, tiny_dataset):
        with pytest.raises(SamplingError, match="evaluation episode 0"):
            evaluate(tiny_model, tiny_dataset, "test", 7, 1, 5, 10, 0)

    def test_nearest_neighbor_on_separated_family(self):
        ds = synth_family(SynthFamilyConfig(dim=4, center_scale=10.0, within_scale=0.01))
        report = nearest_neighbor_baseline(ds, "test", 5, 1, 5, 50, 0)
        assert report.mean == pytest.approx(1.0)
        assert report.provenance == "raw-1nn"
        assert report.bypass_support


class TestEvalReport:
    def test_json_round_trip(self, tiny_model, tiny_dataset):
        report = evaluate(tiny_model, tiny_dataset, "val", 5, 1, 5, 12, 4,
                          provenance="ckpt_0000000", resolved_config={"name": "tiny"})
        loaded = EvalReport.from_json(report.to_json())
        assert loaded == report
        assert loaded.schema == SCHEMA

    def test_episode_count_must_match(self):
        data = EvalReport([0.5, 0.7], 5, 1, 5, 0).to_dict()
        data["episodes"] = 3
        with pytest.raises(StatisticsError):
            EvalReport.from_dict(data)

    def test_unknown_schema(self):
        data = EvalReport([0.5, 0.7], 5, 1, 5, 0).to_dict()
        data["schema"] = "other/2"
        with pytest.raises(StatisticsError):
            EvalReport.from_dict(data)

    def test_raw_frame(self):
        frame = EvalReport([0.5, 0.7, 0.9], 5, 1, 5, 0).to_frame()
        assert list(frame.columns) == ["episode_idx", "accuracy"]
        assert frame["episode_idx"].tolist() == [0, 1, 2]

    def test_single_episode_has_no_interval(self):
        with pytest.raises(StatisticsError):
            EvalReport([1.0], 5, 1, 5, 0)


class TestAblation:
    @pytest.fixture
    def grid_and_config(self, tiny_run_dict):
        config = RunConfig.from_dict(tiny_run_dict).validate()
        return run_ablation(config), config

    def test_grid_shape(self, grid_and_config):
        grid, config = grid_and_config
        assert isinstance(grid, AblationGrid)
        assert len(grid.cells) == 4 * len(config.ablation.shots)
        assert grid.resolved_config == config.to_dict()
        deltas = grid.deltas()
        assert deltas["shot"].tolist() == [1, 2]
        assert list(deltas.columns) == [
            "shot", "support_gain", "support_gain_aeml", "aeml_gain", "aeml_gain_no_support",
        ]

    def test_cells_are_paired(self, grid_and_config):
        grid, _ = grid_and_config
        cells = [grid.cell(1, se, ae).report for se in (True, False) for ae in (True, False)]
        assert len({(r.seed, r.episodes, r.shot) for r in cells}) == 1
        gain = grid.cell(1, True, False).report.mean - grid.cell(1, False, False).report.mean
        assert grid.deltas().loc[0, "support_gain"] == pytest.approx(gain)

    def test_one_shot_without_support_is_matching_network(self, grid_and_config):
        grid, config = grid_and_config
        train_cfg = replace(config.train, shot=1, bypass_support=True)
        log, store = train(train_cfg, load_data(config.data))
        best = store.get(store.best()).model
        settings = config.eval
        matching = evaluate(best, load_data(config.data), settings.split, settings.way, 1,
                            settings.queries, settings.episodes, settings.seed, head="matching")
        assert matching.accuracies == grid.cell(1, False, False).report.accuracies

    def test_frame(self, grid_and_config):
        grid, _ = grid_and_config
        frame = grid.to_frame()
        assert {"shot", "class_support", "aeml", "mean", "ci95"} <= set(frame.columns)
        assert len(frame) == 8

    def test_unknown_cell(self, grid_and_config):
        grid, _ = grid_and_config
        with pytest.raises(KeyError):
            grid.cell(5, True, True)


@pytest.mark.slow
class TestDeskScale:
    def test_trained_model_beats_chance_and_raw_neighbors(self):
        config = load_run_config(CONFIGS / "synth_5way_1shot.json")
        dataset = load_data(config.data)
        log, store = train(config.train, dataset)
        model = store.get(store.best()).model
        s = config.eval
        report = evaluate(model, dataset, s.split, s.way, s.shot, s.queries, s.episodes, s.seed)
        baseline = nearest_neighbor_baseline(
            dataset, s.split, s.way, s.shot, s.queries, s.episodes, s.seed
        )
        assert report.mean >= 0.50
        assert report.mean > baseline.mean

    def test_support_gain_shrinks_with_shots(self):
        config = load_run_config(CONFIGS / "synth_ablation.json")
        gains = {1: [], 5: []}
        for seed in range(3):
            run = replace(
                config,
                train=with_overrides(config.train, seed=seed),
                ablation=replace(config.ablation, shots=(1, 5)),
            )
            deltas = run_ablation(run).deltas().set_index("shot")
            for shot in gains:
                gains[shot].append(deltas.loc[shot, "support_gain"])
        assert np.mean(gains[1]) >= np.mean(gains[5])

    def test_averaged_model_keeps_accuracy(self):
        config = load_run_config(CONFIGS / "synth_5way_1shot.json")
        dataset = load_data(config.data)
        log, store = train(config.train, dataset)
        s = config.eval
        single = evaluate(store.get(store.best()).model, dataset, s.split, s.way, s.shot,
                          s.queries, s.episodes, s.seed)
        averaged = evaluate(average_params(select_top_t(log, store, 5), store), dataset,
                            s.split, s.way, s.shot, s.queries, s.episodes, s.seed)
        assert averaged.mean >= single.mean - 0.01

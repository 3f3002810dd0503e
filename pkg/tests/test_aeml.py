import json

import numpy as np
import pytest

from csnet.aeml import (
    COMPARISON_FIELDS,
    ComparisonReport,
    average_models,
    average_params,
    average_tensors,
    compare_aeml_ensemble,
    ensemble_outputs,
    ensemble_predict,
    select_top_t,
    write_averaged_checkpoint,
)
from csnet.config import EvalSettings
from csnet.episodes import sample_episode
from csnet.errors import ContractError, SelectionError
from csnet.model import as_predictor, build_model
from csnet.trainer import AdamState, Checkpoint, CheckpointStore, checkpoint_id, recalibrate_bn, train


def store_with(models, accuracies):
    store = CheckpointStore()
    for i, (model, acc) in enumerate(zip(models, accuracies)):
        store.add(Checkpoint(checkpoint_id(10 * i), model, AdamState({}, {}), 10 * i, acc))
    return store


@pytest.fixture
def four_models(mlp_arch):
    return [build_model(mlp_arch, 1, 4, seed=s) for s in range(4)]


class TestSelection:
    def test_ties_prefer_later_checkpoint(self, four_models):
        store = store_with(four_models, [0.5, 0.7, 0.6, 0.7])
        selection = select_top_t(None, store, t=2)
        assert selection.ids == ["ckpt_0000030", "ckpt_0000010"]
        assert selection.accuracies == [0.7, 0.7]

    def test_single_is_best(self, four_models):
        store = store_with(four_models, [0.5, 0.7, 0.6, 0.7])
        assert select_top_t(None, store, t=1).ids == [store.best()]

    def test_more_than_available(self, four_models):
        store = store_with(four_models, [0.5, 0.7, 0.6, 0.7])
        with pytest.raises(SelectionError, match="found 4"):
            select_top_t(None, store, t=5)

    def test_unvalidated_checkpoints_are_ignored(self, four_models):
        store = store_with(four_models, [0.5, None, 0.6, None])
        assert select_top_t(None, store, t=2).ids == ["ckpt_0000020", "ckpt_0000000"]

    def test_nonpositive_t(self, four_models):
        with pytest.raises(SelectionError):
            select_top_t(None, store_with(four_models, [0.5] * 4), t=0)


class TestAveraging:
    def test_single_member_is_exact_copy(self, four_models):
        store = store_with(four_models, [0.9, 0.1, 0.1, 0.1])
        averaged = average_params(select_top_t(None, store, 1), store)
        for name, value in four_models[0].trainable().items():
            assert np.array_equal(averaged.trainable()[name], value)
            assert averaged.trainable()[name] is not value

    def test_opposites_cancel(self, rng):
        p = {"w": rng.normal(size=(3, 3))}
        out = average_tensors([p, {"w": -p["w"]}])
        np.testing.assert_array_equal(out["w"], np.zeros((3, 3)))

    def test_small_example(self):
        out = average_tensors([{"x": np.array(1.0)}, {"x": np.array(2.0)}, {"x": np.array(6.0)}])
        assert out["x"] == 3.0

    def test_identical_members(self, rng):
        p = {"w": rng.normal(size=5)}
        np.testing.assert_allclose(average_tensors([p, p, p])["w"], p["w"], rtol=1e-15)

    def test_selection_order_does_not_matter(self, four_models):
        store = store_with(four_models, [0.5, 0.7, 0.6, 0.4])
        selection = select_top_t(None, store, 3)
        reordered = type(selection)(3, list(reversed(selection.ids)), [0.6, 0.6, 0.6])
        a = average_params(selection, store).trainable()
        b = average_params(reordered, store).trainable()
        for name in a:
            assert np.array_equal(a[name], b[name])

    def test_batch_norm_stats_are_averaged(self, four_models, tiny_dataset):
        models = [recalibrate_bn(m, tiny_dataset, episodes=2, seed=i, K=1, Q=2)
                  for i, m in enumerate(four_models[:2])]
        averaged = average_models(models)
        key = "support/bn1"
        expected = (models[0].bn_stats()[key].mean + models[1].bn_stats()[key].mean) / 2
        np.testing.assert_allclose(averaged.bn_stats()[key].mean, expected)

    def test_architecture_mismatch(self, mlp_arch):
        one_shot = build_model(mlp_arch, 1, 4)
        two_shot = build_model(mlp_arch, 2, 4)
        with pytest.raises(ContractError, match="architecture"):
            average_models([one_shot, two_shot])

    def test_key_mismatch(self):
        with pytest.raises(ContractError):
            average_tensors([{"a": np.zeros(2)}, {"b": np.zeros(2)}])

    def test_averaged_checkpoint_is_stored(self, four_models):
        store = store_with(four_models, [0.5, 0.7, 0.6, 0.4])
        ckpt = write_averaged_checkpoint(select_top_t(None, store, 2), store)
        assert ckpt.id == "aeml_t2"
        assert ckpt.val_acc is None
        assert ckpt.episode == 20
        assert "aeml_t2" in store
        assert select_top_t(None, store, 4).ids == [
            "ckpt_0000010", "ckpt_0000020", "ckpt_0000000", "ckpt_0000030"
        ]


class TestEnsemble:
    def test_probability_average(self):
        out = ensemble_outputs([np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])])
        np.testing.assert_array_equal(out, [[0.5, 0.5]])

    def test_majority_vote(self):
        a = np.array([[0.6, 0.4]])
        b = np.array([[0.0, 1.0]])
        out = ensemble_outputs([a, a, b], mode="majority_vote")
        np.testing.assert_array_equal(out, [[1.0, 0.0]])

    def test_vote_tie_goes_to_higher_average(self):
        a = np.array([[0.55, 0.45, 0.0]])
        b = np.array([[0.0, 0.9, 0.1]])
        out = ensemble_outputs([a, b], mode="majority_vote")
        np.testing.assert_array_equal(out, [[0.0, 1.0, 0.0]])

    def test_unknown_mode(self):
        with pytest.raises(ContractError):
            ensemble_outputs([np.ones((1, 2))], mode="median")

    @pytest.mark.parametrize("t", [2, 3, 5])
    def test_averaging_linear_heads_matches_ensemble(self, rng, t):
        features = rng.normal(size=(7, 6))
        heads = [{"w": rng.normal(size=(6, 4))} for _ in range(t)]
        ensembled = ensemble_outputs([features @ h["w"] for h in heads])
        averaged = features @ average_tensors(heads)["w"]
        np.testing.assert_allclose(ensembled, averaged, atol=1e-10)

    def test_single_member_matches_model(self, four_models, tiny_dataset):
        store = store_with(four_models, [0.9, 0.1, 0.1, 0.1])
        episode = sample_episode(tiny_dataset, "test", 5, 1, 3, 0)
        out = ensemble_predict(select_top_t(None, store, 1), store, episode)
        np.testing.assert_allclose(out, as_predictor(four_models[0])(episode), atol=1e-7)


class TestComparison:
    def test_single_checkpoint_all_equal(self, four_models, tiny_dataset):
        store = store_with(four_models, [0.9, 0.1, 0.1, 0.1])
        settings = EvalSettings(split="test", way=5, shot=1, queries=3, episodes=10, seed=2)
        report = compare_aeml_ensemble(select_top_t(None, store, 1), store, tiny_dataset,
                                       "test", settings)
        assert report.acc_single == report.acc_aeml == report.acc_ensemble
        assert report.delta_aeml == 0.0 and report.delta_ensemble == 0.0

    def test_trained_run(self, tiny_train_config, tiny_dataset):
        log, store = train(tiny_train_config, tiny_dataset)
        selection = select_top_t(log, store, 3)
        settings = EvalSettings(split="test", way=5, shot=1, queries=3, episodes=10, seed=2)
        report = compare_aeml_ensemble(selection, store, tiny_dataset, "test", settings,
                                       mode="majority_vote")
        for name in ("acc_single", "acc_aeml", "acc_ensemble"):
            assert 0.0 <= getattr(report, name) <= 1.0
        assert report.delta_aeml == pytest.approx(report.acc_aeml - report.acc_single)

    def test_report_serialization(self):
        report = ComparisonReport(3, "prob_avg", 0.8, 0.85, 0.86, 0.05, 0.06, 100, 1)
        assert ComparisonReport.from_json(report.to_json()) == report
        assert list(json.loads(report.to_json())) == COMPARISON_FIELDS
        assert report.csv_row().split(",")[:2] == ["3", "prob_avg"]

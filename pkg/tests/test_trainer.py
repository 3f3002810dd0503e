import numpy as np
import pandas as pd
import pytest

from csnet.episodes import SynthFamilyConfig, sample_episode, synth_family
from csnet.errors import ConfigError, ContractError, SamplingError, StateError
from csnet.model import batch_loss
from csnet.networks import ArchSpec
from csnet.tensor import backward
from csnet.trainer import (
    LOG_COLUMNS,
    AdamState,
    Checkpoint,
    CheckpointStore,
    LogRecord,
    TrainConfig,
    TrainingLog,
    adam_step,
    checkpoint_id,
    load_checkpoint,
    lr_at,
    recalibrate_bn,
    save_checkpoint,
    train,
    validate,
    with_overrides,
)


class TestSchedule:
    @pytest.mark.parametrize(
        "counter, expected",
        [(0, 1e-3), (49_999, 1e-3), (50_000, 5e-4), (100_000, 2.5e-4)],
    )
    def test_halving(self, mlp_arch, counter, expected):
        config = TrainConfig(mlp_arch, lr=1e-3, lr_halving=50_000)
        assert lr_at(counter, config) == pytest.approx(expected)

    def test_never_increases(self, mlp_arch):
        config = TrainConfig(mlp_arch, lr_halving=7)
        rates = [lr_at(c, config) for c in range(100)]
        assert all(b <= a for a, b in zip(rates, rates[1:]))

    def test_negative_counter(self, mlp_arch):
        with pytest.raises(ContractError):
            lr_at(-1, TrainConfig(mlp_arch))


class TestAdam:
    def test_zero_gradient_keeps_params(self, rng):
        params = {"w": rng.normal(size=(3, 2))}
        new, state = adam_step(params, {"w": np.zeros((3, 2))}, AdamState.fresh(params), 1e-3)
        np.testing.assert_array_equal(new["w"], params["w"])
        assert state.t == 1

    def test_first_step_moves_by_lr(self):
        params = {"p": np.array([0.0])}
        new, _ = adam_step(params, {"p": np.array([1.0])}, AdamState.fresh(params), 1e-3)
        assert new["p"][0] == pytest.approx(-1e-3, abs=1e-9)

    def test_missing_gradient(self):
        params = {"a": np.zeros(2), "b": np.zeros(2)}
        with pytest.raises(ContractError, match="b"):
            adam_step(params, {"a": np.zeros(2)}, AdamState.fresh(params), 1e-3)

    def test_deterministic(self, rng):
        params = {"w": rng.normal(size=4)}
        grads = {"w": rng.normal(size=4)}
        a, _ = adam_step(params, grads, AdamState.fresh(params), 1e-3)
        b, _ = adam_step(params, grads, AdamState.fresh(params), 1e-3)
        assert np.array_equal(a["w"], b["w"])

    def test_small_step_lowers_episode_loss(self, tiny_model, tiny_dataset):
        rng = np.random.default_rng(4)
        lowered = 0
        for _ in range(20):
            episode = sample_episode(tiny_dataset, "train", 5, 1, 5, rng)
            model = tiny_model.copy()
            loss, graph = batch_loss(model, [episode], precision="float64")
            params, _ = adam_step(
                model.trainable(), backward(loss).named(graph),
                AdamState.fresh(model.trainable()), 1e-5,
            )
            after, _ = batch_loss(model.with_trainable(params), [episode], precision="float64")
            lowered += after.item() < loss.item()
        assert lowered >= 15


class TestConfig:
    def test_dict_round_trip(self, tiny_train_config):
        assert TrainConfig.from_dict(tiny_train_config.to_dict()) == tiny_train_config

    def test_unknown_key(self, tiny_train_config):
        data = tiny_train_config.to_dict()
        data["momentum"] = 0.5
        with pytest.raises(ConfigError, match="momentum"):
            TrainConfig.from_dict(data)

    @pytest.mark.parametrize(
        "change",
        [{"way": 0}, {"beta1": 1.0}, {"lr": 0.0}, {"head": "nearest"}, {"attention_sign": "up"}],
    )
    def test_invalid(self, tiny_train_config, change):
        with pytest.raises(ConfigError):
            with_overrides(tiny_train_config, **change).validate()

    def test_overrides_skip_none(self, tiny_train_config):
        assert with_overrides(tiny_train_config, way=None, shot=2).shot == 2
        assert with_overrides(tiny_train_config, way=None).way == 5


class TestTrainingLog:
    def test_counters_must_increase(self):
        log = TrainingLog([LogRecord(0), LogRecord(5)])
        with pytest.raises(ContractError):
            log.append(LogRecord(5))

    def test_csv_header_and_round_trip(self, tmp_path):
        log = TrainingLog([
            LogRecord(0, val_acc=0.2, checkpoint_id="ckpt_0000000"),
            LogRecord(1, 1.6094379124341003, 1e-3),
            LogRecord(2, 1.5, 1e-3, 0.4, "ckpt_0000002"),
        ])
        path = log.to_csv(tmp_path / "log.csv")
        assert path.read_text().splitlines()[0] == ",".join(LOG_COLUMNS)
        assert TrainingLog.from_csv(path) == log
        assert log.checkpoint_ids() == ["ckpt_0000000", "ckpt_0000002"]


class TestTrain:
    def test_checkpoints_and_log(self, tiny_train_config, tiny_dataset):
        log, store = train(tiny_train_config, tiny_dataset)
        assert store.ids() == ["ckpt_0000000", "ckpt_0000020", "ckpt_0000040"]
        assert log.checkpoint_ids() == store.ids()
        assert [r.episode for r in log.records] == list(range(41))
        assert all(np.isfinite(r.loss) for r in log.records[1:])
        assert all(0.0 <= e["val_acc"] <= 1.0 for e in store.entries())

    def test_same_seed_same_log(self, tiny_train_config, tiny_dataset):
        first, _ = train(tiny_train_config, tiny_dataset)
        second, _ = train(tiny_train_config, tiny_dataset)
        assert first == second

    def test_zero_episodes(self, tiny_train_config, tiny_dataset):
        log, store = train(with_overrides(tiny_train_config, total_episodes=0), tiny_dataset)
        assert len(log) == 1
        assert store.ids() == ["ckpt_0000000"]
        assert log.records[0].loss is None

    def test_batches_of_episodes(self, tiny_train_config, tiny_dataset):
        config = with_overrides(tiny_train_config, episodes_per_batch=3, total_episodes=10,
                                val_every=6)
        log, store = train(config, tiny_dataset)
        assert [r.episode for r in log.records] == [0, 3, 6, 9, 10]
        assert store.ids() == ["ckpt_0000000", "ckpt_0000006", "ckpt_0000010"]

    def test_small_validation_split(self, tiny_train_config):
        cramped = synth_family(SynthFamilyConfig(dim=4, train_classes=8, val_classes=3,
                                                 test_classes=5, samples_per_class=10))
        with pytest.raises(SamplingError, match="val"):
            train(tiny_train_config, cramped)


class TestCheckpoints:
    def test_directory_store_round_trip(self, tiny_train_config, tiny_dataset, tmp_path):
        _, store = train(tiny_train_config, tiny_dataset, CheckpointStore(tmp_path / "ckpts"))
        reopened = CheckpointStore.open(tmp_path / "ckpts")
        assert reopened.ids() == store.ids()
        assert reopened.best() == store.best()
        for ckpt_id in store.ids():
            a, b = store.get(ckpt_id).model, reopened.get(ckpt_id).model
            for name, value in a.trainable().items():
                assert np.array_equal(value, b.trainable()[name])
            assert validate(a, tiny_dataset, "test", 5, 1, 5, 10, 3) == validate(
                b, tiny_dataset, "test", 5, 1, 5, 10, 3
            )

    def test_file_round_trip_keeps_adam(self, tiny_model, tmp_path):
        adam = AdamState.fresh(tiny_model.trainable())
        adam.t = 7
        ckpt = Checkpoint(checkpoint_id(12), tiny_model, adam, 12, 0.5)
        loaded = load_checkpoint(save_checkpoint(ckpt, tmp_path / "c.csnt"))
        assert loaded.id == "ckpt_0000012"
        assert loaded.adam.t == 7
        assert loaded.val_acc == 0.5
        assert set(loaded.adam.m) == set(tiny_model.trainable())
        assert loaded.model.signature() == tiny_model.signature()

    def test_best_prefers_later_on_ties(self, tiny_model):
        store = CheckpointStore()
        for episode, acc in [(0, 0.5), (10, 0.7), (20, 0.7)]:
            store.add(Checkpoint(checkpoint_id(episode), tiny_model, AdamState({}, {}), episode, acc))
        assert store.best() == "ckpt_0000020"

    def test_unknown_id(self):
        with pytest.raises(StateError):
            CheckpointStore().get("ckpt_9999999")

    def test_open_without_index(self, tmp_path):
        with pytest.raises(StateError):
            CheckpointStore.open(tmp_path)

    def test_accuracy_range(self, tiny_model):
        with pytest.raises(ContractError):
            Checkpoint("x", tiny_model, AdamState({}, {}), 0, 1.5)


class TestValidate:
    def test_perfect_and_constant_predictors(self, tiny_dataset):
        def perfect(episode):
            return np.eye(episode.way)[episode.query_y]

        def uniform(episode):
            return np.full((len(episode.query_y), episode.way), 1.0 / episode.way)

        assert validate(perfect, tiny_dataset, "val", 5, 1, 5, 20, 0) == 1.0
        assert validate(uniform, tiny_dataset, "val", 5, 1, 5, 20, 0) == pytest.approx(0.2)


class TestRecalibrate:
    def test_stats_recomputed(self, tiny_model, tiny_dataset):
        fresh = recalibrate_bn(tiny_model, tiny_dataset, "train", 5, 1, 5, episodes=5)
        stats = fresh.bn_stats()
        assert set(stats) == {"support/bn1", "support/bn2"}
        assert all(s.initialized and s.batches == 5 for s in stats.values())
        assert tiny_model.bn_stats()["support/bn1"].batches == 0

    def test_conv_embedding_stats(self):
        ds = synth_family(SynthFamilyConfig(dim=256, train_classes=6, val_classes=5,
                                            test_classes=5, samples_per_class=4)).reshaped((1, 16, 16))
        from csnet.model import build_model

        model = build_model(ArchSpec("conv4", (1, 16, 16), (4, 4, 4, 4)), 1, bypass=True)
        fresh = recalibrate_bn(model, ds, "train", 3, 1, 2, episodes=3)
        assert all(s.batches == 3 for s in fresh.bn_stats().values())


def test_log_frame_columns(tiny_train_config, tiny_dataset):
    log, _ = train(with_overrides(tiny_train_config, total_episodes=5), tiny_dataset)
    frame = log.to_frame()
    assert list(frame.columns) == LOG_COLUMNS
    assert isinstance(frame, pd.DataFrame)

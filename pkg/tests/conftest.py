import json

import numpy as np
import pytest

from csnet.episodes import SynthFamilyConfig, synth_family
from csnet.model import build_model
from csnet.networks import ArchSpec
from csnet.trainer import TrainConfig


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_family():
    return SynthFamilyConfig(
        dim=4,
        center_scale=3.0,
        within_scale=0.5,
        train_classes=12,
        val_classes=6,
        test_classes=6,
        samples_per_class=12,
        seed=3,
    )


@pytest.fixture
def tiny_dataset(tiny_family):
    return synth_family(tiny_family)


@pytest.fixture
def mlp_arch():
    return ArchSpec("mlp", (4,), (4, 16, 8))


@pytest.fixture
def tiny_model(mlp_arch):
    return build_model(mlp_arch, shot=1, support_width=4, seed=0)


@pytest.fixture
def tiny_train_config(mlp_arch):
    return TrainConfig(
        arch=mlp_arch,
        way=5,
        shot=1,
        queries=5,
        total_episodes=40,
        val_every=20,
        val_episodes=10,
        support_width=4,
        seed=0,
        workers=2,
    )


@pytest.fixture
def tiny_run_dict(tiny_family, tmp_path):
    return {
        "name": "tiny",
        "data": {"kind": "synth", "synth": tiny_family.to_dict()},
        "train": {
            "arch": {"kind": "mlp", "input_shape": [4], "widths": [4, 16, 8]},
            "way": 5,
            "shot": 1,
            "queries": 5,
            "total_episodes": 40,
            "val_every": 10,
            "val_episodes": 10,
            "support_width": 4,
            "seed": 0,
            "workers": 2,
        },
        "eval": {"split": "test", "way": 5, "shot": 1, "queries": 5, "episodes": 20, "seed": 7},
        "aeml": {"t": 2},
        "ablation": {"shots": [1, 2]},
        "output_dir": str(tmp_path / "runs"),
    }


@pytest.fixture
def tiny_config_file(tiny_run_dict, tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(tiny_run_dict), encoding="utf-8")
    return path

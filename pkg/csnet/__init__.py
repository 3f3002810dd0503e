"""
Class Support Networks: few-shot meta-learning with competitive attention,
a learned class support embedding and approximate ensembles of checkpoints.
"""

from .aeml import (
    AemlSelection,
    ComparisonReport,
    average_params,
    average_tensors,
    compare_aeml_ensemble,
    ensemble_outputs,
    ensemble_predict,
    select_top_t,
    write_averaged_checkpoint,
)
from .attention import (
    AttentionResult,
    ClassSupports,
    brute_force_competitive,
    competitive_attention,
    competitive_weights,
    matching_attention,
    predict,
    prototype_head,
    select_winners,
)
from .cli import cli_dispatch
from .config import RunConfig, load_data, load_run_config
from .episodes import (
    Dataset,
    Episode,
    SynthFamilyConfig,
    episode_batch,
    rotate_class,
    sample_episode,
    synth_family,
)
from .errors import CsnError
from .evaluation import EvalReport, ci95, evaluate, nearest_neighbor_baseline, run_ablation
from .model import ModelParams, build_model, episode_loss, episode_probs
from .networks import (
    ArchSpec,
    build_class_support,
    build_embedding,
    bypass_class_support,
    class_support_forward,
    embed,
)
from .omniglot import fetch_omniglot, load_omniglot
from .storage import load_dataset, save_dataset
from .tensor import Graph, Tensor, backward, grad_check
from .trainer import (
    Checkpoint,
    CheckpointStore,
    TrainConfig,
    TrainingLog,
    adam_step,
    lr_at,
    train,
    validate,
)

__all__ = [
    # Autodiff
    "Graph",
    "Tensor",
    "backward",
    "grad_check",
    # Networks and model
    "ArchSpec",
    "build_embedding",
    "embed",
    "build_class_support",
    "class_support_forward",
    "bypass_class_support",
    "ModelParams",
    "build_model",
    "episode_probs",
    "episode_loss",
    # Attention heads
    "ClassSupports",
    "AttentionResult",
    "select_winners",
    "competitive_weights",
    "predict",
    "competitive_attention",
    "matching_attention",
    "prototype_head",
    "brute_force_competitive",
    # Data
    "Dataset",
    "Episode",
    "SynthFamilyConfig",
    "synth_family",
    "load_omniglot",
    "fetch_omniglot",
    "rotate_class",
    "sample_episode",
    "episode_batch",
    "save_dataset",
    "load_dataset",
    # Training
    "TrainConfig",
    "Checkpoint",
    "CheckpointStore",
    "TrainingLog",
    "adam_step",
    "lr_at",
    "train",
    "validate",
    # AEML
    "AemlSelection",
    "ComparisonReport",
    "select_top_t",
    "average_params",
    "average_tensors",
    "ensemble_outputs",
    "ensemble_predict",
    "compare_aeml_ensemble",
    "write_averaged_checkpoint",
    # Evaluation and CLI
    "EvalReport",
    "RunConfig",
    "load_run_config",
    "load_data",
    "ci95",
    "evaluate",
    "nearest_neighbor_baseline",
    "run_ablation",
    "cli_dispatch",
    "CsnError",
]

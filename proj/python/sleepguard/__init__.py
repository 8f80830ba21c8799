"""Eye-closedness CNN training, adversarial attacks and robustness experiments."""

from ._core import (
    ConfigError,
    DataError,
    Dataset,
    Model,
    ModelFormatError,
    NonFiniteError,
    ShapeError,
    attack,
    attack_dataset,
    augment,
    build_paper_model,
    compute_metrics,
    config_hash,
    evaluate,
    generate_synthetic,
    load_directory,
    load_model,
    random_augment,
    run_experiment,
    run_grid,
    split_dataset,
    train,
)

OPEN = 0
CLOSED = 1

__all__ = [
    "CLOSED",
    "ConfigError",
    "DataError",
    "Dataset",
    "Model",
    "ModelFormatError",
    "NonFiniteError",
    "OPEN",
    "ShapeError",
    "attack",
    "attack_dataset",
    "augment",
    "build_paper_model",
    "compute_metrics",
    "config_hash",
    "evaluate",
    "generate_synthetic",
    "load_directory",
    "load_model",
    "random_augment",
    "run_experiment",
    "run_grid",
    "split_dataset",
    "train",
]

"""Trajectory prediction with prior knowledge via generalized variational continual learning."""

from .scenegen import Dataset, Scene, build_dataset, generate_scene, load_dataset, save_dataset
from .tasks import (
    VARIANTS,
    ExperimentConfig,
    Hyper,
    PosteriorCheckpoint,
    run_experiment,
    train_variant,
)
from .trajset import TrajectorySet, build_cover, closest_mode, drivable_labels

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "Scene",
    "build_dataset",
    "generate_scene",
    "load_dataset",
    "save_dataset",
    "VARIANTS",
    "ExperimentConfig",
    "Hyper",
    "PosteriorCheckpoint",
    "run_experiment",
    "train_variant",
    "TrajectorySet",
    "build_cover",
    "closest_mode",
    "drivable_labels",
]

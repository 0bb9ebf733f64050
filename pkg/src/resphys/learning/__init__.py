"""Residual network, its training, hybrid/SimFree rollouts and checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .network import NetSpec, ResidualModel, ResidualNet, Standardizer
from .rollout import rollout_hybrid, rollout_simfree
from .training import TrainConfig, TrainHistory, random_search, train, train_simfree

__all__ = [
    "NetSpec",
    "ResidualModel",
    "ResidualNet",
    "Standardizer",
    "TrainConfig",
    "TrainHistory",
    "load_checkpoint",
    "random_search",
    "rollout_hybrid",
    "rollout_simfree",
    "save_checkpoint",
    "train",
    "train_simfree",
]

"""Training configuration, determinism control and shared loop helpers."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import TrainingDivergedError, ValidationError


def set_determinism(seed: int) -> None:
    """Seed every RNG in play and force deterministic torch kernels.

    Call once before building a network so weight initialization, batch
    shuffling and any dropout draws are reproducible bit for bit.
    """
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters shared by all training entry points."""

    epochs: int = 200
    batch_size: int = 8
    lr: float = 1e-3
    seed: int = 0
    base_channels: int = 16
    latent_dim: int = 64
    val_every: int = 0  # 0 disables in-loop validation

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0 < self.lr < 1):
            raise ValidationError(f"lr must lie in (0, 1), got {self.lr}")
        if self.base_channels < 1 or self.latent_dim < 1:
            raise ValidationError("base_channels and latent_dim must be positive")
        if self.val_every < 0:
            raise ValidationError(f"val_every must be >= 0, got {self.val_every}")


@dataclass
class TrainLog:
    """What a training run did, for checkpoints and reports."""

    kind: str
    seed: int
    epochs: int = 0
    loss_history: list = field(default_factory=list)
    val_history: list = field(default_factory=list)  # (epoch, metric) pairs
    wall_time_s: float = 0.0

    def record_epoch(self, mean_loss: float) -> None:
        self.epochs += 1
        self.loss_history.append(float(mean_loss))


def epoch_batches(n_items: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled index batches covering all items once (last batch may be short)."""
    if n_items < 1:
        raise ValidationError("cannot batch an empty dataset")
    order = rng.permutation(n_items)
    return [order[i:i + batch_size] for i in range(0, n_items, batch_size)]


def check_finite_loss(loss: torch.Tensor, context: str) -> float:
    value = float(loss.detach())
    if not np.isfinite(value):
        raise TrainingDivergedError(f"{context}: loss became {value}")
    return value


def build_optimizer(net: torch.nn.Module, lr: float) -> torch.optim.Adam:
    return torch.optim.Adam(net.parameters(), lr=lr)

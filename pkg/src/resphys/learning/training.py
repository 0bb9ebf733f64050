"""Mini-batch training of the residual network.

The loss on a batch is the mean squared norm of the standardized prediction
error plus ``weight_decay`` times the squared parameter norm. The model with
the lowest validation loss over all epochs is returned.
"""

from __future__ import annotations

import copy
import logging
from typing import TYPE_CHECKING, List

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field
from torch.optim import Adam
from torch.optim.lr_scheduler import ExponentialLR
from torch.utils.data import DataLoader, TensorDataset

from resphys.errors import ConfigError, TrainingError
from resphys.learning.network import (
    ACTUATION_CHANNEL,
    INPUT_CHANNELS,
    TARGET_CHANNELS,
    ModelKind,
    NetSpec,
    ResidualModel,
    ResidualNet,
    Standardizer,
)

if TYPE_CHECKING:
    from resphys.fitting.dataset import ResidualDataset

logger = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    epochs: int = Field(1000, ge=1, description="Training epochs")
    batch_size: int = Field(64, ge=1, description="Mini-batch size M")
    learning_rate: float = Field(1e-3, gt=0, description="Adam learning rate")
    lr_decay_gamma: float = Field(0.995, gt=0, le=1, description="Per-epoch exponential decay")
    weight_decay: float = Field(1e-5, ge=0, description="Weight of the squared parameter norm")
    seed: int = Field(0, description="Seed for initialization and shuffling")
    log_every: int = Field(50, ge=1, description="Epochs between progress log lines")


class TrainHistory(BaseModel):
    train_loss: List[float] = Field(default_factory=list, description="Mean training loss per epoch")
    val_loss: List[float] = Field(default_factory=list, description="Validation loss per epoch")
    best_epoch: int = Field(-1, description="Epoch (0-based) of the returned parameters")
    best_val_loss: float = Field(float("inf"), description="Validation loss of the returned parameters")


def training_loss(
    net: ResidualNet, inputs: torch.Tensor, targets: torch.Tensor, weight_decay: float
) -> torch.Tensor:
    """Mean per-sample squared error plus the parameter penalty."""
    error = net(inputs) - targets
    return torch.mean(torch.sum(error**2, dim=-1)) + weight_decay * net.parameter_norm()


def prepare_model(
    dataset: "ResidualDataset", spec: NetSpec, kind: ModelKind = "residual"
) -> tuple[ResidualModel, dict[str, np.ndarray]]:
    """Fit the standardizer on the training split and build an untrained model."""
    samples = dataset.samples("train")
    actuated = dataset.actuated
    channels = INPUT_CHANNELS + ((ACTUATION_CHANNEL,) if actuated else ()) + TARGET_CHANNELS[kind]
    standardizer = Standardizer.fit(samples, channels)
    n = dataset.mesh.num_nodes
    in_channels = len(INPUT_CHANNELS) + int(actuated)
    sized = spec.sized(3 * n * in_channels, 3 * n * len(TARGET_CHANNELS[kind]))
    net = ResidualNet(sized)
    model = ResidualModel(net, standardizer, dataset.mesh.nodes, dataset.mesh.dirichlet_nodes, kind, actuated)
    return model, samples


def _tensors(model: ResidualModel, samples: dict[str, np.ndarray]) -> tuple[torch.Tensor, torch.Tensor]:
    inputs = model.encode_inputs(samples["q"], samples["v"], samples["f_ext"])
    targets = model.encode_targets(samples)
    return torch.as_tensor(inputs, dtype=torch.float64), torch.as_tensor(targets, dtype=torch.float64)


def train(
    dataset: "ResidualDataset",
    spec: NetSpec,
    cfg: TrainConfig,
    kind: ModelKind = "residual",
) -> tuple[ResidualModel, TrainHistory]:
    """Train a residual (or SimFree) network; returns the best-validation model."""
    torch.manual_seed(cfg.seed)
    model, train_samples = prepare_model(dataset, spec, kind)
    x_train, y_train = _tensors(model, train_samples)
    x_val, y_val = _tensors(model, dataset.samples("val"))
    net = model.net

    loader = DataLoader(
        TensorDataset(x_train, y_train),
        batch_size=cfg.batch_size,
        shuffle=True,
        generator=torch.Generator().manual_seed(cfg.seed),
    )
    optimizer = Adam(net.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.999), eps=1e-8)
    scheduler = ExponentialLR(optimizer, gamma=cfg.lr_decay_gamma)

    history = TrainHistory()
    best_state = copy.deepcopy(net.state_dict())
    for epoch in range(cfg.epochs):
        net.train()
        total, count = 0.0, 0
        for batch, (inputs, targets) in enumerate(loader):
            loss = training_loss(net, inputs, targets, cfg.weight_decay)
            if not torch.isfinite(loss):
                raise TrainingError("non-finite training loss", epoch=epoch, batch=batch)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item() * inputs.shape[0]
            count += inputs.shape[0]
        scheduler.step()

        net.eval()
        with torch.no_grad():
            val = training_loss(net, x_val, y_val, cfg.weight_decay).item()
        if not np.isfinite(val):
            raise TrainingError("non-finite validation loss", epoch=epoch)
        history.train_loss.append(total / count)
        history.val_loss.append(val)
        if val < history.best_val_loss:
            history.best_val_loss = val
            history.best_epoch = epoch
            best_state = copy.deepcopy(net.state_dict())
        if (epoch + 1) % cfg.log_every == 0 or epoch == cfg.epochs - 1:
            logger.info(
                "Epoch [%d/%d] train %.4e val %.4e (best %.4e @ %d)",
                epoch + 1, cfg.epochs, history.train_loss[-1], val, history.best_val_loss, history.best_epoch + 1,
            )

    net.load_state_dict(best_state)
    net.eval()
    return model, history


def train_simfree(
    dataset: "ResidualDataset", spec: NetSpec, cfg: TrainConfig
) -> tuple[ResidualModel, TrainHistory]:
    """SimFree baseline: the same architecture predicting the next state directly."""
    return train(dataset, spec, cfg, kind="simfree")


def random_search(
    dataset: "ResidualDataset",
    budget: int,
    seed: int = 0,
    base: TrainConfig | None = None,
    kind: ModelKind = "residual",
) -> tuple[ResidualModel, TrainHistory, NetSpec, TrainConfig]:
    """Train ``budget`` randomly sampled configurations and keep the best on validation."""
    if budget < 1:
        raise ConfigError(f"budget must be >= 1, got {budget}")
    base = base or TrainConfig()
    rng = np.random.default_rng(seed)
    best = None
    for trial in range(budget):
        spec = NetSpec(
            num_blocks=int(rng.integers(1, 5)),
            layers_per_block=int(rng.integers(1, 4)),
            hidden_size=int(rng.choice([64, 128, 256, 512])),
        )
        cfg = base.model_copy(
            update={
                "batch_size": int(rng.choice([16, 32, 64, 128])),
                "learning_rate": float(10 ** rng.uniform(-4, np.log10(3e-3))),
                "lr_decay_gamma": float(rng.uniform(0.99, 0.999)),
                "seed": base.seed + trial,
            }
        )
        model, history = train(dataset, spec, cfg, kind)
        logger.info("search trial %d: %s, %s -> val %.4e", trial, spec, cfg, history.best_val_loss)
        if best is None or history.best_val_loss < best[1].best_val_loss:
            best = (model, history, model.spec, cfg)
    return best

"""Block MLP mapping a simulator state (and actuation) to a residual force.

Architecture (all linear layers but the last are followed by LayerNorm and ELU):

    input   Linear(input_size -> output_size)
    block   Linear(output_size -> hidden) ... Linear(hidden -> output_size), x + block(x)
    output  Linear(output_size -> output_size)

Inputs and targets are standardized per spatial axis with statistics taken
from the training split.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field
from torch import nn

from resphys.errors import ResPhysError

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-8
INPUT_CHANNELS = ("q", "v")
ACTUATION_CHANNEL = "f_ext"
TARGET_CHANNELS = {"residual": ("f_res",), "simfree": ("q_next", "v_next")}

ModelKind = Literal["residual", "simfree"]


class NetSpec(BaseModel):
    """Network architecture; sizes are filled in from the data."""

    model_config = ConfigDict(frozen=True)

    num_blocks: int = Field(3, ge=1, description="Residual blocks")
    layers_per_block: int = Field(2, ge=1, description="Linear layers per block")
    hidden_size: int = Field(512, ge=1, description="Width inside a block")
    input_size: Optional[int] = Field(None, ge=1, description="6N, or 9N with actuation")
    output_size: Optional[int] = Field(None, ge=1, description="3N (residual) or 6N (SimFree)")

    def sized(self, input_size: int, output_size: int) -> "NetSpec":
        return self.model_copy(update={"input_size": input_size, "output_size": output_size})


@dataclass
class Standardizer:
    """Per-axis mean and std of every channel, each of shape (3,)."""

    mean: dict[str, np.ndarray] = field(default_factory=dict)
    std: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def fit(cls, samples: dict[str, np.ndarray], channels: tuple[str, ...]) -> "Standardizer":
        out = cls()
        for name in channels:
            data = samples[name].reshape(-1, 3)
            out.mean[name] = data.mean(axis=0)
            out.std[name] = np.maximum(data.std(axis=0), STD_FLOOR)
        return out

    def standardize(self, name: str, x: np.ndarray) -> np.ndarray:
        return (x - self.mean[name]) / self.std[name]

    def destandardize(self, name: str, x: np.ndarray) -> np.ndarray:
        return x * self.std[name] + self.mean[name]

    def to_json(self) -> dict:
        return {name: {"mean": self.mean[name].tolist(), "std": self.std[name].tolist()} for name in self.mean}

    @classmethod
    def from_json(cls, data: dict) -> "Standardizer":
        out = cls()
        for name, stats in data.items():
            out.mean[name] = np.asarray(stats["mean"], dtype=float)
            out.std[name] = np.asarray(stats["std"], dtype=float)
        return out


def _dense(in_features: int, out_features: int) -> list[nn.Module]:
    return [nn.Linear(in_features, out_features), nn.LayerNorm(out_features), nn.ELU(alpha=1.0)]


class ResidualBlock(nn.Module):
    def __init__(self, size: int, hidden: int, layers: int) -> None:
        super().__init__()
        widths = [size] + [hidden] * (layers - 1) + [size]
        modules: list[nn.Module] = []
        for a, b in zip(widths[:-1], widths[1:]):
            modules += _dense(a, b)
        self.layers = nn.Sequential(*modules)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.layers(x)


class ResidualNet(nn.Module):
    def __init__(self, spec: NetSpec) -> None:
        super().__init__()
        if spec.input_size is None or spec.output_size is None:
            raise ResPhysError("NetSpec sizes must be set before building a network")
        self.spec = spec
        out = spec.output_size
        self.input = nn.Sequential(*_dense(spec.input_size, out))
        self.blocks = nn.Sequential(
            *[ResidualBlock(out, spec.hidden_size, spec.layers_per_block) for _ in range(spec.num_blocks)]
        )
        self.output = nn.Linear(out, out)
        self.double()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.spec.input_size:
            raise ResPhysError(f"expected input size {self.spec.input_size}, got {x.shape[-1]}")
        return self.output(self.blocks(self.input(x)))

    def parameter_norm(self) -> torch.Tensor:
        return sum(torch.sum(p**2) for p in self.parameters())


class ResidualModel:
    """A trained network together with everything needed to call it on raw states."""

    def __init__(
        self,
        net: ResidualNet,
        standardizer: Standardizer,
        rest: np.ndarray,
        dirichlet_nodes: np.ndarray,
        kind: ModelKind = "residual",
        actuated: bool = False,
    ) -> None:
        self.net = net
        self.standardizer = standardizer
        self.rest = np.asarray(rest, dtype=float)
        self.dirichlet_nodes = np.asarray(dirichlet_nodes, dtype=np.int64)
        self.kind = kind
        self.actuated = actuated

    @property
    def spec(self) -> NetSpec:
        return self.net.spec

    @property
    def input_channels(self) -> tuple[str, ...]:
        return INPUT_CHANNELS + ((ACTUATION_CHANNEL,) if self.actuated else ())

    @property
    def target_channels(self) -> tuple[str, ...]:
        return TARGET_CHANNELS[self.kind]

    def encode_inputs(self, q_offset: np.ndarray, v: np.ndarray, f_ext: np.ndarray | None) -> np.ndarray:
        """Standardized, flattened network inputs; arrays are (..., N, 3)."""
        channels = {"q": q_offset, "v": v, "f_ext": f_ext}
        parts = []
        for name in self.input_channels:
            x = channels[name]
            if x is None:
                x = np.zeros_like(q_offset)
            x = self.standardizer.standardize(name, np.asarray(x, dtype=float))
            parts.append(x.reshape(x.shape[:-2] + (-1,)))
        return np.concatenate(parts, axis=-1)

    def encode_targets(self, samples: dict[str, np.ndarray]) -> np.ndarray:
        parts = []
        for name in self.target_channels:
            x = self.standardizer.standardize(name, samples[name])
            parts.append(x.reshape(x.shape[0], -1))
        return np.concatenate(parts, axis=-1)

    def decode(self, out: np.ndarray) -> dict[str, np.ndarray]:
        """Destandardize raw network output (..., output_size) into (..., N, 3) channels."""
        n = self.rest.shape[0]
        chunks = np.split(out, len(self.target_channels), axis=-1)
        decoded = {}
        for name, chunk in zip(self.target_channels, chunks):
            x = self.standardizer.destandardize(name, chunk.reshape(chunk.shape[:-1] + (n, 3)))
            x[..., self.dirichlet_nodes, :] = 0.0
            decoded[name] = x
        return decoded

    def raw_forward(self, inputs: np.ndarray) -> np.ndarray:
        self.net.eval()
        with torch.no_grad():
            return self.net(torch.as_tensor(inputs, dtype=torch.float64)).numpy()

    def predict(self, q: np.ndarray, v: np.ndarray, f_ext: np.ndarray | None = None) -> dict[str, np.ndarray]:
        """Network prediction for absolute positions ``q`` (..., N, 3)."""
        q = np.asarray(q, dtype=float)
        inputs = self.encode_inputs(q - self.rest, np.asarray(v, dtype=float), f_ext)
        return self.decode(self.raw_forward(inputs))

    def residual_force(self, q: np.ndarray, v: np.ndarray, f_ext: np.ndarray | None = None) -> np.ndarray:
        return self.predict(q, v, f_ext)["f_res"]

    def next_state(self, q: np.ndarray, v: np.ndarray, f_ext: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        out = self.predict(q, v, f_ext)
        return out["q_next"] + self.rest, out["v_next"]

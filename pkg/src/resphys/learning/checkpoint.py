"""Checkpoint container.

``manifest.json`` holds the network spec, standardizer statistics, training
config, best epoch and validation loss, and the ordered parameter names with
their shapes. ``params.f64`` is the flat little-endian float64 concatenation
of the parameters in that order: input layer, blocks in order, output layer;
weight before bias (LayerNorm gain before bias), each row-major.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
import torch

from resphys.errors import ArtifactError, ContainerError
from resphys.learning.network import NetSpec, ResidualModel, ResidualNet, Standardizer
from resphys.learning.training import TrainConfig, TrainHistory

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
PARAMS = "params.f64"


def flatten_parameters(net: ResidualNet) -> tuple[np.ndarray, list[dict]]:
    layout, chunks = [], []
    for name, param in net.named_parameters():
        data = param.detach().cpu().numpy().astype("<f8")
        layout.append({"name": name, "shape": list(data.shape)})
        chunks.append(data.ravel())
    return np.concatenate(chunks), layout


def save_checkpoint(
    directory: str | Path, model: ResidualModel, history: TrainHistory, cfg: TrainConfig
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    flat, layout = flatten_parameters(model.net)
    flat.tofile(directory / PARAMS)
    manifest = {
        "kind": model.kind,
        "actuated": model.actuated,
        "spec": model.spec.model_dump(),
        "standardizer": model.standardizer.to_json(),
        "train": cfg.model_dump(),
        "best_epoch": history.best_epoch,
        "val_loss": history.best_val_loss,
        "rest": model.rest.tolist(),
        "dirichlet": model.dirichlet_nodes.tolist(),
        "parameters": layout,
    }
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2))
    logger.info("saved %s checkpoint to %s (%d parameters)", model.kind, directory, flat.size)
    return directory


def load_checkpoint(directory: str | Path) -> tuple[ResidualModel, dict]:
    directory = Path(directory)
    for name in (MANIFEST, PARAMS):
        if not (directory / name).exists():
            raise ArtifactError(str(directory / name))
    manifest = json.loads((directory / MANIFEST).read_text())
    net = ResidualNet(NetSpec.model_validate(manifest["spec"]))
    flat = np.fromfile(directory / PARAMS, dtype="<f8")

    params = dict(net.named_parameters())
    offset = 0
    with torch.no_grad():
        for entry in manifest["parameters"]:
            param = params.get(entry["name"])
            if param is None or list(param.shape) != entry["shape"]:
                raise ContainerError(f"{directory}: parameter {entry['name']} does not match the network")
            size = int(np.prod(entry["shape"]))
            if offset + size > flat.size:
                raise ContainerError(f"{directory}: {PARAMS} is too short")
            param.copy_(torch.from_numpy(flat[offset:offset + size].reshape(entry["shape"]).copy()))
            offset += size
    if offset != flat.size:
        raise ContainerError(f"{directory}: {PARAMS} has {flat.size - offset} trailing values")
    net.eval()
    model = ResidualModel(
        net,
        Standardizer.from_json(manifest["standardizer"]),
        np.asarray(manifest["rest"], dtype=float),
        np.asarray(manifest["dirichlet"], dtype=np.int64),
        manifest["kind"],
        bool(manifest["actuated"]),
    )
    return model, manifest

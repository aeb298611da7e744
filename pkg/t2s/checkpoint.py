"""
Checkpoint directories: `manifest.json` (format version, model kind, config echo,
parameter shape table, training echo) next to a `weights.pt` state dict.
"""

import json
import logging
from pathlib import Path
from typing import Any, Literal

import torch
from pydantic import BaseModel, ValidationError
from torch import nn

from t2s.errors import CheckpointError
from t2s.models.dit import TextSeriesDiT
from t2s.models.la_vae import LaVae
from t2s.schemas import DenoiserConfig, VaeConfig

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
WEIGHTS_NAME = "weights.pt"

CheckpointKind = Literal["la_vae", "dit"]


class CheckpointManifest(BaseModel):
    format_version: int
    kind: CheckpointKind
    config: dict[str, Any]
    shapes: dict[str, list[int]]
    training: dict[str, Any] = {}
    extra: dict[str, Any] = {}


def save_checkpoint(
    model: nn.Module,
    directory: str | Path,
    kind: CheckpointKind,
    config: BaseModel,
    training: dict[str, Any] | None = None,
    extra: dict[str, Any] | None = None,
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    state = {name: tensor.detach().cpu() for name, tensor in model.state_dict().items()}
    manifest = CheckpointManifest(
        format_version=FORMAT_VERSION,
        kind=kind,
        config=config.model_dump(mode="json"),
        shapes={name: list(tensor.shape) for name, tensor in state.items()},
        training=training or {},
        extra=extra or {},
    )
    torch.save(state, directory / WEIGHTS_NAME)
    (directory / MANIFEST_NAME).write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"Saved {kind} checkpoint to {directory}")
    return directory


def read_manifest(directory: str | Path, expected_kind: CheckpointKind | None = None) -> CheckpointManifest:
    path = Path(directory) / MANIFEST_NAME
    if not path.is_file():
        raise CheckpointError(f"No checkpoint manifest at {path}")
    try:
        manifest = CheckpointManifest.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise CheckpointError(f"Malformed checkpoint manifest {path}: {e.errors()[0]['msg']}") from e
    if manifest.format_version != FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint format {manifest.format_version} (expected {FORMAT_VERSION})")
    if expected_kind and manifest.kind != expected_kind:
        raise CheckpointError(f"Expected a {expected_kind} checkpoint at {directory}, found {manifest.kind}")
    return manifest


def _load_into(model: nn.Module, directory: Path, manifest: CheckpointManifest) -> None:
    weights = directory / WEIGHTS_NAME
    if not weights.is_file():
        raise CheckpointError(f"Missing weights file {weights}")
    try:
        state = torch.load(weights, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"Cannot read weights {weights}: {e}") from e

    expected = {name: list(t.shape) for name, t in model.state_dict().items()}
    if set(state) != set(manifest.shapes) or set(state) != set(expected):
        missing = sorted(set(expected) - set(state))
        unexpected = sorted(set(state) - set(expected))
        raise CheckpointError(f"Parameter names do not match manifest/model: missing={missing} unexpected={unexpected}")
    for name, tensor in state.items():
        if list(tensor.shape) != manifest.shapes[name] or manifest.shapes[name] != expected[name]:
            raise CheckpointError(
                f"Shape mismatch for {name}: weights {list(tensor.shape)}, "
                f"manifest {manifest.shapes[name]}, model {expected[name]}"
            )
    model.load_state_dict(state)


def load_la_vae(directory: str | Path) -> tuple[LaVae, CheckpointManifest]:
    directory = Path(directory)
    manifest = read_manifest(directory, "la_vae")
    try:
        config = VaeConfig(**manifest.config)
    except ValidationError as e:
        raise CheckpointError(f"Invalid VAE config in {directory}: {e.errors()[0]['msg']}") from e
    model = LaVae(config)
    _load_into(model, directory, manifest)
    model.eval()
    return model, manifest


def load_denoiser(directory: str | Path) -> tuple[TextSeriesDiT, CheckpointManifest]:
    directory = Path(directory)
    manifest = read_manifest(directory, "dit")
    try:
        config = DenoiserConfig(**manifest.config)
    except ValidationError as e:
        raise CheckpointError(f"Invalid denoiser config in {directory}: {e.errors()[0]['msg']}") from e
    model = TextSeriesDiT(config)
    _load_into(model, directory, manifest)
    model.eval()
    return model, manifest

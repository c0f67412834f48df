"""Checkpoints: a JSON manifest next to one little-endian float64 blob."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .model import ModelConfig, Praline, StitchedPraline


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(
    path: str | Path,
    model: nn.Module,
    config: dict,
    epoch: int,
    seed: int,
    extra: dict | None = None,
) -> Path:
    """Write ``<path>.json`` and ``<path>.bin``; returns the manifest path.

    ``config`` must carry the model config under ``"model"`` and the training
    mode under ``"training_mode"`` so the loader can rebuild the module.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {}
    offset = 0
    chunks = []
    for name, tensor in model.state_dict().items():
        a = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype="<f8")
        arrays[name] = {"shape": list(a.shape), "offset": offset}
        offset += a.size
        chunks.append(a.ravel())
    blob = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f8")
    manifest = {
        "config": config,
        "epoch": epoch,
        "seed": seed,
        "arrays": arrays,
        "blob": path.name + ".bin",
        "dtype": "<f8",
    }
    if extra:
        manifest.update(extra)
    blob.astype("<f8").tofile(path.with_name(path.name + ".bin"))
    manifest_path = path.with_name(path.name + ".json")
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=1), encoding="utf-8")
    return manifest_path


def read_manifest(path: str | Path) -> dict:
    path = Path(path)
    if path.suffix != ".json":
        path = path.with_name(path.name + ".json")
    if not path.exists():
        raise CheckpointError(f"checkpoint manifest not found: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def load_checkpoint(path: str | Path) -> tuple[nn.Module, dict]:
    path = Path(path)
    if path.suffix == ".json":
        path = path.with_suffix("")
    manifest = read_manifest(path)
    cfg = ModelConfig(**manifest["config"]["model"])
    if manifest["config"].get("training_mode", "joint") == "separate":
        model: nn.Module = StitchedPraline(Praline(cfg), Praline(cfg), Praline(cfg))
    else:
        model = Praline(cfg)
    model = model.double()
    blob = np.fromfile(path.with_name(manifest["blob"]), dtype="<f8")
    state = {}
    for name, info in manifest["arrays"].items():
        size = int(np.prod(info["shape"])) if info["shape"] else 1
        start = info["offset"]
        if start + size > blob.size:
            raise CheckpointError(f"array {name} runs past the end of the blob")
        state[name] = torch.from_numpy(blob[start:start + size].reshape(info["shape"]).copy())
    missing = set(model.state_dict()) - set(state)
    if missing:
        raise CheckpointError(f"checkpoint lacks arrays: {sorted(missing)[:5]}")
    model.load_state_dict(state)
    model.eval()
    return model, manifest

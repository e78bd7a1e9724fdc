"""Single-archive checkpoints with a versioned header."""
from __future__ import annotations

import hashlib
import pickle
from pathlib import Path

import torch

from .config import ModelConfig, RunConfig
from .model import PromptDet3D

CHECKPOINT_FORMAT = "promptdet3d.checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(model: PromptDet3D, cfg: RunConfig, path: str | Path, step: int = 0) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "step": int(step),
        "config": cfg.to_dict(),
        "state_dict": {k: v.detach().clone() for k, v in model.state_dict().items()},
    }
    torch.save(payload, str(path))


def load_checkpoint(path: str | Path, expect: ModelConfig | None = None) -> tuple[PromptDet3D, RunConfig, int]:
    try:
        payload = torch.load(str(path), map_location="cpu", weights_only=True)
    except (OSError, RuntimeError, EOFError, pickle.UnpicklingError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a promptdet3d checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('version')}")
    cfg = RunConfig.from_dict(payload["config"])
    if expect is not None and expect != cfg.model:
        raise CheckpointError("checkpoint model configuration does not match the requested model")
    model = PromptDet3D(cfg.model)
    try:
        model.load_state_dict(payload["state_dict"])
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint/model shape mismatch: {exc}") from None
    return model, cfg, int(payload.get("step", 0))


def parameter_checksum(module: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()

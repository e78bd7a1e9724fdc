"""Run configuration (model, optimizer, data) and its YAML round-trip."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml


@dataclass
class ModelConfig:
    image_height: int = 96
    image_width: int = 128
    patch: int = 8
    width: int = 64
    blocks: int = 8
    stages: int = 4
    heads: int = 4
    mlp_ratio: float = 2.0
    # geometric (DINO-role) encoder patch; features are resampled to the promptable grid
    geo_patch: int = 8
    cam_channels: int = 32
    she_degree: int = 3
    decoder_mlp: int = 128
    two_way_depth: int = 2
    dim_prior: tuple[float, float, float] = (1.0, 1.0, 1.0)
    depth_prior: float = 5.0
    # focal prior as a multiple of the image width
    focal_prior: float = 1.0

    @property
    def grid(self) -> tuple[int, int]:
        return self.image_height // self.patch, self.image_width // self.patch

    def validate(self) -> None:
        if self.image_height % self.patch or self.image_width % self.patch:
            raise ValueError("image size must be divisible by the patch size")
        if self.image_height % self.geo_patch or self.image_width % self.geo_patch:
            raise ValueError("image size must be divisible by the geometric patch size")
        if self.blocks % self.stages:
            raise ValueError("blocks must split evenly into stages")
        if self.width % self.heads:
            raise ValueError("width must be divisible by heads")
        if self.two_way_depth != 2:
            raise ValueError("the decoder is built with exactly two two-way layers")
        if self.patch & (self.patch - 1):
            raise ValueError("patch size must be a power of two (strided conv stem)")


@dataclass
class TrainConfig:
    optimizer: str = "adamw"
    lr: float = 1e-4
    weight_decay: float = 1e-4
    schedule: str = "cosine"
    min_lr_ratio: float = 0.0
    steps: int = 1000
    batch_size: int = 4
    grad_clip: float = 1.0
    prompt_mode: str = "box"
    box_noise: float = 0.1
    intrinsic_prompt: bool = True
    # fraction of training samples that get the GT intrinsic prompt when enabled
    intrinsic_prompt_prob: float = 1.0
    freeze_encoders: bool = False
    checkpoint_every: int = 0
    log_every: int = 10


@dataclass
class SynthConfig:
    n_scenes: int = 32
    split: str = "train"
    name: str = "synth"
    focal: tuple[float, float] = (90.0, 150.0)
    principal_jitter: float = 0.03
    objects: tuple[int, int] = (1, 8)
    depth: tuple[float, float] = (3.0, 9.0)
    dim_jitter: float = 0.15


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    seed: int = 0
    manifest: str | None = None
    eval_manifest: str | None = None
    out: str = "runs/default"
    target_aware: bool = False

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"]["dim_prior"] = list(self.model.dim_prior)
        for key in ("focal", "objects", "depth"):
            d["synth"][key] = list(d["synth"][key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d or {})
        model = dict(d.pop("model", {}) or {})
        train = dict(d.pop("train", {}) or {})
        synth = dict(d.pop("synth", {}) or {})
        for key in ("focal", "objects", "depth"):
            if key in synth:
                synth[key] = tuple(synth[key])
        if "dim_prior" in model:
            model["dim_prior"] = tuple(float(x) for x in model["dim_prior"])
        unknown = set(model) - {f.name for f in dataclasses.fields(ModelConfig)}
        unknown |= set(train) - {f.name for f in dataclasses.fields(TrainConfig)}
        unknown |= set(synth) - {f.name for f in dataclasses.fields(SynthConfig)}
        unknown |= set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(model=ModelConfig(**model), train=TrainConfig(**train), synth=SynthConfig(**synth), **d)
        cfg.model.validate()
        if cfg.train.prompt_mode not in ("box", "point"):
            raise ValueError("prompt_mode must be 'box' or 'point'")
        return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path, encoding="utf-8") as fh:
        return RunConfig.from_dict(yaml.safe_load(fh) or {})


def save_config(cfg: RunConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)

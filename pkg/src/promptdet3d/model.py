"""The full promptable detector: encoders -> aggregator -> camera/depth -> 3D interpreter -> boxes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .aggregator import Aggregator2D
from .camdepth import CameraDepthModule, GeometricEmbedding, tensor_to_intrinsics
from .config import ModelConfig
from .encoders import ConvStem, GeometricEncoder, PromptableEncoder, freeze
from .geometry import Box3D, make_rays_torch
from .interpreter import BoxHeads, Interpreter3D, PromptEncoder, PromptSet, anchors_tensor
from .layers import to_tokens


@dataclass
class ModelOutput:
    k_hat: torch.Tensor  # (B, 4) predicted (fx, fy, cx, cy)
    k_used: torch.Tensor  # (B, 4) intrinsics the boxes were decoded with
    depth: torch.Tensor  # (B, H, W) metric depth
    geometry: GeometricEmbedding
    image_index: torch.Tensor  # (N,) image of each object
    anchors: torch.Tensor  # (N, 2)
    raw: dict[str, torch.Tensor]  # per-object head outputs
    boxes: dict[str, torch.Tensor]  # per-object decoded boxes

    def box_list(self, image: int | None = None) -> list[Box3D]:
        sel = range(len(self.image_index)) if image is None else \
            [i for i in range(len(self.image_index)) if int(self.image_index[i]) == image]
        out = []
        b = {k: v.detach().double().cpu().numpy() for k, v in self.boxes.items()}
        for i in sel:
            out.append(Box3D(b["center"][i], b["dims"][i], b["rotation"][i], float(np.clip(b["score"][i], 0, 1))))
        return out


class PromptDet3D(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None) -> None:
        super().__init__()
        cfg = cfg or ModelConfig()
        cfg.validate()
        self.cfg = cfg
        hw = (cfg.image_height, cfg.image_width)
        self.grid = cfg.grid
        c = cfg.width
        self.promptable_encoder = PromptableEncoder(hw, cfg.patch, c, cfg.blocks, cfg.stages, cfg.heads, cfg.mlp_ratio)
        self.geometric_encoder = GeometricEncoder(hw, cfg.geo_patch, c, cfg.blocks, cfg.stages, cfg.heads, cfg.mlp_ratio)
        self.stem = ConvStem(cfg.patch, c)
        self.aggregator = Aggregator2D(c, cfg.heads, cfg.stages)
        self.camdepth = CameraDepthModule(c, cfg.heads, hw, self.grid, cfg.cam_channels, cfg.she_degree,
                                          cfg.decoder_mlp, cfg.patch, cfg.depth_prior, cfg.focal_prior)
        self.prompt_encoder = PromptEncoder(c)
        self.interpreter = Interpreter3D(c, c + cfg.cam_channels, cfg.heads, cfg.decoder_mlp)
        self.heads = BoxHeads(c, cfg.dim_prior, cfg.depth_prior)

    def encoder_modules(self) -> list[nn.Module]:
        return [self.promptable_encoder, self.geometric_encoder]

    def freeze_encoders(self) -> None:
        for m in self.encoder_modules():
            freeze(m)

    def predicted_rays(self, k_hat: torch.Tensor) -> torch.Tensor:
        """Full-resolution ray maps from predicted intrinsics, (B, H, W, 2)."""
        return make_rays_torch(k_hat, self.cfg.image_width, self.cfg.image_height,
                               self.cfg.image_height, self.cfg.image_width)

    def forward(self, images: torch.Tensor, prompt_sets: list[PromptSet],
                geometric_branch: bool = True, k_override: torch.Tensor | None = None) -> ModelOutput:
        """Run the detector on a batch.

        Images with an intrinsics prompt decode with it; the others use the
        predicted intrinsics. ``geometric_branch=False`` replaces G by zeros
        (ablation). ``k_override`` (B, 4) forces the intrinsics used.
        """
        if len(prompt_sets) != images.shape[0]:
            raise ValueError("one PromptSet per image is required")
        cfg = self.cfg
        dtype = images.dtype
        fs = self.promptable_encoder(images)
        fd = self.geometric_encoder(images)
        fq0 = self.stem(images, fs.grid)
        fused = self.aggregator(fs, fd, fq0)
        k_hat = self.camdepth.predict_intrinsics(fused)
        if k_override is not None:
            k_used = k_override.to(dtype)
        else:
            rows = []
            for b, ps in enumerate(prompt_sets):
                rows.append(ps.intrinsics.as_tensor(dtype) if ps.intrinsics is not None else k_hat[b])
            k_used = torch.stack(rows) if rows else k_hat
        geometry, depth = self.camdepth(fused, k_used)
        geo = geometry.concat()
        if not geometric_branch:
            geo = torch.zeros_like(geo)

        objects = [(b, j, p) for b, ps in enumerate(prompt_sets) for j, p in enumerate(ps.prompts)]
        n = len(objects)
        c = cfg.width
        o3d = torch.zeros(n, c, dtype=dtype)
        if n:
            fs_tok = to_tokens(fs.final)
            geo_tok = to_tokens(geo)
            pe = self.prompt_encoder.pe.grid(*self.grid, dtype=dtype).unsqueeze(0)
            for kind in ("box", "point"):
                idx = [i for i, (_, _, p) in enumerate(objects) if p.kind == kind]
                if not idx:
                    continue
                img_idx = torch.tensor([objects[i][0] for i in idx])
                tokens = self.prompt_encoder([objects[i][2] for i in idx], cfg.image_width, cfg.image_height)
                out = self.interpreter(tokens, fs_tok[img_idx], geo_tok[img_idx], pe)
                o3d = o3d.index_copy(0, torch.tensor(idx), out[:, 0])
        image_index = torch.tensor([b for b, _, _ in objects], dtype=torch.long)
        anchors = anchors_tensor([p for _, _, p in objects], dtype)
        raw = self.heads.raw(o3d)
        boxes = self.heads.decode(raw, anchors, k_used[image_index], cfg.image_width, cfg.image_height)
        return ModelOutput(k_hat, k_used, depth, geometry, image_index, anchors, raw, boxes)

    @torch.no_grad()
    def detect(self, image: torch.Tensor, prompts: PromptSet, geometric_branch: bool = True) -> list[Box3D]:
        """One image (3, H, W) -> one Box3D per prompt."""
        if len(prompts) == 0:
            return []
        out = self(image.unsqueeze(0), [prompts], geometric_branch=geometric_branch)
        return out.box_list()

    @torch.no_grad()
    def predict_intrinsics(self, image: torch.Tensor):
        fs = self.promptable_encoder(image.unsqueeze(0))
        fd = self.geometric_encoder(image.unsqueeze(0))
        fused = self.aggregator(fs, fd, self.stem(image.unsqueeze(0), fs.grid))
        k = self.camdepth.predict_intrinsics(fused)[0]
        return tensor_to_intrinsics(k, self.cfg.image_width, self.cfg.image_height)

"""Toy stand-ins for the two frozen 2D foundation encoders and the conv query stem.

Both encoders are small ViTs with the same interface: four stage outputs
(residual stream after each group of blocks) plus a normalized final map, all
as ``(B, rows/p, cols/p, C)`` feature maps. Loading real pretrained weights is
out of scope; :meth:`ToyViT.load_pretrained` is the seam for it.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .layers import Block, ShapeError


@dataclass
class StageFeatures:
    stages: list[torch.Tensor]
    final: torch.Tensor

    @property
    def grid(self) -> tuple[int, int]:
        return tuple(self.final.shape[1:3])


def check_image(img: torch.Tensor, patch: int) -> None:
    if img.dim() != 4 or img.shape[1] != 3:
        raise ShapeError(f"expected images of shape (B, 3, H, W), got {tuple(img.shape)}")
    if img.shape[2] % patch or img.shape[3] % patch:
        raise ShapeError(f"image size {tuple(img.shape[2:])} not divisible by patch {patch}")


class ToyViT(nn.Module):
    def __init__(self, image_hw: tuple[int, int], patch: int = 8, width: int = 64,
                 blocks: int = 8, stages: int = 4, heads: int = 4, mlp_ratio: float = 2.0) -> None:
        super().__init__()
        if blocks % stages:
            raise ValueError("blocks must split evenly into stages")
        self.patch = patch
        self.per_stage = blocks // stages
        rows, cols = image_hw[0] // patch, image_hw[1] // patch
        self.patch_embed = nn.Conv2d(3, width, kernel_size=patch, stride=patch)
        self.pos_embed = nn.Parameter(torch.zeros(1, rows, cols, width))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        self.blocks = nn.ModuleList(Block(width, heads, mlp_ratio) for _ in range(blocks))
        self.norm = nn.LayerNorm(width)

    def forward(self, img: torch.Tensor) -> StageFeatures:
        check_image(img, self.patch)
        x = self.patch_embed(img).permute(0, 2, 3, 1)
        if x.shape[1:3] != self.pos_embed.shape[1:3]:
            raise ShapeError(f"image grid {tuple(x.shape[1:3])} does not match the configured grid")
        x = x + self.pos_embed
        b, h, w, c = x.shape
        x = x.reshape(b, h * w, c)
        stages = []
        for i, blk in enumerate(self.blocks):
            x = blk(x)
            if (i + 1) % self.per_stage == 0:
                stages.append(x.reshape(b, h, w, c))
        return StageFeatures(stages, self.norm(x).reshape(b, h, w, c))

    def load_pretrained(self, path) -> None:
        raise NotImplementedError("pretrained foundation-encoder weights are not supported at toy scale")


class PromptableEncoder(ToyViT):
    """Low-level pixel features (the SAM role)."""


class GeometricEncoder(ToyViT):
    """High-level geometric features (the depth-pretrained DINO role)."""


class ConvStem(nn.Module):
    """Strided 3x3 convolutions down to the shared feature grid (initial query)."""

    def __init__(self, patch: int = 8, width: int = 64, bias: bool = True) -> None:
        super().__init__()
        n = patch.bit_length() - 1
        if 2 ** n != patch:
            raise ValueError("patch size must be a power of two")
        chans = [3] + [max(width >> (n - 1 - i), 8) for i in range(n)]
        chans[-1] = width
        layers: list[nn.Module] = []
        for i in range(n):
            layers.append(nn.Conv2d(chans[i], chans[i + 1], 3, stride=2, padding=1, bias=bias))
            if i < n - 1:
                layers.append(nn.GELU())
        self.net = nn.Sequential(*layers)
        self.patch = patch

    def forward(self, img: torch.Tensor, grid: tuple[int, int] | None = None) -> torch.Tensor:
        check_image(img, self.patch)
        out = self.net(img).permute(0, 2, 3, 1)
        if grid is not None and tuple(out.shape[1:3]) != tuple(grid):
            raise ShapeError(f"stem grid {tuple(out.shape[1:3])} != encoder grid {tuple(grid)}")
        return out


def resample_to(fmap: torch.Tensor, grid: tuple[int, int]) -> torch.Tensor:
    """Bilinear resampling of a (B, H, W, C) map onto another grid."""
    if tuple(fmap.shape[1:3]) == tuple(grid):
        return fmap
    x = F.interpolate(fmap.permute(0, 3, 1, 2), size=grid, mode="bilinear", align_corners=False)
    return x.permute(0, 2, 3, 1)


def freeze(module: nn.Module) -> None:
    for p in module.parameters():
        p.requires_grad_(False)

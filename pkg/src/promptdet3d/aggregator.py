"""Hierarchical gated fusion of promptable and geometric encoder stages."""
from __future__ import annotations

import torch
from torch import nn

from .encoders import StageFeatures, resample_to
from .layers import Attention, ShapeError, check_same_shape, to_map, to_tokens


def gate_fuse(fs: torch.Tensor, fd: torch.Tensor, alpha) -> torch.Tensor:
    """``alpha * fs + (1 - alpha) * fd``; alpha is not clamped."""
    check_same_shape(fs, fd)
    return alpha * fs + (1 - alpha) * fd


class AlignmentUnit(nn.Module):
    """Query features cross-attend to the fused map; the result is added back and normalized.

    No positional encoding is used inside the unit.
    """

    def __init__(self, dim: int, heads: int) -> None:
        super().__init__()
        self.attn = Attention(dim, heads)
        self.norm = nn.LayerNorm(dim)

    def forward(self, fq_prev: torch.Tensor, fused: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        check_same_shape(fq_prev, fused)
        _, rows, cols, _ = fused.shape
        kv = to_tokens(fused)
        fq = to_map(self.attn(to_tokens(fq_prev), kv, kv), rows, cols)
        return fq, self.norm(fused + fq)


class Aggregator2D(nn.Module):
    def __init__(self, dim: int, heads: int, stages: int = 4) -> None:
        super().__init__()
        self.gates = nn.Parameter(torch.full((stages,), 0.5))
        self.units = nn.ModuleList(AlignmentUnit(dim, heads) for _ in range(stages))

    def forward(self, fs: StageFeatures, fd: StageFeatures, fq0: torch.Tensor) -> list[torch.Tensor]:
        if len(fs.stages) != len(self.units) or len(fd.stages) != len(self.units):
            raise ShapeError("stage count does not match the number of alignment units")
        grid = fs.grid
        if tuple(fq0.shape[1:3]) != tuple(grid):
            raise ShapeError(f"query grid {tuple(fq0.shape[1:3])} != promptable grid {tuple(grid)}")
        fq = fq0
        fused_hat = []
        for i, unit in enumerate(self.units):
            fused = gate_fuse(fs.stages[i], resample_to(fd.stages[i], grid), self.gates[i])
            fq, out = unit(fq, fused)
            fused_hat.append(out)
        return fused_hat

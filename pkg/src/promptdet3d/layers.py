"""Shared transformer building blocks (token layout: batch, tokens, channels)."""
from __future__ import annotations

import math

import torch
from torch import nn


class ShapeError(ValueError):
    """Feature maps or tokens with incompatible shapes."""


class Attention(nn.Module):
    """Multi-head attention with separate q/k/v/out projections."""

    def __init__(self, dim: int, heads: int, kv_dim: int | None = None) -> None:
        super().__init__()
        if dim % heads:
            raise ShapeError(f"dim {dim} not divisible by heads {heads}")
        kv_dim = kv_dim or dim
        self.heads = heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(kv_dim, dim)
        self.v_proj = nn.Linear(kv_dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, n, c = x.shape
        return x.reshape(b, n, self.heads, c // self.heads).transpose(1, 2)

    def forward(self, q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        if q.shape[0] != k.shape[0] or k.shape[:2] != v.shape[:2]:
            raise ShapeError(f"attention shapes q={tuple(q.shape)} k={tuple(k.shape)} v={tuple(v.shape)}")
        q = self._split(self.q_proj(q))
        k = self._split(self.k_proj(k))
        v = self._split(self.v_proj(v))
        attn = (q @ k.transpose(-1, -2)) / math.sqrt(q.shape[-1])
        out = attn.softmax(dim=-1) @ v
        b, h, n, d = out.shape
        return self.out_proj(out.transpose(1, 2).reshape(b, n, h * d))


class MLP(nn.Module):
    def __init__(self, dim: int, hidden: int, out_dim: int | None = None) -> None:
        super().__init__()
        self.lin1 = nn.Linear(dim, hidden)
        self.lin2 = nn.Linear(hidden, out_dim or dim)
        self.act = nn.GELU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.lin2(self.act(self.lin1(x)))


class Block(nn.Module):
    """Pre-norm self-attention transformer block."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float = 2.0) -> None:
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = MLP(dim, int(dim * mlp_ratio))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h, h)
        return x + self.mlp(self.norm2(x))


def to_tokens(fmap: torch.Tensor) -> torch.Tensor:
    """(B, H, W, C) -> (B, H*W, C)."""
    b, h, w, c = fmap.shape
    return fmap.reshape(b, h * w, c)


def to_map(tokens: torch.Tensor, rows: int, cols: int) -> torch.Tensor:
    b, n, c = tokens.shape
    if n != rows * cols:
        raise ShapeError(f"{n} tokens cannot form a {rows}x{cols} grid")
    return tokens.reshape(b, rows, cols, c)


def check_same_shape(*maps: torch.Tensor) -> None:
    shapes = {tuple(m.shape) for m in maps}
    if len(shapes) != 1:
        raise ShapeError(f"feature maps differ in shape: {sorted(shapes)}")

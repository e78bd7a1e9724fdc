"""Prompt encoding, two-way/geometric decoder with zero-embedding mapping, and 3D box heads."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .geometry import Intrinsics, rot6d_to_matrix_torch
from .layers import MLP, Attention, ShapeError


class PromptError(ValueError):
    """Prompt outside the image or malformed."""


@dataclass(frozen=True)
class Prompt:
    kind: str  # "box" or "point"
    coords: tuple[float, ...]  # (x1, y1, x2, y2) or (u, v), pixels

    @classmethod
    def box(cls, x1, y1, x2, y2) -> "Prompt":
        return cls("box", (float(x1), float(y1), float(x2), float(y2)))

    @classmethod
    def point(cls, u, v) -> "Prompt":
        return cls("point", (float(u), float(v)))

    @property
    def anchor(self) -> tuple[float, float]:
        if self.kind == "box":
            x1, y1, x2, y2 = self.coords
            return 0.5 * (x1 + x2), 0.5 * (y1 + y2)
        return self.coords

    @property
    def num_tokens(self) -> int:
        return 2 if self.kind == "box" else 1


@dataclass
class PromptSet:
    prompts: list[Prompt]
    width: int
    height: int
    intrinsics: Intrinsics | None = None
    categories: list[str] = field(default_factory=list)

    def __post_init__(self):
        for i, p in enumerate(self.prompts):
            if p.kind == "box":
                x1, y1, x2, y2 = p.coords
                if not (x1 < x2 and y1 < y2):
                    raise PromptError(f"prompt {i}: box corners not ordered: {p.coords}")
                if x1 < 0 or y1 < 0 or x2 > self.width or y2 > self.height:
                    raise PromptError(f"prompt {i}: box {p.coords} outside {self.width}x{self.height}")
            elif p.kind == "point":
                u, v = p.coords
                if not (0 <= u <= self.width and 0 <= v <= self.height):
                    raise PromptError(f"prompt {i}: point {p.coords} outside the image")
            else:
                raise PromptError(f"prompt {i}: unknown kind {p.kind!r}")

    def __len__(self) -> int:
        return len(self.prompts)


class PositionEmbeddingRandom(nn.Module):
    """Random Fourier features of normalized (x, y) in [0, 1]; frozen at init."""

    def __init__(self, dim: int, scale: float = 1.0) -> None:
        super().__init__()
        self.register_buffer("gaussian", scale * torch.randn(2, dim // 2))

    def forward(self, coords: torch.Tensor) -> torch.Tensor:
        c = (2 * coords - 1) @ self.gaussian.to(coords.dtype)
        c = 2 * math.pi * c
        return torch.cat([torch.sin(c), torch.cos(c)], dim=-1)

    def grid(self, rows: int, cols: int, dtype=torch.float32) -> torch.Tensor:
        y = (torch.arange(rows, dtype=dtype) + 0.5) / rows
        x = (torch.arange(cols, dtype=dtype) + 0.5) / cols
        yy, xx = torch.meshgrid(y, x, indexing="ij")
        return self(torch.stack([xx, yy], dim=-1)).reshape(rows * cols, -1)


class PromptEncoder(nn.Module):
    def __init__(self, dim: int) -> None:
        super().__init__()
        self.pe = PositionEmbeddingRandom(dim)
        self.corner_embed = nn.Parameter(torch.randn(2, dim) * 0.02)
        self.point_embed = nn.Parameter(torch.randn(1, dim) * 0.02)

    def forward(self, prompts: list[Prompt], width: int, height: int) -> torch.Tensor:
        """Tokens for prompts of one kind: (N, 2, C) for boxes, (N, 1, C) for points."""
        kinds = {p.kind for p in prompts}
        if len(kinds) != 1:
            raise PromptError("encode prompts of a single kind at a time")
        dtype = self.corner_embed.dtype
        scale = torch.tensor([width, height], dtype=dtype)
        if kinds == {"box"}:
            pts = torch.tensor([p.coords for p in prompts], dtype=dtype).view(-1, 2, 2) / scale
            return self.pe(pts) + self.corner_embed
        pts = torch.tensor([p.coords for p in prompts], dtype=dtype).view(-1, 1, 2) / scale
        return self.pe(pts) + self.point_embed


class ZEM(nn.Module):
    """Zero-initialized 1x1 convolution (a per-cell linear map over channels)."""

    def __init__(self, in_channels: int, out_channels: int) -> None:
        super().__init__()
        self.in_channels = in_channels
        self.proj = nn.Linear(in_channels, out_channels)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_channels:
            raise ShapeError(f"ZEM expects {self.in_channels} channels, got {x.shape[-1]}")
        return self.proj(x)


class TwoWayBlock(nn.Module):
    """Token self-attention, token->map and map->token cross-attention, token MLP.

    Pre-norm residual sublayers. ``qpe`` is added to token queries/keys and
    ``kpe`` to map queries/keys; values never carry positional encodings.
    """

    def __init__(self, dim: int, heads: int, mlp_dim: int, self_attn: bool = True) -> None:
        super().__init__()
        self.use_self_attn = self_attn
        if self_attn:
            self.norm_self = nn.LayerNorm(dim)
            self.self_attn = Attention(dim, heads)
        self.norm_t2i_q = nn.LayerNorm(dim)
        self.norm_t2i_k = nn.LayerNorm(dim)
        self.cross_t2i = Attention(dim, heads)
        self.norm_mlp = nn.LayerNorm(dim)
        self.mlp = MLP(dim, mlp_dim)
        self.norm_i2t_q = nn.LayerNorm(dim)
        self.norm_i2t_k = nn.LayerNorm(dim)
        self.cross_i2t = Attention(dim, heads)

    def forward(self, q: torch.Tensor, k: torch.Tensor, qpe: torch.Tensor, kpe: torch.Tensor):
        if q.shape[-1] != k.shape[-1] or q.shape[0] != k.shape[0]:
            raise ShapeError(f"token shape {tuple(q.shape)} incompatible with map shape {tuple(k.shape)}")
        if self.use_self_attn:
            h = self.norm_self(q)
            q = q + self.self_attn(h + qpe, h + qpe, h)
        hq, hk = self.norm_t2i_q(q), self.norm_t2i_k(k)
        q = q + self.cross_t2i(hq + qpe, hk + kpe, hk)
        q = q + self.mlp(self.norm_mlp(q))
        hq, hk = self.norm_i2t_q(q), self.norm_i2t_k(k)
        k = k + self.cross_i2t(hk + kpe, hq + qpe, hq)
        return q, k


class Interpreter3D(nn.Module):
    """Two-way layer on F_s, geometric layer on ZEM(G) + F_s, two-way layer on ZEM(G') + F_s'.

    All inputs are per object: tokens (N, T, C), maps (N, HW, C). The object
    axis is a batch axis, so objects never attend to each other.
    """

    def __init__(self, dim: int, geo_channels: int, heads: int, mlp_dim: int) -> None:
        super().__init__()
        self.token_3d = nn.Parameter(torch.randn(1, 1, dim) * 0.02)
        self.two_way1 = TwoWayBlock(dim, heads, mlp_dim)
        self.zem_g = ZEM(geo_channels, dim)
        self.geo = TwoWayBlock(dim, heads, mlp_dim)
        self.zem_g2 = ZEM(dim, dim)
        self.two_way2 = TwoWayBlock(dim, heads, mlp_dim)
        self.norm_final_q = nn.LayerNorm(dim)
        self.norm_final_k = nn.LayerNorm(dim)
        self.final_attn = Attention(dim, heads)
        self.norm_out = nn.LayerNorm(dim)

    def build_queries(self, prompt_tokens: torch.Tensor) -> torch.Tensor:
        t3d = self.token_3d.to(prompt_tokens.dtype).expand(prompt_tokens.shape[0], -1, -1)
        return torch.cat([t3d, prompt_tokens], dim=1)

    def geo_block(self, q, geo, fs, qpe, kpe):
        """Geometric transformer: key/value = ZEM(G) + F_s. Returns (tokens, G')."""
        return self.geo(q, self.zem_g(geo) + fs, qpe, kpe)

    def forward(self, prompt_tokens: torch.Tensor, fs: torch.Tensor, geo: torch.Tensor, pe: torch.Tensor):
        q0 = self.build_queries(prompt_tokens)
        q, fs1 = self.two_way1(q0, fs, q0, pe)
        q, g1 = self.geo_block(q, geo, fs, q0, pe)
        q, k = self.two_way2(q, self.zem_g2(g1) + fs1, q0, pe)
        hq, hk = self.norm_final_q(q), self.norm_final_k(k)
        q = self.norm_out(q + self.final_attn(hq + q0, hk + pe, hk))
        return q  # O; O_3D = q[:, 0]


ROT6D_IDENTITY = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)


class BoxHeads(nn.Module):
    """Separate MLP heads on O_3D: 2D-center offset, log-depth, log-dims, 6D rotation, score."""

    def __init__(self, dim: int, dim_prior=(1.0, 1.0, 1.0), depth_prior: float = 5.0) -> None:
        super().__init__()
        self.offset = MLP(dim, dim, 2)
        self.depth = MLP(dim, dim, 1)
        self.dims = MLP(dim, dim, 3)
        self.rot = MLP(dim, dim, 6)
        self.score = MLP(dim, dim, 1)
        self.register_buffer("log_dim_prior", torch.log(torch.tensor(dim_prior, dtype=torch.float32)))
        self.log_depth_prior = math.log(depth_prior)
        for head in (self.offset, self.depth, self.dims, self.rot):
            nn.init.normal_(head.lin2.weight, std=1e-3)
            nn.init.zeros_(head.lin2.bias)
        with torch.no_grad():
            self.rot.lin2.bias.copy_(torch.tensor(ROT6D_IDENTITY))

    def raw(self, o3d: torch.Tensor) -> dict[str, torch.Tensor]:
        return {
            "offset": self.offset(o3d),
            "log_depth": self.depth(o3d)[:, 0],
            "log_dims": self.dims(o3d),
            "rot6d": self.rot(o3d),
            "score_logit": self.score(o3d)[:, 0],
        }

    def decode(self, raw: dict[str, torch.Tensor], anchors: torch.Tensor, k: torch.Tensor,
               width: int, height: int) -> dict[str, torch.Tensor]:
        """Turn raw head outputs into boxes. anchors (N, 2) px, k (N, 4) = (fx, fy, cx, cy)."""
        scale = torch.tensor([width, height], dtype=anchors.dtype)
        center2d = anchors + raw["offset"] * scale
        z = torch.exp(raw["log_depth"] + self.log_depth_prior)
        x = (center2d[:, 0] - k[:, 2]) / k[:, 0] * z
        y = (center2d[:, 1] - k[:, 3]) / k[:, 1] * z
        return {
            "center2d": center2d,
            "center": torch.stack([x, y, z], dim=-1),
            "dims": torch.exp(raw["log_dims"] + self.log_dim_prior.to(raw["log_dims"].dtype)),
            "rotation": rot6d_to_matrix_torch(raw["rot6d"]),
            "score": torch.sigmoid(raw["score_logit"]),
        }


def anchors_tensor(prompts: list[Prompt], dtype=torch.float32) -> torch.Tensor:
    return torch.tensor(np.array([p.anchor for p in prompts], dtype=np.float64).reshape(-1, 2), dtype=dtype)

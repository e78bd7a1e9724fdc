"""Camera module (intrinsics head, ray harmonic embedding) and camera-conditioned depth module."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .geometry import Intrinsics, make_rays_torch
from .layers import MLP, Attention, ShapeError, to_map, to_tokens


@dataclass
class GeometricEmbedding:
    depth: torch.Tensor  # D|C, (B, H, W, C)
    camera: torch.Tensor  # C, (B, H, W, C_cam)

    def concat(self) -> torch.Tensor:
        return torch.cat([self.depth, self.camera], dim=-1)


def real_spherical_harmonics(dirs: torch.Tensor, degree: int) -> torch.Tensor:
    """Orthonormal real spherical harmonics of unit vectors, (..., 3) -> (..., (degree+1)**2).

    Ordered by degree l, then m = -l..l. Uses the Condon-Shortley phase and
    the Cartesian form: Y_lm ~ P_l^m(z)/sin^m * Re/Im (x + iy)^m, with the
    associated Legendre factor built by the standard three-term recurrence.
    """
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    # (x + iy)^m as (re, im) pairs
    re = [torch.ones_like(x)]
    im = [torch.zeros_like(x)]
    for _ in range(degree):
        r, i = re[-1], im[-1]
        re.append(r * x - i * y)
        im.append(r * y + i * x)
    # pbar[l][m] = P_l^m(z) / sin(theta)^m
    pbar: dict[tuple[int, int], torch.Tensor] = {}
    for m in range(degree + 1):
        pmm = (-1) ** m * math.prod(range(1, 2 * m, 2)) * torch.ones_like(z)
        pbar[(m, m)] = pmm
        if m + 1 <= degree:
            pbar[(m + 1, m)] = z * (2 * m + 1) * pmm
        for l in range(m + 2, degree + 1):
            pbar[(l, m)] = ((2 * l - 1) * z * pbar[(l - 1, m)] - (l + m - 1) * pbar[(l - 2, m)]) / (l - m)
    out = []
    for l in range(degree + 1):
        for m in range(-l, l + 1):
            am = abs(m)
            norm = math.sqrt((2 * l + 1) / (4 * math.pi) * math.factorial(l - am) / math.factorial(l + am))
            if m == 0:
                out.append(norm * pbar[(l, 0)])
            elif m > 0:
                out.append(math.sqrt(2) * norm * pbar[(l, am)] * re[am])
            else:
                out.append(math.sqrt(2) * norm * pbar[(l, am)] * im[am])
    return torch.stack(out, dim=-1)


def rays_to_directions(rays: torch.Tensor) -> torch.Tensor:
    """Lift (r_x, r_y) rays to unit 3-vectors (r_x, r_y, 1) / norm."""
    d = torch.cat([rays, torch.ones_like(rays[..., :1])], dim=-1)
    return d / d.norm(dim=-1, keepdim=True)


class SHEncoder(nn.Module):
    """Harmonic embedding of a ray map, linearly projected to camera channels."""

    def __init__(self, degree: int = 3, channels: int = 32) -> None:
        super().__init__()
        self.degree = degree
        self.proj = nn.Linear((degree + 1) ** 2, channels)

    def forward(self, rays: torch.Tensor) -> torch.Tensor:
        if rays.shape[-1] != 2 or not torch.isfinite(rays).all():
            raise ShapeError("ray map must be finite with two components per cell")
        return self.proj(real_spherical_harmonics(rays_to_directions(rays), self.degree))


class CameraHead(nn.Module):
    """Learned queries cross-attend to all fused stages and regress (fx, fy, cx, cy).

    fx, fy = focal_prior * width * exp(raw); cx, cy = sigmoid(raw) * (width, height).
    """

    def __init__(self, dim: int, heads: int, image_hw: tuple[int, int], focal_prior: float = 1.0) -> None:
        super().__init__()
        self.queries = nn.Parameter(torch.randn(1, 4, dim) * 0.02)
        self.norm = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.mlp = MLP(dim, dim, 1)
        nn.init.zeros_(self.mlp.lin2.weight)
        nn.init.zeros_(self.mlp.lin2.bias)
        self.height, self.width = image_hw
        self.focal_prior = focal_prior

    def forward(self, fused: list[torch.Tensor]) -> torch.Tensor:
        kv = self.norm(torch.cat([to_tokens(f) for f in fused], dim=1))
        q = self.queries.expand(kv.shape[0], -1, -1)
        raw = self.mlp(q + self.attn(q, kv, kv)).squeeze(-1)
        f0 = self.focal_prior * self.width
        fx = f0 * torch.exp(raw[:, 0])
        fy = f0 * torch.exp(raw[:, 1])
        cx = torch.sigmoid(raw[:, 2]) * self.width
        cy = torch.sigmoid(raw[:, 3]) * self.height
        return torch.stack([fx, fy, cx, cy], dim=-1)


def tensor_to_intrinsics(k: torch.Tensor, width: int, height: int) -> Intrinsics:
    fx, fy, cx, cy = (float(v) for v in k.detach().cpu().double())
    return Intrinsics(fx, fy, cx, cy, width, height)


class DepthModule(nn.Module):
    """D|C: a projection of the deepest fused map attends to the camera embedding.

    Residual pre-norm attention + MLP sublayers.
    """

    def __init__(self, dim: int, cam_channels: int, heads: int, mlp_dim: int) -> None:
        super().__init__()
        self.init_proj = nn.Linear(dim, dim)
        self.norm_q = nn.LayerNorm(dim)
        self.norm_kv = nn.LayerNorm(cam_channels)
        self.attn = Attention(dim, heads, kv_dim=cam_channels)
        self.norm_mlp = nn.LayerNorm(dim)
        self.mlp = MLP(dim, mlp_dim)

    def forward(self, deepest: torch.Tensor, camera: torch.Tensor) -> torch.Tensor:
        if deepest.shape[:3] != camera.shape[:3]:
            raise ShapeError(f"depth grid {tuple(deepest.shape[:3])} != camera grid {tuple(camera.shape[:3])}")
        _, rows, cols, _ = deepest.shape
        d = self.init_proj(to_tokens(deepest))
        kv = self.norm_kv(to_tokens(camera))
        x = d + self.attn(self.norm_q(d), kv, kv)
        x = x + self.mlp(self.norm_mlp(x))
        return to_map(x, rows, cols)


class DepthHead(nn.Module):
    """Upsampling head: x2 bilinear + conv per stage, log-depth output, exp for positivity."""

    def __init__(self, dim: int, patch: int, depth_prior: float = 5.0) -> None:
        super().__init__()
        n = patch.bit_length() - 1
        chans = [dim] + [max(dim >> (i + 1), 8) for i in range(n)]
        self.ups = nn.ModuleList(nn.Conv2d(chans[i], chans[i + 1], 3, padding=1) for i in range(n))
        self.out = nn.Conv2d(chans[-1], 1, 1)
        nn.init.normal_(self.out.weight, std=1e-3)
        nn.init.constant_(self.out.bias, math.log(depth_prior))

    def forward(self, dc: torch.Tensor) -> torch.Tensor:
        x = dc.permute(0, 3, 1, 2)
        for conv in self.ups:
            x = F.gelu(conv(F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)))
        return torch.exp(self.out(x)[:, 0])


class CameraDepthModule(nn.Module):
    def __init__(self, dim: int, heads: int, image_hw: tuple[int, int], grid: tuple[int, int],
                 cam_channels: int = 32, she_degree: int = 3, mlp_dim: int = 128,
                 patch: int = 8, depth_prior: float = 5.0, focal_prior: float = 1.0) -> None:
        super().__init__()
        self.image_hw = image_hw
        self.grid = grid
        self.camera_head = CameraHead(dim, heads, image_hw, focal_prior)
        self.she = SHEncoder(she_degree, cam_channels)
        self.depth_module = DepthModule(dim, cam_channels, heads, mlp_dim)
        self.depth_head = DepthHead(dim, patch, depth_prior)

    def predict_intrinsics(self, fused: list[torch.Tensor]) -> torch.Tensor:
        return self.camera_head(fused)

    def camera_embedding(self, k: torch.Tensor) -> torch.Tensor:
        height, width = self.image_hw
        rays = make_rays_torch(k, width, height, *self.grid)
        return self.she(rays)

    def forward(self, fused: list[torch.Tensor], k: torch.Tensor) -> tuple[GeometricEmbedding, torch.Tensor]:
        camera = self.camera_embedding(k)
        dc = self.depth_module(fused[-1], camera)
        return GeometricEmbedding(dc, camera), self.depth_head(dc)

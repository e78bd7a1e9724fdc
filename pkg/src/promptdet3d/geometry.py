"""Metric 3D geometry: intrinsics, cuboids, rotations, IoU3D, rays, projection.

Conventions: camera frame with x right, y down, z forward. A cuboid's eight
corners are listed in sign-lattice order: corner ``i`` has local offset
``(sx*w/2, sy*h/2, sz*l/2)`` with ``sx, sy, sz = 2*bit - 1`` for the bits of
``i`` read as ``(b2, b1, b0)``; i.e. ``(-,-,-), (-,-,+), (-,+,-), ... (+,+,+)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .kernels import box_intersection_volume

DEGENERATE_DIM = 1e-6

SIGN_LATTICE = np.array(
    [[((i >> 2) & 1) * 2 - 1, ((i >> 1) & 1) * 2 - 1, (i & 1) * 2 - 1] for i in range(8)],
    dtype=np.float64,
)


class GeometryError(ValueError):
    """Rejected geometric input (invalid intrinsics, degenerate rotation, ...)."""


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(np.isfinite(v) for v in vals):
            raise GeometryError(f"non-finite intrinsics {vals}")
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise GeometryError("image size must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise GeometryError(f"principal point ({self.cx}, {self.cy}) outside the image")

    @classmethod
    def from_matrix(cls, K, width: int, height: int) -> "Intrinsics":
        K = np.asarray(K, dtype=np.float64).reshape(3, 3)
        if abs(K[0, 1]) > 1e-12:
            raise GeometryError("non-zero skew is not supported")
        return cls(float(K[0, 0]), float(K[1, 1]), float(K[0, 2]), float(K[1, 2]), int(width), int(height))

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, s: float) -> "Intrinsics":
        """Zoomed camera: every pixel quantity multiplied by ``s``."""
        return Intrinsics(self.fx * s, self.fy * s, self.cx * s, self.cy * s,
                          int(round(self.width * s)), int(round(self.height * s)))

    def as_tensor(self, dtype=torch.float32) -> torch.Tensor:
        return torch.tensor([self.fx, self.fy, self.cx, self.cy], dtype=dtype)


@dataclass(eq=False)
class Box3D:
    center: np.ndarray
    dims: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    score: float = 1.0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.dims = np.asarray(self.dims, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.score = float(self.score)
        if np.any(self.dims <= 0):
            raise GeometryError(f"box dims must be positive, got {self.dims}")
        R = self.rotation
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-6 or abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise GeometryError("rotation is not a proper orthonormal matrix")
        if not 0.0 <= self.score <= 1.0:
            raise GeometryError(f"score {self.score} outside [0, 1]")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Box3D):
            return NotImplemented
        return (np.array_equal(self.center, other.center) and np.array_equal(self.dims, other.dims)
                and np.array_equal(self.rotation, other.rotation) and self.score == other.score)

    @property
    def volume(self) -> float:
        return float(np.prod(self.dims))

    def transformed(self, R0, t0) -> "Box3D":
        """Apply the rigid transform x -> R0 x + t0."""
        R0 = np.asarray(R0, dtype=np.float64)
        return Box3D(R0 @ self.center + np.asarray(t0, dtype=np.float64), self.dims,
                     R0 @ self.rotation, self.score)

    def to_dict(self) -> dict:
        return {
            "center": [float(x) for x in self.center],
            "dims": [float(x) for x in self.dims],
            "rotation": [[float(x) for x in row] for row in self.rotation],
            "score": self.score,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Box3D":
        return cls(d["center"], d["dims"], d.get("rotation", np.eye(3)), d.get("score", 1.0))


def rotation_y(angle: float) -> np.ndarray:
    """Yaw about the camera's (downward) y axis."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


# --- rays -----------------------------------------------------------------

def pixel_rays(K: Intrinsics, u, v):
    """Normalized ray ``(r1/r3, r2/r3)`` of ``K^-1 [u, v, 1]`` at pixel coords."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy], axis=-1)


def grid_pixel_centers(width: float, height: float, rows: int, cols: int):
    """Pixel coordinates of grid-cell centers, shape (rows, cols) each."""
    u = (np.arange(cols) + 0.5) * (width / cols)
    v = (np.arange(rows) + 0.5) * (height / rows)
    return np.meshgrid(u, v)


def make_rays(K: Intrinsics, rows: int, cols: int) -> np.ndarray:
    """Ray map of shape (rows, cols, 2) sampled at grid-cell centers."""
    if not isinstance(K, Intrinsics):
        raise GeometryError("make_rays expects an Intrinsics instance")
    if rows < 1 or cols < 1:
        raise GeometryError("ray grid must have at least one cell")
    uu, vv = grid_pixel_centers(K.width, K.height, rows, cols)
    return pixel_rays(K, uu, vv)


def make_rays_torch(k: torch.Tensor, width: float, height: float, rows: int, cols: int) -> torch.Tensor:
    """Differentiable ray maps for a batch of ``(fx, fy, cx, cy)`` rows.

    ``k`` has shape (B, 4); returns (B, rows, cols, 2).
    """
    u = (torch.arange(cols, dtype=k.dtype) + 0.5) * (width / cols)
    v = (torch.arange(rows, dtype=k.dtype) + 0.5) * (height / rows)
    fx, fy, cx, cy = (k[:, i].view(-1, 1, 1) for i in range(4))
    rx = (u.view(1, 1, cols) - cx) / fx
    ry = (v.view(1, rows, 1) - cy) / fy
    return torch.stack([rx.expand(-1, rows, cols), ry.expand(-1, rows, cols)], dim=-1)


# --- rotations ------------------------------------------------------------

def rot6d_to_matrix(v) -> np.ndarray:
    """Gram-Schmidt on two 3-vectors; columns ``(a, b, a x b)``."""
    v = np.asarray(v, dtype=np.float64).reshape(6)
    a, b = v[:3], v[3:]
    na = np.linalg.norm(a)
    if na < 1e-12:
        raise GeometryError("first rotation vector is zero")
    a = a / na
    b = b - a * (a @ b)
    nb = np.linalg.norm(b)
    if nb < 1e-12 * max(1.0, np.linalg.norm(v[3:])):
        raise GeometryError("rotation vectors are parallel")
    b = b / nb
    return np.stack([a, b, np.cross(a, b)], axis=1)


def rot6d_to_matrix_torch(v: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    """Batched torch variant of :func:`rot6d_to_matrix`, (..., 6) -> (..., 3, 3)."""
    a, b = v[..., :3], v[..., 3:]
    a = a / a.norm(dim=-1, keepdim=True).clamp_min(eps)
    b = b - a * (a * b).sum(-1, keepdim=True)
    b = b / b.norm(dim=-1, keepdim=True).clamp_min(eps)
    c = torch.cross(a, b, dim=-1)
    return torch.stack([a, b, c], dim=-1)


def matrix_to_rot6d(R) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    return np.concatenate([R[:, 0], R[:, 1]])


# --- cuboids --------------------------------------------------------------

def box3d_corners(b: Box3D) -> np.ndarray:
    """(8, 3) corners in sign-lattice order."""
    return b.center + (SIGN_LATTICE * (0.5 * b.dims)) @ b.rotation.T


def cuboid_corners_torch(dims: torch.Tensor, R: torch.Tensor, center: torch.Tensor | None = None) -> torch.Tensor:
    """Batched corners: dims (..., 3), R (..., 3, 3) -> (..., 8, 3)."""
    lattice = torch.as_tensor(SIGN_LATTICE, dtype=dims.dtype)
    local = lattice * (0.5 * dims.unsqueeze(-2))
    pts = local @ R.transpose(-1, -2)
    if center is not None:
        pts = pts + center.unsqueeze(-2)
    return pts


def _is_degenerate(b: Box3D) -> bool:
    return bool(np.any(b.dims <= DEGENERATE_DIM))


def intersection_volume(a: Box3D, b: Box3D) -> float:
    if _is_degenerate(a) or _is_degenerate(b):
        return 0.0
    return float(box_intersection_volume(a.center, a.rotation, a.dims, b.center, b.rotation, b.dims))


def iou3d(a: Box3D, b: Box3D) -> float:
    """Exact volumetric IoU of two oriented cuboids.

    The result is symmetrized (A clipped by B and B clipped by A are
    averaged) so that ``iou3d(a, b) == iou3d(b, a)`` holds exactly.
    """
    if _is_degenerate(a) or _is_degenerate(b):
        return 0.0
    # cheap reject on bounding spheres
    ra = 0.5 * np.linalg.norm(a.dims)
    rb = 0.5 * np.linalg.norm(b.dims)
    if np.linalg.norm(a.center - b.center) >= ra + rb:
        return 0.0
    inter_ab = box_intersection_volume(a.center, a.rotation, a.dims, b.center, b.rotation, b.dims)
    inter_ba = box_intersection_volume(b.center, b.rotation, b.dims, a.center, a.rotation, a.dims)
    va, vb = a.volume, b.volume
    inter = min(0.5 * (inter_ab + inter_ba), va, vb)
    # snap round-off when one box contains the other
    if min(va, vb) - inter <= 1e-12 * min(va, vb):
        inter = min(va, vb)
    union = va + vb - inter
    if union <= 0.0:
        return 0.0
    return float(min(max(inter / union, 0.0), 1.0))


def iou3d_matrix(preds: list[Box3D], gts: list[Box3D]) -> np.ndarray:
    out = np.zeros((len(preds), len(gts)))
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            out[i, j] = iou3d(p, g)
    return out


def points_in_box(points: np.ndarray, b: Box3D, tol: float = 1e-9) -> np.ndarray:
    local = (points - b.center) @ b.rotation
    return np.all(np.abs(local) <= 0.5 * b.dims + tol, axis=-1)


def _sample_in_box(b: Box3D, n: int, rng: np.random.Generator) -> np.ndarray:
    local = (rng.random((n, 3)) - 0.5) * b.dims
    return b.center + local @ b.rotation.T


def iou3d_mc(a: Box3D, b: Box3D, samples: int = 200_000, seed=0) -> float:
    """Monte-Carlo IoU: uniform samples in each box, membership in the other.

    Independent of the clipping code path; used as its oracle.
    """
    if samples < 1:
        raise GeometryError("samples must be >= 1")
    if _is_degenerate(a) or _is_degenerate(b):
        return 0.0
    rng = np.random.default_rng(seed)
    n_a = (samples + 1) // 2
    n_b = max(samples - n_a, 1)
    frac_a = points_in_box(_sample_in_box(a, n_a, rng), b).mean()
    frac_b = points_in_box(_sample_in_box(b, n_b, rng), a).mean()
    va, vb = a.volume, b.volume
    inter = 0.5 * (frac_a * va + frac_b * vb)
    return float(inter / (va + vb - inter))


# --- projection -----------------------------------------------------------

class UnprojectableBox(GeometryError):
    """A corner lies at or behind the camera plane."""


def project_points(K: Intrinsics, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    if np.any(pts[..., 2] <= 0):
        raise UnprojectableBox("point with z <= 0 cannot be projected")
    u = K.fx * pts[..., 0] / pts[..., 2] + K.cx
    v = K.fy * pts[..., 1] / pts[..., 2] + K.cy
    return np.stack([u, v], axis=-1)


def project_box(K: Intrinsics, b: Box3D) -> np.ndarray:
    """(8, 2) pixel coordinates of the box corners."""
    return project_points(K, box3d_corners(b))


def backproject(K: Intrinsics, u: float, v: float, z: float) -> np.ndarray:
    return np.array([(u - K.cx) / K.fx * z, (v - K.cy) / K.fy * z, z])

"""Training losses: SILog depth, dense-ray camera loss, and the detection terms.

Everything is plain torch so autograd supplies the gradients; the finite
difference checks in the test suite pin them down.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .geometry import cuboid_corners_torch

SILOG_LAMBDA = 0.15
RAY_LAMBDA = 1.0


def _variance_log_loss(delta: torch.Tensor, lam: float) -> torch.Tensor:
    # mean(d^2) - lam*mean(d)^2 rewritten around the mean for round-off stability
    mean = delta.mean()
    val = ((delta - mean) ** 2).mean() + (1.0 - lam) * mean * mean
    # sqrt has an infinite slope at 0; the minimum is reached there, so use a zero gradient
    if float(val.detach()) <= 1e-30:
        return val * 0.0
    return torch.sqrt(val)


def silog_depth(pred: torch.Tensor, gt: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """sqrt(mean(d^2) - 0.15 mean(d)^2) with d = log pred - log gt over valid pixels.

    Samples without valid pixels contribute a zero with no gradient path.
    """
    if mask is None:
        mask = gt > 0
    mask = mask & (gt > 0)
    if not bool(mask.any()):
        return pred.sum() * 0.0
    delta = torch.log(pred[mask]) - torch.log(gt[mask])
    return _variance_log_loss(delta, SILOG_LAMBDA)


def camera_ray_loss(pred_rays: torch.Tensor, gt_rays: torch.Tensor) -> torch.Tensor:
    """Per ray component sqrt(mean(dr^2) - mean(dr)^2), summed over (r_x, r_y)."""
    if pred_rays.shape != gt_rays.shape:
        raise ValueError(f"ray grids differ: {tuple(pred_rays.shape)} vs {tuple(gt_rays.shape)}")
    delta = pred_rays - gt_rays
    total = pred_rays.sum() * 0.0
    for c in range(delta.shape[-1]):
        d = delta[..., c].reshape(-1)
        total = total + _variance_log_loss(d, RAY_LAMBDA)
    return total


def smooth_l1(x: torch.Tensor, beta: float = 1.0) -> torch.Tensor:
    """Elementwise: 0.5 x^2 / beta below beta, |x| - 0.5 beta above."""
    ax = x.abs()
    return torch.where(ax < beta, 0.5 * x * x / beta, ax - 0.5 * beta)


@dataclass
class BoxTargets:
    offset: torch.Tensor  # (N, 2) (c2d_gt - anchor) / (W, H)
    log_depth: torch.Tensor  # (N,) log z_gt - log depth_prior
    log_dims: torch.Tensor  # (N, 3) log dims_gt - log dim_prior
    rotation: torch.Tensor  # (N, 3, 3)
    dims: torch.Tensor  # (N, 3)


def box_targets(centers: torch.Tensor, dims: torch.Tensor, rotations: torch.Tensor, anchors: torch.Tensor,
                k: torch.Tensor, width: int, height: int, log_depth_prior: float,
                log_dim_prior: torch.Tensor) -> BoxTargets:
    """Regression targets in the heads' parameterization, given the intrinsics used to decode."""
    z = centers[:, 2]
    u = k[:, 0] * centers[:, 0] / z + k[:, 2]
    v = k[:, 1] * centers[:, 1] / z + k[:, 3]
    scale = torch.tensor([width, height], dtype=centers.dtype)
    offset = (torch.stack([u, v], dim=-1) - anchors) / scale
    return BoxTargets(offset, torch.log(z) - log_depth_prior, torch.log(dims) - log_dim_prior.to(dims.dtype),
                      rotations, dims)


def box_regression_loss(raw: dict[str, torch.Tensor], tgt: BoxTargets) -> torch.Tensor:
    """Per-object smooth-L1 summed over center offset, log-depth, log-dims: shape (N,)."""
    res = torch.cat([
        raw["offset"] - tgt.offset,
        (raw["log_depth"] - tgt.log_depth).unsqueeze(-1),
        raw["log_dims"] - tgt.log_dims,
    ], dim=-1)
    return smooth_l1(res).sum(-1)


def chamfer_rotation_loss(r_pred: torch.Tensor, r_gt: torch.Tensor, dims_gt: torch.Tensor) -> torch.Tensor:
    """Symmetric chamfer distance between GT-size cuboids rotated by each matrix.

    Batched: r_* (N, 3, 3), dims (N, 3) -> (N,). Each direction is a mean over
    the 8 corners of the squared distance to the nearest corner of the other
    set; the two directions are averaged.
    """
    a = cuboid_corners_torch(dims_gt, r_pred)
    b = cuboid_corners_torch(dims_gt, r_gt)
    d2 = ((a.unsqueeze(-2) - b.unsqueeze(-3)) ** 2).sum(-1)
    return 0.5 * (d2.min(dim=-1).values.mean(-1) + d2.min(dim=-2).values.mean(-1))


def iou_score_loss(score: torch.Tensor, iou_realized: torch.Tensor) -> torch.Tensor:
    return (score - iou_realized) ** 2


@dataclass
class Supervision:
    """Per-image supervision; any field may be None (absent -> contributes 0)."""
    depth: torch.Tensor | None = None  # (H, W), 0 = invalid
    rays: torch.Tensor | None = None  # (H, W, 2)
    boxes: tuple[torch.Tensor, torch.Tensor, torch.Tensor] | None = None  # centers, dims, rotations for its prompts


def total_loss(out, supervision: list[Supervision], model, iou_targets: torch.Tensor | None = None):
    """L = L_depth + L_cam + L_det with L_det = L_box + L_rot + L_iou.

    ``out`` is a ModelOutput for the batch; ``iou_targets`` (N,) holds the
    realized IoU of each predicted box with its GT (computed without gradient).
    Depth and camera terms are averaged over images that carry them; detection
    terms over objects. Returns (total, components dict of floats-as-tensors).
    """
    zero = out.depth.sum() * 0.0
    depth_terms, cam_terms = [], []
    rays_pred = None
    for b, sup in enumerate(supervision):
        if sup.depth is not None:
            depth_terms.append(silog_depth(out.depth[b], sup.depth.to(out.depth.dtype)))
        if sup.rays is not None:
            if rays_pred is None:
                rays_pred = model.predicted_rays(out.k_hat)
            cam_terms.append(camera_ray_loss(rays_pred[b], sup.rays.to(out.depth.dtype)))
    l_depth = torch.stack(depth_terms).mean() if depth_terms else zero
    l_cam = torch.stack(cam_terms).mean() if cam_terms else zero

    l_box = l_rot = l_iou = zero
    det_rows = []
    centers, dims, rots = [], [], []
    for b, sup in enumerate(supervision):
        rows = (out.image_index == b).nonzero().flatten()
        if sup.boxes is None or len(rows) == 0:
            continue
        c, d, r = sup.boxes
        if len(c) != len(rows):
            raise ValueError(f"image {b}: {len(rows)} prompts but {len(c)} GT boxes")
        det_rows.append(rows)
        centers.append(c)
        dims.append(d)
        rots.append(r)
    if det_rows:
        rows = torch.cat(det_rows)
        dtype = out.depth.dtype
        c = torch.cat(centers).to(dtype)
        d = torch.cat(dims).to(dtype)
        r = torch.cat(rots).to(dtype)
        cfg = model.cfg
        tgt = box_targets(c, d, r, out.anchors[rows], out.k_used[out.image_index[rows]], cfg.image_width,
                          cfg.image_height, model.heads.log_depth_prior, model.heads.log_dim_prior)
        raw = {k: v[rows] for k, v in out.raw.items()}
        l_box = box_regression_loss(raw, tgt).mean()
        l_rot = chamfer_rotation_loss(out.boxes["rotation"][rows], r, d).mean()
        if iou_targets is not None:
            l_iou = iou_score_loss(out.boxes["score"][rows], iou_targets[rows].to(dtype)).mean()
    l_det = l_box + l_rot + l_iou
    total = l_depth + l_cam + l_det
    parts = {"depth": l_depth, "cam": l_cam, "box": l_box, "rot": l_rot, "iou": l_iou, "total": total}
    return total, parts

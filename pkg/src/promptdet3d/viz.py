"""Overlays: projected box wireframes on the image and a bird's-eye view with a 1 m grid."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .geometry import Box3D, Intrinsics, UnprojectableBox, box3d_corners, project_box

# corner index pairs along x, y and z in sign-lattice order
EDGES = [(i, i ^ bit) for bit in (4, 2, 1) for i in range(8) if not i & bit]
BEV_GRID_M = 1.0
PALETTE = [(230, 57, 70), (29, 53, 87), (42, 157, 143), (244, 162, 97), (131, 56, 236), (255, 190, 11)]


def draw_wireframes(image: np.ndarray, K: Intrinsics, boxes: list[Box3D], scale: int = 4):
    """Returns (PIL image, per-box projected vertices or None when unprojectable)."""
    im = Image.fromarray(image).resize((image.shape[1] * scale, image.shape[0] * scale), Image.NEAREST)
    draw = ImageDraw.Draw(im)
    vertices = []
    for n, b in enumerate(boxes):
        try:
            uv = project_box(K, b)
        except UnprojectableBox:
            vertices.append(None)
            continue
        vertices.append(uv)
        color = PALETTE[n % len(PALETTE)]
        for i, j in EDGES:
            draw.line([tuple(uv[i] * scale), tuple(uv[j] * scale)], fill=color, width=2)
    return im, vertices


def bev_plot(boxes: list[Box3D], path: str | Path, gt: list[Box3D] | None = None,
             extent: tuple[float, float, float, float] | None = None) -> dict:
    """Top-down (x, z) plot with 1 m grid lines. Returns the grid spacing and extent used."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    everything = list(boxes) + list(gt or [])
    if extent is None:
        if everything:
            pts = np.concatenate([box3d_corners(b) for b in everything])
            x0, x1 = np.floor(pts[:, 0].min()) - 1, np.ceil(pts[:, 0].max()) + 1
            z1 = np.ceil(pts[:, 2].max()) + 1
        else:
            x0, x1, z1 = -5.0, 5.0, 10.0
        extent = (float(x0), float(x1), 0.0, float(z1))
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.set_xticks(np.arange(extent[0], extent[1] + 1e-9, BEV_GRID_M))
    ax.set_yticks(np.arange(extent[2], extent[3] + 1e-9, BEV_GRID_M))
    ax.grid(True, color="0.85", linewidth=0.6)
    ax.tick_params(labelbottom=False, labelleft=False, length=0)
    footprint = [0, 1, 5, 4, 0]  # bottom-face corners (y = -h/2) in cyclic order
    for b in gt or []:
        c = box3d_corners(b)[footprint]
        ax.plot(c[:, 0], c[:, 2], color="0.3", linestyle="--", linewidth=1)
    for n, b in enumerate(boxes):
        c = box3d_corners(b)[footprint]
        col = np.array(PALETTE[n % len(PALETTE)]) / 255
        ax.plot(c[:, 0], c[:, 2], color=col, linewidth=1.5)
    ax.plot([0], [0], marker="^", color="k")
    ax.set_xlim(extent[0], extent[1])
    ax.set_ylim(extent[2], extent[3])
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("z [m]")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return {"grid_spacing_m": BEV_GRID_M, "extent": list(extent)}

"""Scene manifests, the synthetic cuboid-scene generator, and prompt sampling.

Manifest file (JSON, UTF-8), paths relative to the manifest's directory::

    {
      "schema": "promptdet3d.manifest", "version": 1,
      "name": str, "split": "train" | "val" | "test",
      "categories": [str, ...],
      "scenes": [{
        "image": "images/000000.png", "width": int, "height": int,
        "K": [[fx, 0, cx], [0, fy, cy], [0, 0, 1]],        # row-major
        "depth": "depth/000000.png" | null,             # uint16 millimetres, 0 = invalid
        "annotations": [{
          "category": str, "box2d": [x1, y1, x2, y2],
          "center": [x, y, z], "dims": [w, h, l], "rotation": 3x3 row-major,
          "mask": "masks/000000_00.png" | null          # uint8, 255 = object
        }]
      }]
    }
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import Box3D, GeometryError, Intrinsics, box3d_corners, grid_pixel_centers, pixel_rays, \
    project_points, rotation_y
from .kernels import raycast_cuboids

MANIFEST_SCHEMA = "promptdet3d.manifest"
MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")


class ManifestError(ValueError):
    def __init__(self, message: str, index: int | None = None):
        self.index = index
        super().__init__(message if index is None else f"scene {index}: {message}")


@dataclass
class Annotation:
    category: str
    box2d: tuple[float, float, float, float]
    box3d: Box3D
    mask_path: str | None = None


@dataclass
class SceneRecord:
    image_path: str
    width: int
    height: int
    intrinsics: Intrinsics
    depth_path: str | None = None
    annotations: list[Annotation] = field(default_factory=list)


@dataclass
class Manifest:
    name: str
    split: str
    categories: list[str]
    scenes: list[SceneRecord]
    root: Path = field(default=Path("."), compare=False)

    def resolve(self, rel: str) -> Path:
        return self.root / rel


def _scene_to_dict(s: SceneRecord) -> dict:
    return {
        "image": s.image_path,
        "width": s.width,
        "height": s.height,
        "K": s.intrinsics.matrix().tolist(),
        "depth": s.depth_path,
        "annotations": [
            {
                "category": a.category,
                "box2d": [float(x) for x in a.box2d],
                "center": a.box3d.center.tolist(),
                "dims": a.box3d.dims.tolist(),
                "rotation": a.box3d.rotation.tolist(),
                "mask": a.mask_path,
            }
            for a in s.annotations
        ],
    }


def manifest_to_dict(m: Manifest) -> dict:
    return {
        "schema": MANIFEST_SCHEMA,
        "version": MANIFEST_VERSION,
        "name": m.name,
        "split": m.split,
        "categories": list(m.categories),
        "scenes": [_scene_to_dict(s) for s in m.scenes],
    }


def save_manifest(m: Manifest, path: str | Path) -> None:
    Path(path).write_text(json.dumps(manifest_to_dict(m), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _parse_scene(d: dict, i: int, vocab: set[str], root: Path, check_files: bool) -> SceneRecord:
    try:
        width, height = int(d["width"]), int(d["height"])
        K = np.asarray(d["K"], dtype=np.float64)
        if K.shape != (3, 3) or np.abs(K[2] - [0, 0, 1]).max() > 0 or K[1, 0] or K[0, 1]:
            raise ManifestError("K must be a zero-skew upper-triangular 3x3 matrix", i)
        intr = Intrinsics.from_matrix(K, width, height)
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"malformed scene entry ({exc})", i) from None
    except GeometryError as exc:
        raise ManifestError(f"invalid intrinsics: {exc}", i) from None
    for key in ("image", "depth"):
        rel = d.get(key)
        if key == "image" and not rel:
            raise ManifestError("missing image path", i)
        if rel and check_files and not (root / rel).is_file():
            raise ManifestError(f"{key} file not found: {rel}", i)
    anns = []
    for j, a in enumerate(d.get("annotations", [])):
        try:
            cat = a["category"]
            x1, y1, x2, y2 = (float(v) for v in a["box2d"])
            box = Box3D(a["center"], a["dims"], a.get("rotation", np.eye(3).tolist()))
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"annotation {j}: {exc}", i) from None
        if cat not in vocab:
            raise ManifestError(f"annotation {j}: category {cat!r} not in vocabulary", i)
        if not (0 <= x1 < x2 <= width and 0 <= y1 < y2 <= height):
            raise ManifestError(f"annotation {j}: 2D box {[x1, y1, x2, y2]} invalid or outside image", i)
        if box.center[2] <= 0:
            raise ManifestError(f"annotation {j}: box center behind the camera", i)
        mask = a.get("mask")
        if mask and check_files and not (root / mask).is_file():
            raise ManifestError(f"annotation {j}: mask file not found: {mask}", i)
        anns.append(Annotation(cat, (x1, y1, x2, y2), box, mask))
    return SceneRecord(d["image"], width, height, intr, d.get("depth"), anns)


def load_manifest(path: str | Path, check_files: bool = True) -> Manifest:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from None
    if data.get("schema") != MANIFEST_SCHEMA or data.get("version") != MANIFEST_VERSION:
        raise ManifestError(f"unsupported manifest header {data.get('schema')!r} v{data.get('version')!r}")
    if data.get("split") not in SPLITS:
        raise ManifestError(f"split must be one of {SPLITS}, got {data.get('split')!r}")
    vocab = list(data.get("categories", []))
    root = path.parent
    scenes = [_parse_scene(s, i, set(vocab), root, check_files) for i, s in enumerate(data.get("scenes", []))]
    return Manifest(data.get("name", path.stem), data["split"], vocab, scenes, root)


# --- images and maps ------------------------------------------------------

def load_rgb(path: str | Path) -> np.ndarray:
    """(H, W, 3) float32 in [0, 1]."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def load_depth(path: str | Path) -> np.ndarray:
    """(H, W) metres, 0 where invalid."""
    with Image.open(path) as im:
        return np.asarray(im, dtype=np.float64) / 1000.0


def load_mask(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im) > 127


def save_depth(depth: np.ndarray, path: str | Path) -> None:
    mm = np.where(np.isfinite(depth), np.round(depth * 1000.0), 0)
    Image.fromarray(np.clip(mm, 0, 65535).astype(np.uint16)).save(path)


# --- synthetic scenes -----------------------------------------------------

@dataclass(frozen=True)
class CategorySpec:
    dims: tuple[float, float, float]
    color: tuple[float, float, float]


DEFAULT_CATEGORIES = {
    "crate": CategorySpec((0.7, 0.7, 0.7), (0.85, 0.35, 0.25)),
    "cabinet": CategorySpec((0.9, 1.6, 0.5), (0.25, 0.45, 0.85)),
    "table": CategorySpec((1.5, 0.75, 0.9), (0.3, 0.75, 0.35)),
    "bin": CategorySpec((0.45, 0.8, 0.45), (0.9, 0.8, 0.2)),
}


@dataclass
class CameraRanges:
    width: int = 128
    height: int = 96
    focal: tuple[float, float] = (90.0, 150.0)
    # principal point offset from the image center, as a fraction of the size
    principal_jitter: float = 0.03


@dataclass
class LayoutRanges:
    objects: tuple[int, int] = (1, 8)
    depth: tuple[float, float] = (3.0, 9.0)
    dim_jitter: float = 0.15
    yaw: tuple[float, float] = (-np.pi, np.pi)
    min_visible_pixels: int = 25
    categories: dict[str, CategorySpec] = field(default_factory=lambda: dict(DEFAULT_CATEGORIES))


LIGHT = np.array([0.4, -0.8, -0.45]) / np.linalg.norm([0.4, -0.8, -0.45])


@dataclass
class RenderResult:
    image: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) metres, inf where background
    index: np.ndarray  # (H, W) object id or -1


def render_scene(K: Intrinsics, boxes: list[Box3D], colors: list[tuple[float, float, float]]) -> RenderResult:
    """Flat-shaded cuboids over a vertical gray gradient, sampled at pixel centers."""
    uu, vv = grid_pixel_centers(K.width, K.height, K.height, K.width)
    rays = pixel_rays(K, uu, vv)
    if boxes:
        depth, index, face = raycast_cuboids(
            rays[..., 0], rays[..., 1],
            np.stack([b.center for b in boxes]), np.stack([b.rotation for b in boxes]),
            np.stack([b.dims for b in boxes]))
    else:
        depth = np.full((K.height, K.width), np.inf)
        index = np.full((K.height, K.width), -1, dtype=np.int64)
        face = index.copy()
    grad = 0.55 + 0.25 * (np.arange(K.height) / max(K.height - 1, 1))
    img = np.repeat(grad[:, None, None], K.width, axis=1).repeat(3, axis=2)
    for n, b in enumerate(boxes):
        for f in range(6):
            sel = (index == n) & (face == f)
            if not sel.any():
                continue
            axis, side = divmod(f, 2)
            normal = b.rotation[:, axis] * (1.0 if side else -1.0)
            shade = 0.35 + 0.65 * max(0.0, float(normal @ LIGHT))
            img[sel] = np.asarray(colors[n]) * shade
    return RenderResult(np.round(np.clip(img, 0, 1) * 255).astype(np.uint8), depth, index)


def box2d_from_corners(K: Intrinsics, b: Box3D) -> tuple[float, float, float, float]:
    """Tight bounds of the projected corners, clipped to the image."""
    uv = project_points(K, box3d_corners(b))
    x1, y1 = np.clip(uv.min(axis=0), 0, [K.width, K.height])
    x2, y2 = np.clip(uv.max(axis=0), 0, [K.width, K.height])
    return float(x1), float(y1), float(x2), float(y2)


def _sample_camera(rng: np.random.Generator, cam: CameraRanges) -> Intrinsics:
    f = rng.uniform(*cam.focal)
    cx = cam.width * (0.5 + rng.uniform(-cam.principal_jitter, cam.principal_jitter))
    cy = cam.height * (0.5 + rng.uniform(-cam.principal_jitter, cam.principal_jitter))
    return Intrinsics(f, f, cx, cy, cam.width, cam.height)


def _sample_layout(rng: np.random.Generator, K: Intrinsics, lay: LayoutRanges):
    names = sorted(lay.categories)
    target = int(rng.integers(lay.objects[0], lay.objects[1] + 1))
    boxes, cats = [], []
    for _ in range(60 * target):
        if len(boxes) == target:
            break
        cat = names[int(rng.integers(len(names)))]
        spec = lay.categories[cat]
        dims = np.asarray(spec.dims) * (1 + rng.uniform(-lay.dim_jitter, lay.dim_jitter, 3))
        u = rng.uniform(0.1, 0.9) * K.width
        v = rng.uniform(0.15, 0.85) * K.height
        z = rng.uniform(*lay.depth)
        center = np.array([(u - K.cx) / K.fx * z, (v - K.cy) / K.fy * z, z])
        box = Box3D(center, dims, rotation_y(rng.uniform(*lay.yaw)))
        if np.any(box3d_corners(box)[:, 2] <= 0.5):
            continue
        radius = 0.5 * np.linalg.norm(dims)
        if any(np.linalg.norm(center - o.center) < radius + 0.5 * np.linalg.norm(o.dims) for o in boxes):
            continue
        boxes.append(box)
        cats.append(cat)
    return boxes, cats


def synth_scene(rng: np.random.Generator, cam: CameraRanges, lay: LayoutRanges):
    """One scene: (K, boxes, categories, render). Objects below the visibility floor are dropped."""
    while True:
        K = _sample_camera(rng, cam)
        boxes, cats = _sample_layout(rng, K, lay)
        while boxes:
            render = render_scene(K, boxes, [lay.categories[c].color for c in cats])
            counts = np.bincount(render.index[render.index >= 0].ravel(), minlength=len(boxes))
            keep = counts >= lay.min_visible_pixels
            if keep.all():
                return K, boxes, cats, render
            boxes = [b for b, k in zip(boxes, keep) if k]
            cats = [c for c, k in zip(cats, keep) if k]


def synth_generate(seed: int, n_scenes: int, out_dir: str | Path, cam_ranges: CameraRanges | None = None,
                   layout_ranges: LayoutRanges | None = None, name: str = "synth",
                   split: str = "train") -> Manifest:
    """Render ``n_scenes`` scenes under ``out_dir`` and write ``manifest.json``.

    Scene ``i`` draws from its own generator seeded by ``(seed, i)``, so
    scenes are independent of generation order.
    """
    cam = cam_ranges or CameraRanges()
    lay = layout_ranges or LayoutRanges()
    out = Path(out_dir)
    for sub in ("images", "depth", "masks"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    scenes = []
    for i in range(n_scenes):
        rng = np.random.default_rng([seed, i])
        K, boxes, cats, render = synth_scene(rng, cam, lay)
        img_rel, depth_rel = f"images/{i:06d}.png", f"depth/{i:06d}.png"
        Image.fromarray(render.image).save(out / img_rel)
        save_depth(render.depth, out / depth_rel)
        anns = []
        for j, (b, c) in enumerate(zip(boxes, cats)):
            mask_rel = f"masks/{i:06d}_{j:02d}.png"
            Image.fromarray(((render.index == j) * 255).astype(np.uint8)).save(out / mask_rel)
            anns.append(Annotation(c, box2d_from_corners(K, b), b, mask_rel))
        scenes.append(SceneRecord(img_rel, K.width, K.height, K, depth_rel, anns))
    manifest = Manifest(name, split, sorted(lay.categories), scenes, out)
    save_manifest(manifest, out / "manifest.json")
    return manifest


# --- prompts --------------------------------------------------------------

def perturb_box_prompt(box2d, rng: np.random.Generator, magnitude: float = 0.1,
                       width: float | None = None, height: float | None = None):
    """Shift every corner coordinate by U(-m, m) times the box side, then clamp to the image."""
    x1, y1, x2, y2 = (float(v) for v in box2d)
    bw, bh = x2 - x1, y2 - y1
    d = rng.uniform(-magnitude, magnitude, 4) if magnitude > 0 else np.zeros(4)
    out = np.array([x1 + d[0] * bw, y1 + d[1] * bh, x2 + d[2] * bw, y2 + d[3] * bh])
    if width is not None:
        out[[0, 2]] = np.clip(out[[0, 2]], 0, width)
    if height is not None:
        out[[1, 3]] = np.clip(out[[1, 3]], 0, height)
    return tuple(float(v) for v in out)


class EmptyMaskError(ValueError):
    pass


def sample_point_prompt(mask: np.ndarray, rng: np.random.Generator) -> tuple[int, int]:
    """Uniform pixel ``(u, v) = (column, row)`` with a true mask value."""
    rows, cols = np.nonzero(mask)
    if len(rows) == 0:
        raise EmptyMaskError("cannot sample a point from an empty mask")
    k = int(rng.integers(len(rows)))
    return int(cols[k]), int(rows[k])

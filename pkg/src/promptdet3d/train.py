"""Single-process reference training loop (AdamW + cosine annealing)."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import parameter_checksum, save_checkpoint
from .config import RunConfig
from .datakit import Manifest, load_depth, load_mask, load_rgb, perturb_box_prompt, sample_point_prompt, \
    EmptyMaskError
from .geometry import Box3D, iou3d, make_rays
from .interpreter import Prompt, PromptSet
from .losses import Supervision, total_loss
from .model import PromptDet3D

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class SceneTensors:
    image: torch.Tensor  # (3, H, W)
    depth: torch.Tensor | None  # (H, W) metres, 0 invalid
    rays: torch.Tensor  # (H, W, 2) GT rays at pixel centers
    record: object
    masks: list[np.ndarray | None]


def load_scenes(manifest: Manifest, load_masks: bool = False) -> list[SceneTensors]:
    out = []
    for s in manifest.scenes:
        img = torch.from_numpy(load_rgb(manifest.resolve(s.image_path))).permute(2, 0, 1).contiguous()
        depth = None
        if s.depth_path:
            depth = torch.from_numpy(load_depth(manifest.resolve(s.depth_path))).float()
        rays = torch.from_numpy(make_rays(s.intrinsics, s.height, s.width)).float()
        masks = [load_mask(manifest.resolve(a.mask_path)) if (load_masks and a.mask_path) else None
                 for a in s.annotations]
        out.append(SceneTensors(img, depth, rays, s, masks))
    return out


def scene_prompts(scene: SceneTensors, mode: str, rng: np.random.Generator | None, box_noise: float,
                  with_intrinsics: bool, categories: list[str] | None = None) -> tuple[PromptSet, list[int]]:
    """Prompts for the scene's annotations; returns the PromptSet and the annotation index per prompt."""
    rec = scene.record
    prompts, idx = [], []
    for j, a in enumerate(rec.annotations):
        if categories is not None and a.category not in categories:
            continue
        if mode == "point":
            mask = scene.masks[j]
            try:
                if mask is None or rng is None:
                    raise EmptyMaskError("no mask")
                u, v = sample_point_prompt(mask, rng)
                prompts.append(Prompt.point(u + 0.5, v + 0.5))
            except EmptyMaskError:
                x1, y1, x2, y2 = a.box2d
                prompts.append(Prompt.point(0.5 * (x1 + x2), 0.5 * (y1 + y2)))
        else:
            box = a.box2d
            if rng is not None and box_noise > 0:
                box = perturb_box_prompt(box, rng, box_noise, rec.width, rec.height)
            prompts.append(Prompt.box(*box))
        idx.append(j)
    ps = PromptSet(prompts, rec.width, rec.height, rec.intrinsics if with_intrinsics else None,
                   [rec.annotations[j].category for j in idx])
    return ps, idx


def gt_tensors(scene: SceneTensors, idx: list[int], dtype=torch.float32):
    anns = [scene.record.annotations[j] for j in idx]
    c = torch.tensor(np.array([a.box3d.center for a in anns]).reshape(-1, 3), dtype=dtype)
    d = torch.tensor(np.array([a.box3d.dims for a in anns]).reshape(-1, 3), dtype=dtype)
    r = torch.tensor(np.array([a.box3d.rotation for a in anns]).reshape(-1, 3, 3), dtype=dtype)
    return c, d, r


def make_batch(scenes: list[SceneTensors], indices, rng: np.random.Generator, cfg: RunConfig):
    tc = cfg.train
    images, prompt_sets, sups, gt_boxes = [], [], [], []
    for i in indices:
        s = scenes[i]
        with_k = tc.intrinsic_prompt and rng.random() < tc.intrinsic_prompt_prob
        ps, idx = scene_prompts(s, tc.prompt_mode, rng, tc.box_noise, with_k)
        images.append(s.image)
        prompt_sets.append(ps)
        boxes = gt_tensors(s, idx)
        sups.append(Supervision(depth=s.depth, rays=s.rays, boxes=boxes))
        gt_boxes.extend(s.record.annotations[j].box3d for j in idx)
    return torch.stack(images), prompt_sets, sups, gt_boxes


def realized_ious(out, gt_boxes: list[Box3D]) -> torch.Tensor:
    preds = out.box_list()
    return torch.tensor([iou3d(p, g) for p, g in zip(preds, gt_boxes)], dtype=torch.float32)


def cosine_factor(step: int, total: int, min_ratio: float = 0.0) -> float:
    if total <= 0:
        return 1.0
    return min_ratio + (1.0 - min_ratio) * 0.5 * (1.0 + math.cos(math.pi * min(step, total) / total))


def build_optimizer(model: PromptDet3D, cfg: RunConfig):
    tc = cfg.train
    params = [p for p in model.parameters() if p.requires_grad]
    if tc.optimizer == "adamw":
        opt = torch.optim.AdamW(params, lr=tc.lr, weight_decay=tc.weight_decay)
    elif tc.optimizer == "adam":
        opt = torch.optim.Adam(params, lr=tc.lr)
    else:
        raise ValueError(f"unknown optimizer {tc.optimizer!r}")
    if tc.schedule == "cosine":
        sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: cosine_factor(s, tc.steps, tc.min_lr_ratio))
    elif tc.schedule == "constant":
        sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: 1.0)
    else:
        raise ValueError(f"unknown schedule {tc.schedule!r}")
    return opt, sched


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def _dump_nan(out_dir: Path, step: int, indices, prompt_sets, parts) -> Path:
    path = out_dir / "nan_dump.json"
    path.write_text(json.dumps({
        "step": step,
        "scenes": [int(i) for i in indices],
        "prompts": [[{"kind": p.kind, "coords": list(p.coords)} for p in ps.prompts] for ps in prompt_sets],
        "losses": {k: float(v.detach()) for k, v in parts.items()},
    }, indent=2), encoding="utf-8")
    return path


def train(cfg: RunConfig, manifest: Manifest, out_dir: str | Path, model: PromptDet3D | None = None,
          scenes: list[SceneTensors] | None = None) -> PromptDet3D:
    """Train and write ``checkpoint.pt`` and ``metrics.jsonl`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed_everything(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = PromptDet3D(cfg.model)
    if cfg.train.freeze_encoders:
        model.freeze_encoders()
    if scenes is None:
        scenes = load_scenes(manifest, load_masks=cfg.train.prompt_mode == "point")
    if not scenes and cfg.train.steps > 0:
        raise TrainingError("training manifest has no scenes")
    encoder_sum = [parameter_checksum(m) for m in model.encoder_modules()] if cfg.train.freeze_encoders else None
    opt, sched = build_optimizer(model, cfg)
    tc = cfg.train
    model.train()
    metrics_path = out / "metrics.jsonl"
    with open(metrics_path, "w", encoding="utf-8") as log_fh:
        order = np.array([], dtype=np.int64)
        for step in range(tc.steps):
            if len(order) < tc.batch_size:
                order = np.concatenate([order, rng.permutation(len(scenes))])
            indices, order = order[:tc.batch_size], order[tc.batch_size:]
            images, prompt_sets, sups, gt_boxes = make_batch(scenes, indices, rng, cfg)
            result = model(images, prompt_sets)
            with torch.no_grad():
                ious = realized_ious(result, gt_boxes)
            loss, parts = total_loss(result, sups, model, ious)
            if not torch.isfinite(loss):
                dump = _dump_nan(out, step, indices, prompt_sets, parts)
                raise TrainingError(f"non-finite loss at step {step}; batch dumped to {dump}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            if tc.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_([p for p in model.parameters() if p.requires_grad], tc.grad_clip)
            opt.step()
            sched.step()
            if tc.log_every and (step % tc.log_every == 0 or step == tc.steps - 1):
                row = {"step": step, "lr": opt.param_groups[0]["lr"], "mean_iou": float(ious.mean()) if len(ious) else 0.0}
                row.update({k: float(v.detach()) for k, v in parts.items()})
                log_fh.write(json.dumps(row, sort_keys=True) + "\n")
                log_fh.flush()
                log.info("step %d loss %.4f", step, row["total"])
            if tc.checkpoint_every and (step + 1) % tc.checkpoint_every == 0 and step + 1 < tc.steps:
                save_checkpoint(model, cfg, out / f"checkpoint_{step + 1:06d}.pt", step + 1)
    if encoder_sum is not None:
        now = [parameter_checksum(m) for m in model.encoder_modules()]
        if now != encoder_sum:
            raise TrainingError("frozen encoder parameters changed during training")
    save_checkpoint(model, cfg, out / "checkpoint.pt", tc.steps)
    model.eval()
    return model

"""Command-line entry points: synth, train, eval, infer, visualize.

Exit codes: 0 success, 2 usage error, 1 runtime failure. Relative ``--out``
paths are placed under ``$PROMPTDET3D_OUT_ROOT`` when that variable is set.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config, save_config

log = logging.getLogger("promptdet3d")

OUT_ROOT_ENV = "PROMPTDET3D_OUT_ROOT"
DETECTIONS_SCHEMA = "promptdet3d.detections"


class CLIError(RuntimeError):
    pass


def resolve_out(path: str) -> Path:
    p = Path(path)
    root = os.environ.get(OUT_ROOT_ENV)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "prompt_mode", None):
        cfg.train.prompt_mode = args.prompt_mode
    return cfg


def _ensure_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise CLIError(f"output directory {path} is not writable: {exc}") from None
    return path


def _tree_checksums(root: Path) -> dict[str, str]:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name != "checksums.json"}


# --- commands -------------------------------------------------------------

def cmd_synth(args) -> int:
    from .datakit import CameraRanges, LayoutRanges, synth_generate

    if args.config is None and args.out is None:
        return _usage(args, "synth needs --config or --out")
    cfg = _config(args)
    sc = cfg.synth
    n = args.n_scenes if args.n_scenes is not None else sc.n_scenes
    out = _ensure_dir(resolve_out(args.out or cfg.out))
    cam = CameraRanges(cfg.model.image_width, cfg.model.image_height, tuple(sc.focal), sc.principal_jitter)
    lay = LayoutRanges(tuple(sc.objects), tuple(sc.depth), sc.dim_jitter)
    m = synth_generate(cfg.seed, n, out, cam, lay, name=sc.name, split=args.split or sc.split)
    sums = _tree_checksums(out)
    (out / "checksums.json").write_text(json.dumps(sums, indent=1, sort_keys=True), encoding="utf-8")
    n_obj = sum(len(s.annotations) for s in m.scenes)
    print(f"wrote {len(m.scenes)} scenes, {n_obj} objects, {len(sums)} files to {out} (seed {cfg.seed})")
    return 0


def cmd_train(args) -> int:
    from .datakit import load_manifest
    from .train import train

    cfg = _config(args)
    if args.steps is not None:
        cfg.train.steps = args.steps
    if args.no_intrinsic_prompt:
        cfg.train.intrinsic_prompt = False
    if args.freeze_encoders:
        cfg.train.freeze_encoders = True
    manifest_path = args.manifest or cfg.manifest
    if not manifest_path:
        raise CLIError("no training manifest (use --manifest or set 'manifest' in the config)")
    manifest = load_manifest(manifest_path)
    out = _ensure_dir(resolve_out(args.out or cfg.out))
    save_config(cfg, out / "config.yaml")
    train(cfg, manifest, out)
    print(f"trained {cfg.train.steps} steps (seed {cfg.seed}); checkpoint at {out / 'checkpoint.pt'}")
    return 0


def _load_detections_file(path, manifest):
    from .geometry import Box3D

    data = json.loads(Path(path).read_text(encoding="utf-8"))
    images = data["detections"] if isinstance(data, dict) else data
    if len(images) != len(manifest.scenes):
        raise CLIError(f"{len(images)} prediction lists for {len(manifest.scenes)} scenes")
    return [[(Box3D.from_dict(d), d["category"]) for d in image] for image in images]


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .datakit import load_manifest
    from .evalkit import ap3d_report, write_report
    from .pipeline import evaluate, ground_truth

    cfg = _config(args)
    manifest_path = args.manifest or cfg.eval_manifest or cfg.manifest
    if not manifest_path:
        raise CLIError("no evaluation manifest (use --manifest)")
    manifest = load_manifest(manifest_path)
    target_aware = args.target_aware or cfg.target_aware
    settings = {"target_aware": target_aware, "intrinsic_prompt": not args.no_intrinsic_prompt,
                "prompt_mode": cfg.train.prompt_mode, "manifest": manifest.name, "split": manifest.split}
    if args.predictions:
        preds = _load_detections_file(args.predictions, manifest)
        report = ap3d_report(preds, ground_truth(manifest), settings=settings)
    else:
        if not args.checkpoint:
            raise CLIError("eval needs --checkpoint or --predictions")
        model, _, _ = load_checkpoint(args.checkpoint)
        size = _manifest_size(manifest)
        if size is not None and (model.cfg.image_height, model.cfg.image_width) != size:
            raise CLIError("checkpoint image size does not match the evaluation manifest")
        report = evaluate(model, manifest, target_aware=target_aware, intrinsic_prompt=not args.no_intrinsic_prompt,
                          prompt_mode=cfg.train.prompt_mode, seed=cfg.seed)
    out = resolve_out(args.out or str(Path(cfg.out) / "report.json"))
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report(report, out)
    if report["status"] == "no_gt":
        print(f"no GT: manifest {manifest.name!r} has no annotated objects; report at {out}")
    else:
        print(f"AP3D {report['ap3d']:.4f} over {len(report['categories'])} categories; report at {out}")
    return 0


def _manifest_size(manifest):
    if not manifest.scenes:
        return None
    return manifest.scenes[0].height, manifest.scenes[0].width


def _read_prompts(path, width: int, height: int):
    from .geometry import Intrinsics
    from .interpreter import Prompt, PromptSet

    data = json.loads(Path(path).read_text(encoding="utf-8"))
    prompts, cats = [], []
    for item in data.get("prompts", []):
        if "box" in item:
            prompts.append(Prompt.box(*item["box"]))
        elif "point" in item:
            prompts.append(Prompt.point(*item["point"]))
        else:
            raise CLIError(f"prompt entry needs 'box' or 'point': {item}")
        cats.append(item.get("category", "object"))
    k = data.get("intrinsics")
    intr = Intrinsics(k["fx"], k["fy"], k["cx"], k["cy"], width, height) if k else None
    return PromptSet(prompts, width, height, intr, cats)


def _run_infer(args):
    import torch

    from .checkpoint import load_checkpoint
    from .datakit import load_rgb

    model, _, _ = load_checkpoint(args.checkpoint)
    try:
        rgb = load_rgb(args.image)
    except OSError as exc:
        raise CLIError(f"cannot read image {args.image}: {exc}") from None
    h, w = rgb.shape[:2]
    if (h, w) != (model.cfg.image_height, model.cfg.image_width):
        raise CLIError(f"image is {w}x{h}, model expects {model.cfg.image_width}x{model.cfg.image_height}")
    prompts = _read_prompts(args.prompts, w, h)
    if args.no_intrinsic_prompt:
        prompts.intrinsics = None
    image = torch.from_numpy(rgb).permute(2, 0, 1).contiguous()
    boxes = model.detect(image, prompts)
    k_used = prompts.intrinsics or model.predict_intrinsics(image)
    doc = {
        "schema": DETECTIONS_SCHEMA,
        "version": 1,
        "image": str(args.image),
        "intrinsics_source": "prompt" if prompts.intrinsics is not None else "predicted",
        "intrinsics": {"fx": k_used.fx, "fy": k_used.fy, "cx": k_used.cx, "cy": k_used.cy},
        "detections": [
            {"category": c, "prompt": {p.kind: list(p.coords)}, **b.to_dict()}
            for b, c, p in zip(boxes, prompts.categories, prompts.prompts)
        ],
    }
    return rgb, k_used, boxes, doc


def cmd_infer(args) -> int:
    _, _, boxes, doc = _run_infer(args)
    out = resolve_out(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    print(f"{len(boxes)} detections written to {out}")
    return 0


def cmd_visualize(args) -> int:
    from .viz import bev_plot, draw_wireframes

    rgb, k_used, boxes, doc = _run_infer(args)
    out = _ensure_dir(resolve_out(args.out))
    image = np.round(rgb * 255).astype(np.uint8)
    overlay, verts = draw_wireframes(image, k_used, boxes)
    overlay.save(out / "overlay.png")
    bev = bev_plot(boxes, out / "bev.png")
    meta = {
        "detections": doc["detections"],
        "wireframe_vertices": [v.tolist() if v is not None else None for v in verts],
        "bev": bev,
    }
    (out / "overlay.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
    print(f"overlay and bird's-eye view written to {out}")
    return 0


# --- parser ---------------------------------------------------------------

def _usage(args, msg: str) -> int:
    args._parser.print_usage(sys.stderr)
    print(f"{args._parser.prog}: error: {msg}", file=sys.stderr)
    return 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="promptdet3d", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=False):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=out_required)
        p.set_defaults(_parser=p)

    p = sub.add_parser("synth", help="render a synthetic cuboid dataset")
    common(p)
    p.add_argument("--n-scenes", type=int)
    p.add_argument("--split", choices=["train", "val", "test"])
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the detector")
    common(p)
    p.add_argument("--manifest")
    p.add_argument("--steps", type=int)
    p.add_argument("--prompt-mode", choices=["box", "point"])
    p.add_argument("--no-intrinsic-prompt", action="store_true")
    p.add_argument("--freeze-encoders", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="AP3D report for a checkpoint or a detections file")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--predictions", help="detections JSON (list of per-image lists) instead of a checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--prompt-mode", choices=["box", "point"])
    p.add_argument("--target-aware", action="store_true")
    p.add_argument("--no-intrinsic-prompt", action="store_true")
    p.set_defaults(func=cmd_eval)

    for name, func, helptext in (("infer", cmd_infer, "detect boxes for prompts on one image"),
                                 ("visualize", cmd_visualize, "wireframe overlay and bird's-eye view")):
        p = sub.add_parser(name, help=helptext)
        common(p, out_required=True)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--image", required=True)
        p.add_argument("--prompts", required=True, help="JSON with 'prompts' and optional 'intrinsics'")
        p.add_argument("--no-intrinsic-prompt", action="store_true")
        p.set_defaults(func=func)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .checkpoint import CheckpointError
    from .datakit import ManifestError
    from .train import TrainingError

    try:
        return int(args.func(args) or 0)
    except (CLIError, CheckpointError, ManifestError, TrainingError, OSError, ValueError) as exc:
        print(f"promptdet3d {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""AP3D evaluation: greedy IoU3D matching, 101-point AP, target-aware prompting, reports."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .geometry import Box3D, iou3d

# written as literals so 0.30 is the float 0.3, not 6 * 0.05
THRESHOLDS = (0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50)
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
REPORT_SCHEMA_ID = "promptdet3d.ap3d_report"
REPORT_VERSION = 1

Labeled = tuple[Box3D, str]


@dataclass
class EvalConfig:
    thresholds: tuple[float, ...] = THRESHOLDS
    # predictions are ranked by descending score; ties by image index, then box geometry
    category_map: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=np.float64)
        if len(t) != 10 or np.any(np.diff(t) <= 0):
            raise ValueError("thresholds must be 10 strictly increasing values")

    def canonical(self, category: str) -> str:
        return self.category_map.get(category, category)


@dataclass
class Match:
    pred: int
    gt: int | None
    iou: float


@dataclass
class MatchResult:
    threshold: float
    matches: list[Match]
    tp: int
    fp: int
    fn: int


def _box_key(b: Box3D) -> tuple:
    return (-b.score, *b.center.tolist(), *b.dims.tolist(), *b.rotation.ravel().tolist())


def prediction_order(preds: Sequence[Labeled]) -> list[int]:
    """Indices by descending score with a geometric tie-break (input-order independent)."""
    return sorted(range(len(preds)), key=lambda i: (_box_key(preds[i][0]), preds[i][1]))


def match_predictions(preds: Sequence[Labeled], gts: Sequence[Labeled], tau: float,
                      ious: np.ndarray | None = None,
                      iou_fn: Callable[[Box3D, Box3D], float] = iou3d) -> MatchResult:
    """Greedy matching in descending score order.

    Each prediction takes the unmatched same-category GT with the highest
    IoU (lowest GT index on ties) provided IoU >= tau.
    """
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"threshold {tau} outside (0, 1]")
    if ious is None:
        ious = np.zeros((len(preds), len(gts)))
        for i, (p, pc) in enumerate(preds):
            for j, (g, gc) in enumerate(gts):
                if pc == gc:
                    ious[i, j] = iou_fn(p, g)
    taken = np.zeros(len(gts), dtype=bool)
    matches: list[Match] = []
    for i in prediction_order(preds):
        best, best_iou = None, -1.0
        for j in range(len(gts)):
            if taken[j] or gts[j][1] != preds[i][1]:
                continue
            if ious[i, j] > best_iou:
                best, best_iou = j, float(ious[i, j])
        if best is not None and best_iou >= tau:
            taken[best] = True
            matches.append(Match(i, best, best_iou))
        else:
            matches.append(Match(i, None, max(best_iou, 0.0)))
    tp = sum(m.gt is not None for m in matches)
    return MatchResult(tau, matches, tp, len(preds) - tp, len(gts) - tp)


def interpolated_ap(scores: np.ndarray, is_tp: np.ndarray, num_gt: int, order: np.ndarray | None = None) -> float:
    """101-point interpolated AP from per-prediction (score, TP flag)."""
    if num_gt <= 0:
        raise ValueError("AP is undefined without ground truth")
    if len(scores) == 0:
        return 0.0
    if order is None:
        order = np.argsort(-np.asarray(scores), kind="stable")
    tp = np.asarray(is_tp, dtype=np.float64)[order]
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / num_gt
    precision = ctp / (ctp + cfp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(recall), envelope[np.minimum(idx, len(recall) - 1)], 0.0)
    return float(sampled.mean())


def _category_ap_table(images_preds: Sequence[Sequence[Labeled]], images_gts: Sequence[Sequence[Labeled]],
                       cfg: EvalConfig, thresholds: Sequence[float]):
    preds = [[(b, cfg.canonical(c)) for b, c in ps] for ps in images_preds]
    gts = [[(b, cfg.canonical(c)) for b, c in gs] for gs in images_gts]
    num_gt: dict[str, int] = {}
    num_pred: dict[str, int] = {}
    for gs in gts:
        for _, c in gs:
            num_gt[c] = num_gt.get(c, 0) + 1
    for ps in preds:
        for _, c in ps:
            num_pred[c] = num_pred.get(c, 0) + 1
    cats = sorted(num_gt)
    # IoUs once per image, reused across thresholds
    iou_cache = []
    for ps, gs in zip(preds, gts):
        m = np.zeros((len(ps), len(gs)))
        for i, (p, pc) in enumerate(ps):
            for j, (g, gc) in enumerate(gs):
                if pc == gc:
                    m[i, j] = iou3d(p, g)
        iou_cache.append(m)
    table = np.zeros((len(thresholds), len(cats)))
    for t, tau in enumerate(thresholds):
        flags: dict[str, list[tuple[tuple, int, bool]]] = {c: [] for c in cats}
        for img, (ps, gs) in enumerate(zip(preds, gts)):
            res = match_predictions(ps, gs, tau, ious=iou_cache[img])
            for m in res.matches:
                box, c = ps[m.pred]
                if c in flags:
                    flags[c].append((_box_key(box), img, m.gt is not None))
        for k, c in enumerate(cats):
            rows = sorted(flags[c], key=lambda r: (r[0][0], r[1], r[0][1:]))
            scores = np.array([-r[0][0] for r in rows])
            tp = np.array([r[2] for r in rows], dtype=bool)
            table[t, k] = interpolated_ap(scores, tp, num_gt[c], order=np.arange(len(rows)))
    return cats, table, num_gt, num_pred


def average_precision(images_preds, images_gts, tau: float, cfg: EvalConfig | None = None) -> dict[str, float]:
    """Per-category AP at a single threshold."""
    cfg = cfg or EvalConfig()
    cats, table, _, _ = _category_ap_table(images_preds, images_gts, cfg, (tau,))
    return {c: float(table[0, k]) for k, c in enumerate(cats)}


def ap3d(images_preds, images_gts, cfg: EvalConfig | None = None) -> float | None:
    """Mean over categories (with GT), then over the 10 IoU3D thresholds."""
    report = ap3d_report(images_preds, images_gts, cfg)
    return report["ap3d"]


def ap3d_report(images_preds, images_gts, cfg: EvalConfig | None = None, settings: dict | None = None) -> dict:
    cfg = cfg or EvalConfig()
    if len(images_preds) != len(images_gts):
        raise ValueError("predictions and ground truth must cover the same images")
    cats, table, num_gt, num_pred = _category_ap_table(images_preds, images_gts, cfg, cfg.thresholds)
    report = {
        "schema": REPORT_SCHEMA_ID,
        "version": REPORT_VERSION,
        "thresholds": [float(t) for t in cfg.thresholds],
        "num_images": len(images_gts),
        "settings": dict(settings or {}),
    }
    if not cats:
        report.update(status="no_gt", categories=[], per_category={}, per_threshold=[], ap3d=None)
        return report
    per_threshold = table.mean(axis=1)
    report.update(
        status="ok",
        categories=cats,
        per_category={
            c: {"ap": [float(x) for x in table[:, k]], "ap3d": float(table[:, k].mean()),
                "num_gt": num_gt[c], "num_pred": num_pred.get(c, 0)}
            for k, c in enumerate(cats)
        },
        per_threshold=[float(x) for x in per_threshold],
        ap3d=float(per_threshold.mean()),
    )
    return report


REPORT_SCHEMA = {
    "type": "object",
    "required": ["schema", "version", "status", "thresholds", "categories", "per_category",
                 "per_threshold", "ap3d", "num_images", "settings"],
    "properties": {
        "schema": {"const": REPORT_SCHEMA_ID},
        "version": {"const": REPORT_VERSION},
        "status": {"enum": ["ok", "no_gt"]},
        "thresholds": {"type": "array", "items": {"type": "number"}, "minItems": 10, "maxItems": 10},
        "categories": {"type": "array", "items": {"type": "string"}},
        "per_category": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["ap", "ap3d", "num_gt", "num_pred"],
                "properties": {
                    "ap": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1},
                           "minItems": 10, "maxItems": 10},
                    "ap3d": {"type": "number", "minimum": 0, "maximum": 1},
                    "num_gt": {"type": "integer", "minimum": 1},
                    "num_pred": {"type": "integer", "minimum": 0},
                },
            },
        },
        "per_threshold": {"type": "array", "items": {"type": "number"}},
        "ap3d": {"type": ["number", "null"]},
        "num_images": {"type": "integer", "minimum": 0},
        "settings": {"type": "object"},
        "detections": {"type": "array"},
    },
}


def validate_report(report: dict) -> None:
    import jsonschema

    jsonschema.validate(report, REPORT_SCHEMA)


def write_report(report: dict, path: str | Path) -> None:
    validate_report(report)
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")


def target_aware_filter(scene, categories: Sequence[str]) -> list[str]:
    """Categories to prompt for one image: those annotated in it, in vocabulary order."""
    present = {a.category for a in scene.annotations}
    return [c for c in categories if c in present]


@dataclass
class Detection2D:
    category: str
    box: tuple[float, float, float, float]
    confidence: float = 1.0
    annotation: int | None = None


class BoxProvider(Protocol):
    """Any source of per-image 2D boxes for the requested categories (e.g. an open-vocabulary detector)."""

    def __call__(self, scene, categories: Sequence[str]) -> list[Detection2D]: ...


class AnnotationBoxProvider:
    """Oracle provider: the annotated 2D boxes of the requested categories."""

    def __call__(self, scene, categories: Sequence[str]) -> list[Detection2D]:
        wanted = set(categories)
        return [Detection2D(a.category, tuple(a.box2d), 1.0, i)
                for i, a in enumerate(scene.annotations) if a.category in wanted]

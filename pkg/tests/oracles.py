"""Independent reference implementations used as test oracles."""
import numpy as np
import torch

from promptdet3d.geometry import Box3D, iou3d, random_rotation

CATS = ("a", "b", "c")


def central_difference(f, x: torch.Tensor, h: float = 1e-6) -> torch.Tensor:
    g = torch.zeros_like(x)
    flat, gf = x.view(-1), g.view(-1)
    for i in range(flat.numel()):
        old = flat[i].item()
        flat[i] = old + h
        up = f(x).item()
        flat[i] = old - h
        dn = f(x).item()
        flat[i] = old
        gf[i] = (up - dn) / (2 * h)
    return g


def assert_grad_matches(f, x: torch.Tensor, rtol=1e-4):
    x = x.detach().clone().requires_grad_(True)
    f(x).backward()
    fd = central_difference(f, x.detach().clone())
    err = (x.grad - fd).abs()
    assert (err <= rtol * fd.abs() + 1e-9).all(), (x.grad, fd)


def exhaustive_ap(images_preds, images_gts, tau):
    """Independent oracle: own greedy matching, then every PR prefix for every recall level."""
    result = {}
    cats = sorted({c for gs in images_gts for _, c in gs})
    for cat in cats:
        rows = []  # (score, is_tp)
        n_gt = 0
        for ps, gs in zip(images_preds, images_gts):
            gt_idx = [j for j, (_, c) in enumerate(gs) if c == cat]
            n_gt += len(gt_idx)
            free = set(gt_idx)
            pis = sorted((i for i, (_, c) in enumerate(ps) if c == cat), key=lambda i: -ps[i][0].score)
            for i in pis:
                cand = [(iou3d(ps[i][0], gs[j][0]), -j) for j in free]
                best = max(cand) if cand else None
                if best is not None and best[0] >= tau:
                    free.discard(-best[1])
                    rows.append((ps[i][0].score, True))
                else:
                    rows.append((ps[i][0].score, False))
        rows.sort(key=lambda r: -r[0])
        prs = []
        for k in range(1, len(rows) + 1):
            tp = sum(r[1] for r in rows[:k])
            prs.append((tp / n_gt, tp / k))
        total = 0.0
        for r in np.linspace(0, 1, 101):
            ok = [p for rec, p in prs if rec >= r]
            total += max(ok) if ok else 0.0
        result[cat] = total / 101
    return result


def random_ap_scene(rng, n_gt_max=10):
    ng = int(rng.integers(0, n_gt_max + 1))
    gts = [(Box3D(rng.uniform(-3, 3, 3) + [0, 0, 8], rng.uniform(0.5, 2, 3), random_rotation(rng)),
            str(rng.choice(CATS))) for _ in range(ng)]
    preds = []
    for g, c in gts:
        if rng.random() < 0.8:
            preds.append((Box3D(g.center + rng.normal(size=3) * 0.3, g.dims * rng.uniform(0.7, 1.3, 3),
                                g.rotation, score=float(rng.random())), c if rng.random() < 0.9 else str(rng.choice(CATS))))
    for _ in range(int(rng.integers(0, 4))):
        preds.append((Box3D(rng.uniform(-3, 3, 3) + [0, 0, 8], rng.uniform(0.5, 2, 3), random_rotation(rng),
                            score=float(rng.random())), str(rng.choice(CATS))))
    return preds[:10], gts

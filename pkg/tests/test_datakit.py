import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from promptdet3d.datakit import (
    CameraRanges, EmptyMaskError, LayoutRanges, ManifestError, load_depth, load_manifest, load_mask,
    perturb_box_prompt, sample_point_prompt, save_manifest, synth_generate,
)


def _digest(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    m = synth_generate(3, 6, out)
    return out, m


def test_generate_and_load(synth):
    out, m = synth
    loaded = load_manifest(out / "manifest.json")
    assert len(loaded.scenes) == 6
    assert sum(len(s.annotations) for s in loaded.scenes) == sum(len(s.annotations) for s in m.scenes)
    assert loaded == m
    for s in loaded.scenes:
        assert 1 <= len(s.annotations) <= 8


def test_empty_generation(tmp_path):
    m = synth_generate(0, 0, tmp_path)
    assert m.scenes == []
    assert load_manifest(tmp_path / "manifest.json").scenes == []


def test_same_seed_byte_identical(tmp_path):
    synth_generate(5, 3, tmp_path / "a")
    synth_generate(5, 3, tmp_path / "b")
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    synth_generate(6, 3, tmp_path / "c")
    assert _digest(tmp_path / "a") != _digest(tmp_path / "c")


def test_depth_inside_object_bound(synth):
    out, m = synth
    for s in m.scenes:
        depth = load_depth(out / s.depth_path)
        for a in s.annotations:
            mask = load_mask(out / a.mask_path)
            assert mask.any()
            half = 0.5 * np.linalg.norm(a.box3d.dims)
            d = depth[mask]
            z = a.box3d.center[2]
            assert (d >= z - half - 5e-4).all() and (d <= z + half + 5e-4).all()


def test_mask_inside_2d_box(synth):
    out, m = synth
    for s in m.scenes:
        for a in s.annotations:
            rows, cols = np.nonzero(load_mask(out / a.mask_path))
            x1, y1, x2, y2 = a.box2d
            assert (cols + 0.5 >= x1).all() and (cols + 0.5 <= x2).all()
            assert (rows + 0.5 >= y1).all() and (rows + 0.5 <= y2).all()


def test_background_depth_invalid(synth):
    out, m = synth
    s = m.scenes[0]
    depth = load_depth(out / s.depth_path)
    union = np.zeros_like(depth, dtype=bool)
    for a in s.annotations:
        union |= load_mask(out / a.mask_path)
    assert (depth[~union] == 0).all()
    assert (depth[union] > 0).all()


def test_camera_ranges_respected(tmp_path):
    m = synth_generate(1, 4, tmp_path, CameraRanges(64, 48, (50.0, 60.0)), LayoutRanges(objects=(1, 2), min_visible_pixels=4))
    for s in m.scenes:
        assert (s.width, s.height) == (64, 48)
        assert 50 <= s.intrinsics.fx <= 60
        assert len(s.annotations) <= 2


# --- manifest validation ---

def _write(tmp_path, data):
    p = tmp_path / "manifest.json"
    p.write_text(json.dumps(data))
    return p


def test_manifest_rejects_bad_box_with_index(synth, tmp_path):
    out, m = synth
    data = json.loads((out / "manifest.json").read_text())
    x1, y1, x2, y2 = data["scenes"][2]["annotations"][0]["box2d"]
    data["scenes"][2]["annotations"][0]["box2d"] = [x2, y1, x1, y2]
    with pytest.raises(ManifestError) as err:
        load_manifest(_write(tmp_path, data), check_files=False)
    assert err.value.index == 2


def test_manifest_rejects_missing_depth(synth, tmp_path):
    out, _ = synth
    data = json.loads((out / "manifest.json").read_text())
    data["scenes"][1]["depth"] = "depth/missing.png"
    p = out / "broken.json"
    p.write_text(json.dumps(data))
    with pytest.raises(ManifestError) as err:
        load_manifest(p)
    assert err.value.index == 1
    p.unlink()


@pytest.mark.parametrize("patch", [{"split": "dev"}, {"schema": "other"}, {"categories": []}])
def test_manifest_header_and_vocabulary(synth, tmp_path, patch):
    out, _ = synth
    data = json.loads((out / "manifest.json").read_text())
    data.update(patch)
    with pytest.raises(ManifestError):
        load_manifest(_write(tmp_path, data), check_files=False)


def test_manifest_round_trip(synth, tmp_path):
    out, m = synth
    save_manifest(m, tmp_path / "copy.json")
    assert load_manifest(tmp_path / "copy.json", check_files=False) == m


# --- prompts ---

def test_perturbation_identity_bound_and_determinism(rng):
    box = (10.0, 20.0, 50.0, 40.0)
    assert perturb_box_prompt(box, rng, 0.0) == box
    for _ in range(500):
        p = perturb_box_prompt(box, rng, 0.1)
        d = np.abs(np.subtract(p, box))
        assert (d[[0, 2]] <= 0.1 * 40 + 1e-12).all() and (d[[1, 3]] <= 0.1 * 20 + 1e-12).all()
    a = perturb_box_prompt(box, np.random.default_rng(4))
    b = perturb_box_prompt(box, np.random.default_rng(4))
    assert a == b
    clamped = perturb_box_prompt((0.0, 0.0, 10.0, 10.0), np.random.default_rng(0), 0.1, width=10, height=10)
    assert min(clamped) >= 0 and max(clamped) <= 10


def test_point_prompt_examples(rng):
    m = np.zeros((5, 7), dtype=bool)
    m[3, 4] = True
    assert sample_point_prompt(m, rng) == (4, 3)
    with pytest.raises(EmptyMaskError):
        sample_point_prompt(np.zeros((3, 3), dtype=bool), rng)
    m = rng.random((20, 20)) < 0.3
    for _ in range(200):
        u, v = sample_point_prompt(m, rng)
        assert m[v, u]


def test_point_prompt_uniform_chi_square():
    stats = pytest.importorskip("scipy.stats")
    mask = np.zeros((40, 40), dtype=bool)
    mask[2:12, 2:12] = True      # 100
    mask[20:25, 0:40] = True     # 200
    mask[30:40, 30:33] = True    # 30
    mask[0:15, 20:28] = True     # 120
    regions = np.zeros((40, 40), dtype=int)
    regions[20:25, :] = 1
    regions[30:40, 30:33] = 2
    regions[0:15, 20:28] = 3
    rng = np.random.default_rng(2024)
    counts = np.zeros(4)
    for _ in range(10_000):
        u, v = sample_point_prompt(mask, rng)
        counts[regions[v, u]] += 1
    areas = np.array([(mask & (regions == k)).sum() for k in range(4)], dtype=float)
    assert areas.tolist() == [100, 200, 30, 120]
    assert stats.chisquare(counts, 10_000 * areas / areas.sum()).pvalue > 0.01

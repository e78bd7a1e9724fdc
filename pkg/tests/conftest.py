import numpy as np
import pytest
import torch

from promptdet3d.config import ModelConfig
from promptdet3d.geometry import Box3D, Intrinsics, random_rotation


@pytest.fixture
def tiny_cfg() -> ModelConfig:
    return ModelConfig(image_height=32, image_width=48, patch=8, width=16, blocks=4, stages=4, heads=2,
                       cam_channels=8, she_degree=2, decoder_mlp=32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


def random_box(rng, spread=0.4, center=(0.0, 0.0, 5.0)):
    return Box3D(np.asarray(center) + rng.normal(size=3) * spread, rng.uniform(0.5, 2.0, 3), random_rotation(rng))


def random_overlapping_pair(rng):
    while True:
        a, b = random_box(rng), random_box(rng)
        if np.linalg.norm(a.center - b.center) < 0.5 * min(a.dims.min(), b.dims.min()):
            return a, b


@pytest.fixture
def camera() -> Intrinsics:
    return Intrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)


def tiny_run_config(**train):
    from promptdet3d.config import RunConfig, SynthConfig, TrainConfig

    cfg = RunConfig()
    cfg.model = ModelConfig(image_height=32, image_width=48, patch=8, width=16, blocks=4, stages=4, heads=2,
                            cam_channels=8, she_degree=2, decoder_mlp=32)
    cfg.synth = SynthConfig(n_scenes=4, focal=(40.0, 60.0), objects=(1, 3))
    cfg.train = TrainConfig(**{"steps": 5, "batch_size": 2, "lr": 1e-3, "log_every": 1, **train})
    return cfg


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Four 48x32 synthetic scenes shared by the training and CLI tests."""
    from promptdet3d.datakit import CameraRanges, LayoutRanges, synth_generate

    out = tmp_path_factory.mktemp("tiny_synth")
    synth_generate(0, 4, out, CameraRanges(48, 32, (40.0, 60.0)), LayoutRanges(objects=(1, 3)))
    return out / "manifest.json"


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])

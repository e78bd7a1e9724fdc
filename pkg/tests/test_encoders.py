import pytest
import torch

from promptdet3d.encoders import ConvStem, GeometricEncoder, PromptableEncoder, freeze, resample_to
from promptdet3d.layers import ShapeError

HW = (32, 48)


@pytest.fixture(params=[PromptableEncoder, GeometricEncoder])
def encoder(request):
    return request.param(HW, patch=8, width=16, blocks=4, stages=4, heads=2).eval()


def test_stage_shapes_on_zero_image(encoder):
    out = encoder(torch.zeros(2, 3, *HW))
    assert len(out.stages) == 4
    for f in out.stages + [out.final]:
        assert f.shape == (2, 4, 6, 16)
        assert torch.isfinite(f).all()
    assert out.grid == (4, 6)


def test_deterministic(encoder):
    img = torch.rand(1, 3, *HW)
    a, b = encoder(img), encoder(img)
    assert all(torch.equal(x, y) for x, y in zip(a.stages, b.stages))


def test_one_patch_change_propagates(encoder):
    img = torch.rand(1, 3, *HW)
    img2 = img.clone()
    img2[:, :, :8, :8] += 0.5
    a, b = encoder(img).final, encoder(img2).final
    # a far-away cell changes too: attention mixes globally
    assert not torch.allclose(a[0, -1, -1], b[0, -1, -1])


def test_rejects_bad_shapes(encoder):
    with pytest.raises(ShapeError):
        encoder(torch.zeros(1, 3, 30, 48))
    with pytest.raises(ShapeError):
        encoder(torch.zeros(1, 3, 40, 48))  # divisible but not the configured grid
    with pytest.raises(ShapeError):
        encoder(torch.zeros(1, 1, *HW))


def test_independent_parameters():
    a = PromptableEncoder(HW, 8, 16, 4, 4, 2)
    b = GeometricEncoder(HW, 8, 16, 4, 4, 2)
    assert not torch.equal(a.patch_embed.weight, b.patch_embed.weight)


def test_load_pretrained_is_a_seam():
    with pytest.raises(NotImplementedError):
        PromptableEncoder(HW, 8, 16, 4, 4, 2).load_pretrained("weights.pt")


def test_stem_grid_and_zero():
    stem = ConvStem(8, 16, bias=False)
    out = stem(torch.zeros(1, 3, *HW), (4, 6))
    assert out.shape == (1, 4, 6, 16)
    assert torch.count_nonzero(out) == 0
    with pytest.raises(ShapeError):
        stem(torch.zeros(1, 3, *HW), (5, 6))


def test_stem_deterministic_under_seed():
    img = torch.rand(1, 3, *HW)
    torch.manual_seed(3)
    a = ConvStem(8, 16)(img)
    torch.manual_seed(3)
    b = ConvStem(8, 16)(img)
    assert torch.equal(a, b)


def test_resample_identity_and_shape():
    x = torch.rand(1, 4, 6, 5)
    assert resample_to(x, (4, 6)) is x
    assert resample_to(x, (8, 12)).shape == (1, 8, 12, 5)


def test_frozen_encoder_bit_identical_after_step():
    enc = PromptableEncoder(HW, 8, 16, 4, 4, 2)
    head = torch.nn.Linear(16, 1)
    freeze(enc)
    before = [p.clone() for p in enc.parameters()]
    opt = torch.optim.AdamW([p for p in list(enc.parameters()) + list(head.parameters()) if p.requires_grad], lr=0.1)
    loss = head(enc(torch.rand(1, 3, *HW)).final).sum()
    loss.backward()
    opt.step()
    assert all(torch.equal(a, b) for a, b in zip(before, enc.parameters()))

import pytest
import torch

from promptdet3d.aggregator import Aggregator2D, AlignmentUnit, gate_fuse
from promptdet3d.encoders import StageFeatures
from promptdet3d.layers import ShapeError


def _stages(shape, n=4, dtype=torch.float32):
    maps = [torch.randn(*shape, dtype=dtype) for _ in range(n)]
    return StageFeatures(maps, maps[-1])


def test_gate_endpoints_bitwise():
    fs, fd = torch.randn(2, 4, 6, 8), torch.randn(2, 4, 6, 8)
    assert torch.equal(gate_fuse(fs, fd, 1.0), fs)
    assert torch.equal(gate_fuse(fs, fd, 0.0), fd)
    assert torch.equal(gate_fuse(fs, fd, torch.tensor(1.0)), fs)
    assert torch.equal(gate_fuse(fs, fd, torch.tensor(0.0)), fd)


def test_gate_midpoint():
    out = gate_fuse(torch.full((1, 2, 2, 3), 2.0), torch.full((1, 2, 2, 3), 4.0), 0.5)
    assert torch.equal(out, torch.full((1, 2, 2, 3), 3.0))


def test_gate_shape_mismatch():
    with pytest.raises(ShapeError):
        gate_fuse(torch.zeros(1, 2, 2, 3), torch.zeros(1, 2, 3, 3), 0.5)


def test_gates_initialize_to_half():
    agg = Aggregator2D(16, 2)
    assert agg.gates.tolist() == [0.5, 0.5, 0.5, 0.5]


def test_alignment_zero_value_projection():
    unit = AlignmentUnit(8, 2)
    torch.nn.init.zeros_(unit.attn.v_proj.weight)
    torch.nn.init.zeros_(unit.attn.v_proj.bias)
    torch.nn.init.zeros_(unit.attn.out_proj.bias)
    fq, fused = torch.randn(1, 3, 4, 8), torch.randn(1, 3, 4, 8)
    q, out = unit(fq, fused)
    assert q.shape == fq.shape and out.shape == fused.shape
    assert torch.equal(out, unit.norm(fused))


def test_alignment_permutation_equivariance():
    unit = AlignmentUnit(8, 2)
    fq, fused = torch.randn(1, 3, 4, 8), torch.randn(1, 3, 4, 8)
    perm = torch.randperm(12)

    def p(x):
        return x.reshape(1, 12, 8)[:, perm].reshape(1, 3, 4, 8)

    q, out = unit(fq, fused)
    q2, out2 = unit(p(fq), p(fused))
    torch.testing.assert_close(q2, p(q), atol=1e-6, rtol=0)
    torch.testing.assert_close(out2, p(out), atol=1e-6, rtol=0)


def test_alignment_rejects_mismatch():
    with pytest.raises(ShapeError):
        AlignmentUnit(8, 2)(torch.randn(1, 3, 4, 8), torch.randn(1, 3, 5, 8))


def test_aggregate_outputs_and_equal_inputs_ignore_gates():
    agg = Aggregator2D(8, 2)
    fs = _stages((1, 3, 4, 8))
    fq0 = torch.randn(1, 3, 4, 8)
    outs = agg(fs, fs, fq0)
    assert len(outs) == 4 and all(o.shape == (1, 3, 4, 8) for o in outs)
    with torch.no_grad():
        agg.gates.copy_(torch.tensor([0.1, 0.9, -0.3, 1.7]))
    for a, b in zip(outs, agg(fs, fs, fq0)):
        torch.testing.assert_close(a, b, atol=1e-6, rtol=1e-6)


def test_aggregate_deterministic_and_resamples():
    agg = Aggregator2D(8, 2)
    fs, fd = _stages((1, 3, 4, 8)), _stages((1, 6, 8, 8))
    fq0 = torch.randn(1, 3, 4, 8)
    a, b = agg(fs, fd, fq0), agg(fs, fd, fq0)
    assert all(torch.equal(x, y) for x, y in zip(a, b))
    with pytest.raises(ShapeError):
        agg(fs, fd, torch.randn(1, 2, 4, 8))
    with pytest.raises(ShapeError):
        agg(_stages((1, 3, 4, 8), n=3), fd, fq0)


def test_gate_gradient_matches_finite_differences():
    torch.manual_seed(5)
    agg = Aggregator2D(8, 2).double()
    fs, fd = _stages((1, 3, 4, 8), dtype=torch.float64), _stages((1, 3, 4, 8), dtype=torch.float64)
    fq0 = torch.randn(1, 3, 4, 8, dtype=torch.float64)
    w = [torch.randn(1, 3, 4, 8, dtype=torch.float64) for _ in range(4)]

    def loss():
        return sum((o * wi).sum() for o, wi in zip(agg(fs, fd, fq0), w))

    agg.zero_grad()
    loss().backward()
    grad = agg.gates.grad.clone()
    h = 1e-6
    for i in range(4):
        with torch.no_grad():
            agg.gates[i] += h
            up = loss().item()
            agg.gates[i] -= 2 * h
            dn = loss().item()
            agg.gates[i] += h
        fd_i = (up - dn) / (2 * h)
        assert abs(grad[i].item() - fd_i) <= 1e-4 * abs(fd_i) + 1e-8

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracle
from eraque.backbone import STUDENT_SPEC, TEACHER_SPEC, build_network
from eraque.distill import (DistillConfig, attention_loss, attention_loss_batch, attention_map,
                            kd_loss, total_distill_loss, zero_norm_events)
from eraque.losses import LossConfig, combined_loss


def test_kd_examples():
    assert float(kd_loss(0.4, 0.4)) == 0.0
    assert float(kd_loss(0.7, 0.4)) == pytest.approx(0.3)
    assert float(kd_loss(0.2, 0.9)) == float(kd_loss(0.9, 0.2))


def test_attention_map_examples():
    assert torch.equal(attention_map(torch.ones(2, 3, 4)), torch.full((3, 4), 2.0))
    A = torch.randn(5, 3, 3)
    assert torch.equal(attention_map(A), attention_map(-A))
    B = torch.randn(1, 4, 4)
    assert torch.equal(attention_map(B), B[0].abs())
    with pytest.raises(ValueError):
        attention_map(torch.zeros(0, 2, 2))


def test_attention_loss_examples():
    A = torch.rand(4, 5, 6, dtype=torch.float64)
    assert float(attention_loss(A, A)) == 0.0
    assert float(attention_loss(3.7 * A, A)) == pytest.approx(0.0, abs=1e-15)
    # orthogonal unit maps: single channel, one-hot at different positions
    a, b = torch.zeros(1, 2, 2, dtype=torch.float64), torch.zeros(1, 2, 2, dtype=torch.float64)
    a[0, 0, 0], b[0, 1, 1] = 1.0, 1.0
    assert float(attention_loss(a, b)) == pytest.approx(math.sqrt(2) / (2 * 4))


def test_attention_loss_bounds_and_scale_invariance():
    rng = np.random.default_rng(3)
    for _ in range(200):
        c, h, w = rng.integers(1, 5, 3)
        As = torch.tensor(rng.normal(size=(c, h, w)))
        At = torch.tensor(rng.normal(size=(c, h, w)))
        n = c * h * w
        v = float(attention_loss(As, At))
        assert 0.0 <= v <= 1.0 / n + 1e-15
        assert float(attention_loss(As, float(rng.uniform(0.01, 100)) * As)) < 1e-12


def test_zero_norm_map_contributes_zero_and_is_counted():
    before = zero_norm_events.count
    As = torch.zeros(2, 3, 4, 4, requires_grad=True)
    At = torch.rand(2, 3, 4, 4)
    v = attention_loss_batch(As, At)
    assert torch.equal(v, torch.zeros(2))
    v.sum().backward()
    assert torch.isfinite(As.grad).all()
    assert zero_norm_events.count == before + 2


def test_stage_shape_mismatch_names_stage():
    y = torch.rand(2)
    fs = [torch.rand(2, 1, 2, 2) for _ in range(4)]
    ft = [f.clone() for f in fs]
    ft[2] = torch.rand(2, 1, 3, 3)
    with pytest.raises(ValueError, match="stage 3"):
        total_distill_loss(y, y, fs, y, ft)


def test_total_composition_example():
    y = torch.tensor([0.2, 0.9], dtype=torch.float64)
    ys = torch.tensor([0.4, 0.9], dtype=torch.float64)  # L_org = 0.1, no gated pairs
    yt = torch.tensor([0.1, 0.6], dtype=torch.float64)  # kd = (0.3 + 0.3) / 2
    f = [torch.rand(2, 2, 3, 3, dtype=torch.float64) for _ in range(4)]
    total, parts = total_distill_loss(y, ys, f, yt, [t.clone() for t in f], parts=True)
    assert float(parts["mae"]) == pytest.approx(0.1)
    assert float(parts["kd"]) == pytest.approx(0.3)
    assert float(total) == pytest.approx(0.4)


def test_teacher_feature_scaling_leaves_attention_terms_unchanged():
    rng = torch.Generator().manual_seed(0)
    y = torch.rand(3, generator=rng, dtype=torch.float64)
    ys, yt = torch.rand(3, generator=rng, dtype=torch.float64), torch.rand(3, generator=rng, dtype=torch.float64)
    fs = [torch.rand(3, 2, 4, 4, generator=rng, dtype=torch.float64) for _ in range(4)]
    ft = [torch.rand(3, 2, 4, 4, generator=rng, dtype=torch.float64) for _ in range(4)]
    _, p1 = total_distill_loss(y, ys, fs, yt, ft, parts=True)
    _, p2 = total_distill_loss(y, ys, fs, yt, [2 * t for t in ft], parts=True)
    for i in range(1, 5):
        assert float(p1[f"at{i}"]) == pytest.approx(float(p2[f"at{i}"]), abs=1e-15)


def test_self_distillation_reduces_to_plain_loss():
    teacher = build_network(TEACHER_SPEC).eval()
    student = build_network(TEACHER_SPEC).eval()
    student.load_state_dict(teacher.state_dict())
    x = torch.rand(3, 3, 64, 112)
    y = torch.tensor([0.2, 0.5, 0.55])
    ys, fs = student(x)
    with torch.no_grad():
        yt, ft = teacher(x)
    total, parts = total_distill_loss(y, ys, fs, yt, ft, parts=True)
    assert float(parts["kd"]) == 0.0
    assert all(float(parts[f"at{i}"]) == 0.0 for i in range(1, 5))
    assert float(total.detach()) == float(combined_loss(y, ys).detach())
    total.backward()
    assert all(torch.isfinite(p.grad).all() for p in student.parameters() if p.grad is not None)


def test_toggles_off_equals_plain_objective():
    y, ys, yt = torch.rand(4), torch.rand(4), torch.rand(4)
    fs = [torch.rand(4, 2, 3, 3) for _ in range(4)]
    ft = [torch.rand(4, 2, 3, 3) for _ in range(4)]
    off = DistillConfig(False, False)
    assert torch.equal(total_distill_loss(y, ys, fs, yt, ft, dcfg=off), combined_loss(y, ys))


def test_teacher_gets_no_gradient():
    teacher = build_network(TEACHER_SPEC)
    student = build_network(STUDENT_SPEC)
    x = torch.rand(2, 3, 64, 112)
    ys, fs = student(x)
    yt, ft = teacher(x)
    total_distill_loss(torch.rand(2), ys, fs, yt, ft).backward()
    assert all(p.grad is None for p in teacher.parameters())


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_matches_oracle(n, c, seed):
    g = np.random.default_rng(seed)
    y, ys, yt = g.random(n), g.random(n), g.random(n)
    fs = [g.normal(size=(n, c, 2 + i % 2, 3)) for i in range(4)]
    ft = [g.normal(size=(n, c, 2 + i % 2, 3)) for i in range(4)]
    T = lambda a: torch.tensor(a, dtype=torch.float64)  # noqa: E731
    got = float(total_distill_loss(T(y), T(ys), [T(a) for a in fs], T(yt), [T(a) for a in ft]))
    want = oracle.total_distill(list(y), list(ys), list(yt),
                                [[fs[i][b].tolist() for i in range(4)] for b in range(n)],
                                [[ft[i][b].tolist() for i in range(4)] for b in range(n)])
    assert got == pytest.approx(want, abs=1e-9)

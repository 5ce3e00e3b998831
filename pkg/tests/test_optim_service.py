# tests/test_optim_service.py
import math

import numpy as np
import pytest
import torch
import torch.nn as nn

from services.optim_service import (
    AdamW, adamw_update, build_optimizer, cosine_lr, parameter_groups, warmup_steps,
)
from settings import TrainConfig
from utils.exceptions import NonFiniteGradient, ShapeMismatch


# --- LEARNING RATE ---

@pytest.mark.parametrize("step, factor", [(0, 0.0), (5, 0.5), (10, 1.0), (55, 0.5), (100, 0.0)])
def test_schedule_knots(step, factor):
    config = TrainConfig(lr_base=1e-3, warmup_ratio=0.1)
    assert warmup_steps(100, 0.1) == 10
    assert cosine_lr(step, 100, config) == pytest.approx(1e-3 * factor, abs=1e-15)


def test_schedule_without_warmup_starts_at_base():
    config = TrainConfig(lr_base=2e-4, warmup_ratio=0.0)
    assert cosine_lr(0, 50, config) == pytest.approx(2e-4)
    assert cosine_lr(50, 50, config) == pytest.approx(0.0, abs=1e-18)


def test_schedule_is_monotone_after_warmup():
    config = TrainConfig(lr_base=1e-3, warmup_ratio=0.2)
    lrs = [cosine_lr(s, 40, config) for s in range(8, 41)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_step_outside_schedule():
    with pytest.raises(ValueError):
        cosine_lr(101, 100, TrainConfig())


# --- ADAMW ---

def reference_adamw(theta, grads, lr, b1, b2, eps, wd):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        theta = theta * (1 - lr * wd) - lr * m_hat / (math.sqrt(v_hat) + eps)
    return theta


def test_scalar_recurrence_over_many_steps():
    rng = np.random.default_rng(0)
    grads = rng.normal(size=100).tolist()
    param = torch.tensor([0.7])
    state = {}
    for g in grads:
        adamw_update(param, torch.tensor([g]), state, lr=1e-2, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.1)
    expected = reference_adamw(0.7, grads, 1e-2, 0.9, 0.999, 1e-8, 0.1)
    assert param.item() == pytest.approx(expected, abs=1e-12)
    assert state["step"] == 100


def test_zero_gradient_without_decay_leaves_parameter():
    param = torch.tensor([1.5, -2.0])
    state = {}
    for _ in range(5):
        adamw_update(param, torch.zeros(2), state, lr=0.1)
    assert param.tolist() == [1.5, -2.0]


def test_decay_only_shrinks_geometrically():
    param = torch.tensor([3.0])
    state = {}
    for _ in range(7):
        adamw_update(param, torch.zeros(1), state, lr=0.01, weight_decay=0.5)
    assert param.item() == pytest.approx(3.0 * (1 - 0.01 * 0.5) ** 7, abs=1e-12)


def test_update_errors():
    with pytest.raises(ShapeMismatch):
        adamw_update(torch.zeros(2), torch.zeros(3), {}, lr=0.1)
    with pytest.raises(NonFiniteGradient):
        adamw_update(torch.zeros(2), torch.tensor([0.0, float("nan")]), {}, lr=0.1)


def test_optimizer_matches_torch_adamw():
    torch.manual_seed(0)
    ours = nn.Linear(4, 3)
    theirs = nn.Linear(4, 3)
    theirs.load_state_dict(ours.state_dict())

    opt_ours = AdamW(ours.parameters(), lr=1e-2, weight_decay=0.05)
    opt_theirs = torch.optim.AdamW(theirs.parameters(), lr=1e-2, weight_decay=0.05)
    for _ in range(20):
        x = torch.randn(8, 4)
        for model, opt in ((ours, opt_ours), (theirs, opt_theirs)):
            opt.zero_grad()
            model(x).pow(2).sum().backward()
            opt.step()
    for a, b in zip(ours.parameters(), theirs.parameters()):
        torch.testing.assert_close(a, b, atol=1e-12, rtol=0)


def test_set_lr_updates_every_group():
    model = nn.Linear(2, 2)
    opt = build_optimizer(model, TrainConfig(weight_decay=0.1))
    opt.set_lr(0.3)
    assert [g["lr"] for g in opt.param_groups] == [0.3, 0.3]


def test_parameter_groups_skip_biases_and_norms():
    model = nn.Sequential(nn.Linear(3, 3), nn.LayerNorm(3))
    decay, no_decay = parameter_groups(model, 0.1)
    assert decay["weight_decay"] == 0.1 and no_decay["weight_decay"] == 0.0
    assert [p.shape for p in decay["params"]] == [torch.Size([3, 3])]
    assert len(no_decay["params"]) == 3


def test_embedding_tables_are_decayed():
    model = nn.Sequential(nn.Embedding(5, 3), nn.LayerNorm(3))
    decay, no_decay = parameter_groups(model, 0.1)
    assert [p.shape for p in decay["params"]] == [torch.Size([5, 3])]
    assert all(p.ndim == 1 for p in no_decay["params"])

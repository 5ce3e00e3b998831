# tests/test_fusion_frontdoor.py
import math

import pytest
import torch
import torch.nn.functional as F

from models import Ablation, FdaValues
from network.frontdoor import (
    ADPCModel, Classifier, FrontDoorAdjustment, attention_matrix, concat_multimodal, fda_mdo, fda_out, masked_mean,
)
from network.fusion import CausalAttention, CausalFusion, CrossModalAttention, concat_tokens
from network.gradients import gradcheck_module, spot_check_parameters
from utils.exceptions import AllTokensMasked, ShapeMismatch

VOCAB_SIZE = 20


def text_batch(batch: int, max_len: int, n_real: int = 6, seed: int = 0):
    g = torch.Generator().manual_seed(seed)
    ids = torch.zeros(batch, max_len, dtype=torch.long)
    ids[:, 0] = 2
    ids[:, 1:n_real - 1] = torch.randint(4, VOCAB_SIZE, (batch, n_real - 2), generator=g)
    ids[:, n_real - 1] = 3
    return ids, ids != 0


def model_inputs(config, batch: int = 2, seed: int = 0):
    g = torch.Generator().manual_seed(seed)
    visual = torch.randn((batch,) + tuple(config.volume_dims), generator=g)
    ids, mask = text_batch(batch, config.max_len, seed=seed)
    return visual, ids, mask


# --- CONCATENATION ---

def test_concat_keeps_visual_rows_first():
    fv, ft = torch.randn(2, 3, 4), torch.randn(2, 5, 4)
    t_mask = torch.tensor([[True] * 4 + [False]] * 2)
    cat, mask = concat_multimodal(fv, ft, None, t_mask)
    assert cat.shape == (2, 8, 4)
    assert torch.equal(cat[:, :3], fv) and torch.equal(cat[:, 3:], ft)
    assert mask[0].tolist() == [True] * 7 + [False]


def test_concat_rejects_width_mismatch():
    with pytest.raises(ShapeMismatch):
        concat_tokens(torch.randn(1, 2, 4), torch.randn(1, 2, 5))


# --- CROSS-MODAL ATTENTION ---

def test_cross_attention_shapes_and_alpha_gradient():
    torch.manual_seed(0)
    cross = CrossModalAttention(8, 2)
    fv, ft = torch.randn(2, 3, 8), torch.randn(2, 5, 8)
    f_vtt, f_tvv = cross(fv, ft)
    assert f_vtt.shape == (2, 3, 8) and f_tvv.shape == (2, 5, 8)

    f_vtt.sum().backward()
    expected = cross.visual_to_text(fv, ft, ft).sum()
    assert cross.alpha.grad.item() == pytest.approx(expected.item(), rel=1e-10)
    assert cross.beta.grad is None


# --- CAUSAL ATTENTION ---

def test_causal_branches_are_row_stochastic():
    torch.manual_seed(1)
    caam = CausalAttention(8)
    mask = torch.tensor([[True, True, True, True, False]])
    causal_w, confounder_w = caam.branch_weights(torch.randn(1, 5, 8), mask)
    for w in (causal_w, confounder_w):
        torch.testing.assert_close(w.sum(-1), torch.ones(1, 5))
        assert torch.all(w[..., 4] == 0)


def test_confounder_branch_prefers_lowest_scores():
    torch.manual_seed(2)
    caam = CausalAttention(8)
    causal_w, confounder_w = caam.branch_weights(torch.randn(1, 6, 8))
    assert torch.equal(causal_w.argmax(-1), confounder_w.argmin(-1))


def test_zero_lambda_is_plain_residual_attention():
    torch.manual_seed(3)
    caam = CausalAttention(8, lam=0.0)
    x = torch.randn(2, 4, 8)
    causal_w, _ = caam.branch_weights(x)
    expected = x + caam.out_proj(torch.matmul(causal_w, caam.v_proj(x)))
    torch.testing.assert_close(caam(x), expected)


@pytest.mark.parametrize("raw, clamped", [(2.0, 1.0), (-1.0, 0.0), (0.25, 0.25)])
def test_lambda_is_clamped(raw, clamped):
    caam = CausalAttention(4, lam=raw)
    assert caam.lam.item() == clamped


def test_causal_attention_gradients():
    torch.manual_seed(4)
    assert gradcheck_module(CausalAttention(4), torch.randn(1, 3, 4))


# --- CAUSAL FUSION ---

def test_fusion_mediator_is_layer_normalized():
    torch.manual_seed(5)
    fusion = CausalFusion(8, 2)
    t_mask = torch.tensor([[True, True, True, False]] * 2)
    mediator, mask = fusion(torch.randn(2, 3, 8), torch.randn(2, 4, 8), None, t_mask)
    assert mediator.shape == (2, 7, 8)
    assert mask.shape == (2, 7)
    torch.testing.assert_close(mediator.mean(-1), torch.zeros(2, 7), atol=1e-10, rtol=0)


def test_zero_gain_norm_gives_bias_everywhere():
    fusion = CausalFusion(8, 2)
    with torch.no_grad():
        fusion.norm.weight.zero_()
        fusion.norm.bias.fill_(0.3)
    mediator, _ = fusion(torch.randn(1, 2, 8), torch.randn(1, 3, 8))
    torch.testing.assert_close(mediator, torch.full((1, 5, 8), 0.3))


def test_fusion_gradients():
    torch.manual_seed(6)
    assert gradcheck_module(CausalFusion(4, 2), torch.randn(1, 2, 4), torch.randn(1, 3, 4),
                            output_fn=lambda out: out[0])


# --- FRONT-DOOR ADJUSTMENT ---

def test_attention_matrix_is_row_stochastic():
    a = attention_matrix(torch.randn(2, 5, 4), torch.randn(2, 5, 4))
    torch.testing.assert_close(a.sum(-1), torch.ones(2, 5))
    assert torch.all(a >= 0)


def test_mdo_uses_features_as_values_by_default():
    features, mediator = torch.randn(1, 4, 6), torch.randn(1, 4, 6)
    weights = torch.softmax(features @ mediator.transpose(-2, -1) / math.sqrt(6), dim=-1)
    torch.testing.assert_close(fda_mdo(features, mediator), weights @ features)
    torch.testing.assert_close(fda_mdo(features, mediator, values=FdaValues.M), weights @ mediator)


def test_constant_mediator_passes_through():
    features = torch.randn(1, 5, 4)
    mediator = torch.randn(1, 1, 4).expand(1, 5, 4).contiguous()
    out, _ = FrontDoorAdjustment()(features, mediator)
    torch.testing.assert_close(out, mediator)


def test_masked_rows_do_not_leak_into_real_rows():
    features, mediator = torch.randn(1, 5, 4), torch.randn(1, 5, 4)
    mask = torch.tensor([[True, True, True, False, False]])
    base, _ = FrontDoorAdjustment()(features, mediator, mask)
    noisy = features.clone()
    noisy[:, 3:] = 100 * torch.randn(1, 2, 4)
    out, _ = FrontDoorAdjustment()(noisy, mediator, mask)
    torch.testing.assert_close(out[:, :3], base[:, :3])


def test_fda_shapes_must_agree():
    with pytest.raises(ShapeMismatch):
        fda_out(torch.randn(1, 3, 4), torch.randn(1, 4, 4), torch.randn(1, 3, 4))


@pytest.mark.parametrize("values", FdaValues.ALL)
def test_fda_gradients(values):
    torch.manual_seed(7)
    assert gradcheck_module(FrontDoorAdjustment(values), torch.randn(1, 3, 4), torch.randn(1, 3, 4),
                            output_fn=lambda out: out[0])


# --- CLASSIFIER ---

def test_zero_initialized_head_gives_uniform_probabilities():
    logits = Classifier(8, 3)(torch.randn(4, 6, 8))
    torch.testing.assert_close(torch.softmax(logits, -1), torch.full((4, 3), 1 / 3))


def test_masked_mean_ignores_padding_and_rejects_empty_rows():
    x = torch.tensor([[[1.0], [3.0], [100.0]]])
    assert masked_mean(x, torch.tensor([[True, True, False]])).item() == 2.0
    with pytest.raises(AllTokensMasked):
        masked_mean(x, torch.tensor([[False, False, False]]))


# --- FULL MODEL ---

def test_model_output_and_stage_shapes(tiny_config):
    model = ADPCModel(tiny_config, VOCAB_SIZE)
    stages = model.forward_stages(*model_inputs(tiny_config, batch=3))
    n_tokens = tiny_config.n_visual_tokens + tiny_config.max_len
    assert stages["logits"].shape == (3, 3)
    assert stages["fv"].shape == (3, tiny_config.n_visual_tokens, 8)
    for key in ("F", "f_mm", "mediator", "m_do", "f_out"):
        assert stages[key].shape == (3, n_tokens, 8)


def test_ablated_model_drops_fusion_parameters(tiny_config):
    full = ADPCModel(tiny_config, VOCAB_SIZE)
    ablated = ADPCModel(tiny_config.with_overrides(ablation_flag=Ablation.NO_CF_FDA), VOCAB_SIZE)
    assert ablated.fusion is None and ablated.fda is None
    fusion_params = sum(p.numel() for p in full.fusion.parameters())
    assert full.n_parameters - ablated.n_parameters == fusion_params


def test_ablated_model_classifies_the_multimodal_feature(tiny_config):
    config = tiny_config.with_overrides(classifier_zero_init=False)
    full = ADPCModel(config, VOCAB_SIZE).eval()
    ablated = ADPCModel(config.with_overrides(ablation_flag=Ablation.NO_CF_FDA), VOCAB_SIZE).eval()
    result = ablated.load_state_dict(full.state_dict(), strict=False)
    assert not result.missing_keys

    inputs = model_inputs(config)
    stages = full.forward_stages(*inputs)
    expected = full.classifier(stages["f_mm"], stages["mask"])
    torch.testing.assert_close(ablated(*inputs), expected)


def test_random_inputs_give_finite_logits(tiny_config):
    model = ADPCModel(tiny_config.with_overrides(classifier_zero_init=False), VOCAB_SIZE).eval()
    with torch.no_grad():
        for seed in range(100):
            visual, ids, mask = model_inputs(tiny_config, batch=2, seed=seed)
            logits = model(visual * (1 + seed % 7), ids, mask)
            assert torch.isfinite(logits).all()


def test_end_to_end_gradients_match_finite_differences(tiny_config):
    torch.manual_seed(8)
    model = ADPCModel(tiny_config.with_overrides(classifier_zero_init=False), VOCAB_SIZE)
    visual, ids, mask = model_inputs(tiny_config)
    labels = torch.tensor([0, 2])

    results = spot_check_parameters(model, lambda: F.cross_entropy(model(visual, ids, mask), labels), n=8)
    assert len(results) == 8
    assert max(r["rel_error"] for r in results) < 1e-4


def test_cross_attention_and_classifier_gradients():
    torch.manual_seed(9)
    assert gradcheck_module(CrossModalAttention(4, 2), torch.randn(1, 3, 4), torch.randn(1, 3, 4),
                            output_fn=lambda out: torch.cat(out, dim=1))
    mask = torch.tensor([[True, True, False]])
    assert gradcheck_module(Classifier(4, 3, zero_init=False), torch.randn(1, 3, 4), mask=mask)

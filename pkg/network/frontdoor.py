# network/frontdoor.py
import math
from typing import Dict, Optional, Tuple

import torch
import torch.nn as nn

from models import Ablation, FdaValues, VisualSource
from network.blocks import (
    FeatureProjection, PatchEmbed3d, TextEncoder, TransformerEncoder, VisualEncoder,
    key_mask_for_scores, stable_softmax,
)
from network.fusion import CausalFusion, concat_tokens
from utils.exceptions import AllTokensMasked, ShapeMismatch
from utils.logger import setup_logger

logger = setup_logger("network")


# --- FRONT-DOOR OPERATORS ---

def concat_multimodal(fv: torch.Tensor, ft: torch.Tensor,
                      v_mask: Optional[torch.Tensor] = None,
                      t_mask: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    """F = fv ++ ft along the token axis."""
    return concat_tokens(fv, ft, v_mask, t_mask)


def _check_pair(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{what}: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")


def attention_matrix(query: torch.Tensor, key: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """softmax(Q K^T / sqrt(d)) over the last axis, single head, masked keys get zero weight."""
    scores = torch.matmul(query, key.transpose(-2, -1)) / math.sqrt(query.shape[-1])
    return stable_softmax(scores, dim=-1, mask=key_mask_for_scores(mask, scores.dim()))


def fda_mdo(features: torch.Tensor, mediator: torch.Tensor, mask: Optional[torch.Tensor] = None,
            values: str = FdaValues.F) -> torch.Tensor:
    """M_do = softmax(F M^T / sqrt(d)) V, with V = F by default (V = M when values == 'M')."""
    _check_pair(features, mediator, "fda_mdo")
    weights = attention_matrix(features, mediator, mask)
    return torch.matmul(weights, features if values == FdaValues.F else mediator)


def fda_out(features: torch.Tensor, mediator: torch.Tensor, m_do: torch.Tensor,
            mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """do(F) estimate: softmax(F M_do^T / sqrt(d)) M."""
    _check_pair(features, mediator, "fda_out")
    _check_pair(features, m_do, "fda_out")
    return torch.matmul(attention_matrix(features, m_do, mask), mediator)


class FrontDoorAdjustment(nn.Module):
    """Parameter-free; holds only the choice of value matrix for the M_do product."""

    def __init__(self, values: str = FdaValues.F):
        super().__init__()
        self.values = values

    def forward(self, features: torch.Tensor, mediator: torch.Tensor,
                mask: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        m_do = fda_mdo(features, mediator, mask, self.values)
        return fda_out(features, mediator, m_do, mask), m_do


# --- CLASSIFIER ---

def masked_mean(features: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    if mask is None:
        return features.mean(dim=1)
    counts = mask.sum(dim=1)
    if (counts == 0).any():
        raise AllTokensMasked("Every token of a sample is masked; nothing to pool")
    weights = mask.to(features.dtype).unsqueeze(-1)
    return (features * weights).sum(dim=1) / counts.unsqueeze(-1).to(features.dtype)


class Classifier(nn.Module):
    def __init__(self, d_model: int, n_classes: int, zero_init: bool = True):
        super().__init__()
        self.head = nn.Linear(d_model, n_classes)
        if zero_init:
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)

    def forward(self, features: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        return self.head(masked_mean(features, mask))


# --- FULL MODEL ---

class ADPCModel(nn.Module):
    """
    visual/text encoders -> CF mediator -> concat -> multi-modal encoder -> FDA -> classifier.

    With ablation "no_cf_fda" the fusion and FDA stages are not built at all and the
    encoded multi-modal feature goes straight to the classifier.
    """

    def __init__(self, config, vocab_size: int):
        super().__init__()
        self.ablation = config.ablation_flag
        d, heads, drop = config.d_model, config.n_heads, config.dropout
        depth_v, depth_t, depth_mm = config.encoder_depths

        if config.visual_source == VisualSource.FEATURES:
            entry = FeatureProjection(config.feature_tokens, config.feature_dim, d)
        else:
            entry = PatchEmbed3d(config.volume_dims, config.patch_size, d)
        self.visual_encoder = VisualEncoder(entry, depth_v, d, heads, drop)
        self.text_encoder = TextEncoder(vocab_size, config.max_len, depth_t, d, heads, drop)
        self.multimodal_encoder = TransformerEncoder(depth_mm, d, heads, drop)
        self.classifier = Classifier(d, config.n_classes, config.classifier_zero_init)

        if self.ablation == Ablation.NONE:
            self.fusion = CausalFusion(d, heads, drop)
            self.fda = FrontDoorAdjustment(config.fda_eq8_values)
        else:
            self.fusion = None
            self.fda = None

        logger.debug(f"ADPCModel built: ablation={self.ablation}, parameters={self.n_parameters}")

    @property
    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward_stages(self, visual: torch.Tensor, token_ids: torch.Tensor,
                       attention_mask: torch.Tensor) -> Dict[str, torch.Tensor]:
        """Every intermediate of one forward pass, keyed by stage name."""
        stages: Dict[str, torch.Tensor] = {}
        fv = self.visual_encoder(visual)
        ft = self.text_encoder(token_ids, attention_mask)
        v_mask = torch.ones(fv.shape[:2], dtype=torch.bool, device=fv.device)
        stages.update(fv=fv, ft=ft)

        features, mask = concat_multimodal(fv, ft, v_mask, attention_mask)
        f_mm = self.multimodal_encoder(features, mask)
        stages.update(F=features, f_mm=f_mm, mask=mask)

        out = f_mm
        if self.ablation == Ablation.NONE:
            mediator, _ = self.fusion(fv, ft, v_mask, attention_mask)
            out, m_do = self.fda(f_mm, mediator, mask)
            stages.update(mediator=mediator, m_do=m_do, f_out=out)

        stages["logits"] = self.classifier(out, mask)
        return stages

    def forward(self, visual: torch.Tensor, token_ids: torch.Tensor,
                attention_mask: torch.Tensor) -> torch.Tensor:
        return self.forward_stages(visual, token_ids, attention_mask)["logits"]

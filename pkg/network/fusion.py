# network/fusion.py
import math
from typing import Optional, Tuple

import torch
import torch.nn as nn

from network.blocks import LN_EPS, MultiHeadAttention, key_mask_for_scores, stable_softmax
from utils.exceptions import ShapeMismatch


def full_mask(features: torch.Tensor) -> torch.Tensor:
    return torch.ones(features.shape[:2], dtype=torch.bool, device=features.device)


def concat_tokens(first: torch.Tensor, second: torch.Tensor,
                  first_mask: Optional[torch.Tensor] = None,
                  second_mask: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    """Token-axis concatenation, `first` rows on top. Masks follow the same order."""
    if first.dim() != 3 or second.dim() != 3:
        raise ShapeMismatch(f"expected (batch, tokens, d) inputs, got {tuple(first.shape)} and {tuple(second.shape)}")
    if first.shape[0] != second.shape[0] or first.shape[-1] != second.shape[-1]:
        raise ShapeMismatch(f"cannot concatenate {tuple(first.shape)} with {tuple(second.shape)}")
    first_mask = full_mask(first) if first_mask is None else first_mask
    second_mask = full_mask(second) if second_mask is None else second_mask
    return torch.cat([first, second], dim=1), torch.cat([first_mask, second_mask], dim=1)


class CrossModalAttention(nn.Module):
    """f_VTT = alpha * MHA(fv, ft, ft) and f_TVV = beta * MHA(ft, fv, fv)."""

    def __init__(self, d_model: int, n_heads: int, dropout: float = 0.0):
        super().__init__()
        self.visual_to_text = MultiHeadAttention(d_model, n_heads, dropout)
        self.text_to_visual = MultiHeadAttention(d_model, n_heads, dropout)
        self.alpha = nn.Parameter(torch.tensor(1.0))
        self.beta = nn.Parameter(torch.tensor(1.0))

    def forward(self, fv: torch.Tensor, ft: torch.Tensor,
                v_mask: Optional[torch.Tensor] = None,
                t_mask: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        if fv.shape[-1] != ft.shape[-1]:
            raise ShapeMismatch(f"visual d={fv.shape[-1]} and text d={ft.shape[-1]} differ")
        f_vtt = self.alpha * self.visual_to_text(fv, ft, ft, key_mask=t_mask)
        f_tvv = self.beta * self.text_to_visual(ft, fv, fv, key_mask=v_mask)
        return f_vtt, f_tvv


class CausalAttention(nn.Module):
    """
    Dual-branch self-attention for confounder suppression.

    Scores s are computed once. The causal branch attends with softmax(s), the
    confounder branch with softmax(-s); both read the same values:

        out = x + W_o(softmax(s) V - lambda * softmax(-s) V)

    lambda is stored raw and clamped to [0, 1] whenever it is read.
    """

    def __init__(self, d_model: int, dropout: float = 0.0, lam: float = 0.5):
        super().__init__()
        self.d_model = d_model
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)
        self.lam_raw = nn.Parameter(torch.tensor(float(lam)))

    @property
    def lam(self) -> torch.Tensor:
        return self.lam_raw.clamp(0.0, 1.0)

    def branch_weights(self, x: torch.Tensor,
                       mask: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        if x.dim() != 3 or x.shape[-1] != self.d_model:
            raise ShapeMismatch(f"expected (batch, tokens, {self.d_model}), got {tuple(x.shape)}")
        scores = torch.matmul(self.q_proj(x), self.k_proj(x).transpose(-2, -1)) / math.sqrt(self.d_model)
        key_mask = key_mask_for_scores(mask, scores.dim())
        return stable_softmax(scores, mask=key_mask), stable_softmax(-scores, mask=key_mask)

    def forward(self, x: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        causal_w, confounder_w = self.branch_weights(x, mask)
        v = self.v_proj(x)
        mixed = torch.matmul(self.dropout(causal_w), v) - self.lam * torch.matmul(self.dropout(confounder_w), v)
        return x + self.out_proj(mixed)


class CausalFusion(nn.Module):
    """Mediator M = LN(CaaM(f_VTT ++ f_TVV)); token count n_v + n_t."""

    def __init__(self, d_model: int, n_heads: int, dropout: float = 0.0):
        super().__init__()
        self.cross = CrossModalAttention(d_model, n_heads, dropout)
        self.caam = CausalAttention(d_model, dropout)
        self.norm = nn.LayerNorm(d_model, eps=LN_EPS)

    def forward(self, fv: torch.Tensor, ft: torch.Tensor,
                v_mask: Optional[torch.Tensor] = None,
                t_mask: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        f_vtt, f_tvv = self.cross(fv, ft, v_mask, t_mask)
        f_cm, mask = concat_tokens(f_vtt, f_tvv, v_mask, t_mask)
        return self.norm(self.caam(f_cm, mask)), mask

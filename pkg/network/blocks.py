# network/blocks.py
import math
from typing import Optional, Sequence

import torch
import torch.nn as nn
from einops import rearrange

from utils.exceptions import IndivisibleVolume, NonFiniteInput, ShapeMismatch

LN_EPS = 1e-5
FFN_RATIO = 4
EMBED_INIT_STD = 0.02


def stable_softmax(scores: torch.Tensor, dim: int = -1, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    Softmax with max-subtraction. Masked entries (mask False) get exactly zero weight;
    a slice whose entries are all masked comes out all zero.
    """
    if not torch.isfinite(scores).all():
        raise NonFiniteInput("softmax received NaN or infinite scores")
    if mask is not None:
        scores = scores.masked_fill(~mask, float("-inf"))
    peak = scores.amax(dim=dim, keepdim=True).detach()
    peak = torch.where(torch.isfinite(peak), peak, torch.zeros_like(peak))
    weights = torch.exp(scores - peak)
    total = weights.sum(dim=dim, keepdim=True)
    return weights / total.clamp_min(torch.finfo(weights.dtype).tiny)


def key_mask_for_scores(key_mask: Optional[torch.Tensor], n_score_dims: int) -> Optional[torch.Tensor]:
    """Broadcast a (batch, n_keys) validity mask over score tensors (..., n_queries, n_keys)."""
    if key_mask is None:
        return None
    shape = (key_mask.shape[0],) + (1,) * (n_score_dims - 2) + (key_mask.shape[-1],)
    return key_mask.reshape(shape)


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention over n_heads heads, d_k = d_model / n_heads."""

    def __init__(self, d_model: int, n_heads: int, dropout: float = 0.0):
        super().__init__()
        if d_model % n_heads != 0:
            raise ShapeMismatch(f"d_model={d_model} is not divisible by n_heads={n_heads}")
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_k = d_model // n_heads

        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def _check(self, query: torch.Tensor, key: torch.Tensor, value: torch.Tensor) -> None:
        for name, t in (("query", query), ("key", key), ("value", value)):
            if t.dim() != 3 or t.shape[-1] != self.d_model:
                raise ShapeMismatch(f"{name} must be (batch, tokens, {self.d_model}), got {tuple(t.shape)}")
        if key.shape[:2] != value.shape[:2] or query.shape[0] != key.shape[0]:
            raise ShapeMismatch(f"key {tuple(key.shape)} / value {tuple(value.shape)} / "
                                f"query {tuple(query.shape)} disagree")

    def attention_weights(self, query: torch.Tensor, key: torch.Tensor,
                          key_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        q = rearrange(self.q_proj(query), "b n (h k) -> b h n k", h=self.n_heads)
        k = rearrange(self.k_proj(key), "b n (h k) -> b h n k", h=self.n_heads)
        scores = torch.matmul(q, k.transpose(-2, -1)) / math.sqrt(self.d_k)
        return stable_softmax(scores, dim=-1, mask=key_mask_for_scores(key_mask, scores.dim()))

    def forward(self, query: torch.Tensor, key: torch.Tensor, value: torch.Tensor,
                key_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        self._check(query, key, value)
        weights = self.dropout(self.attention_weights(query, key, key_mask))
        v = rearrange(self.v_proj(value), "b n (h k) -> b h n k", h=self.n_heads)
        out = rearrange(torch.matmul(weights, v), "b h n k -> b n (h k)")
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, dropout: float = 0.0, ratio: int = FFN_RATIO):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(d_model, ratio * d_model),
            nn.GELU(),
            nn.Dropout(dropout),
            nn.Linear(ratio * d_model, d_model),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class EncoderBlock(nn.Module):
    """Pre-norm block: x + MHA(LN(x)), then + FFN(LN(.))."""

    def __init__(self, d_model: int, n_heads: int, dropout: float = 0.1):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model, eps=LN_EPS)
        self.attn = MultiHeadAttention(d_model, n_heads, dropout)
        self.norm2 = nn.LayerNorm(d_model, eps=LN_EPS)
        self.ffn = FeedForward(d_model, dropout)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.dropout(self.attn(h, h, h, key_mask=mask))
        x = x + self.dropout(self.ffn(self.norm2(x)))
        return x


class TransformerEncoder(nn.Module):
    def __init__(self, depth: int, d_model: int, n_heads: int, dropout: float = 0.1):
        super().__init__()
        self.blocks = nn.ModuleList([EncoderBlock(d_model, n_heads, dropout) for _ in range(depth)])

    def forward(self, x: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        for block in self.blocks:
            x = block(x, mask)
        return x


class PatchEmbed3d(nn.Module):
    """Non-overlapping cubic patches projected to d_model, z-major raster order, plus learned positions."""

    def __init__(self, volume_dims: Sequence[int], patch_size: int, d_model: int):
        super().__init__()
        self.volume_dims = tuple(volume_dims)
        self.patch_size = patch_size
        check_divisible(self.volume_dims, patch_size)
        self.n_patches = math.prod(d // patch_size for d in self.volume_dims)

        self.proj = nn.Conv3d(1, d_model, kernel_size=patch_size, stride=patch_size)
        self.position = nn.Parameter(torch.zeros(1, self.n_patches, d_model))
        nn.init.normal_(self.position, std=EMBED_INIT_STD)

    def forward(self, volume: torch.Tensor) -> torch.Tensor:
        if volume.dim() == 4:
            volume = volume.unsqueeze(1)  # (b, z, y, x) -> (b, 1, z, y, x)
        check_divisible(tuple(volume.shape[-3:]), self.patch_size)
        if tuple(volume.shape[-3:]) != self.volume_dims:
            raise ShapeMismatch(f"volume {tuple(volume.shape[-3:])} does not match configured {self.volume_dims}")
        tokens = rearrange(self.proj(volume), "b c z y x -> b (z y x) c")
        return tokens + self.position


def check_divisible(dims: Sequence[int], patch_size: int) -> None:
    if any(d % patch_size for d in dims):
        raise IndivisibleVolume(f"Volume dims {tuple(dims)} are not divisible by patch size {patch_size}")


class FeatureProjection(nn.Module):
    """Entry point for precomputed visual features (tokens x feature_dim) from an external extractor."""

    def __init__(self, n_tokens: int, feature_dim: int, d_model: int):
        super().__init__()
        self.n_tokens = n_tokens
        self.proj = nn.Linear(feature_dim, d_model)
        self.position = nn.Parameter(torch.zeros(1, n_tokens, d_model))
        nn.init.normal_(self.position, std=EMBED_INIT_STD)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        if features.dim() != 3 or features.shape[1] != self.n_tokens:
            raise ShapeMismatch(f"features must be (batch, {self.n_tokens}, dim), got {tuple(features.shape)}")
        return self.proj(features) + self.position


class VisualEncoder(nn.Module):
    def __init__(self, entry: nn.Module, depth: int, d_model: int, n_heads: int, dropout: float = 0.1):
        super().__init__()
        self.entry = entry
        self.encoder = TransformerEncoder(depth, d_model, n_heads, dropout)

    def forward(self, visual: torch.Tensor) -> torch.Tensor:
        return self.encoder(self.entry(visual))


class TextEncoder(nn.Module):
    def __init__(self, vocab_size: int, max_len: int, depth: int, d_model: int, n_heads: int,
                 dropout: float = 0.1):
        super().__init__()
        self.max_len = max_len
        self.token_embedding = nn.Embedding(vocab_size, d_model)
        self.position = nn.Parameter(torch.zeros(1, max_len, d_model))
        nn.init.normal_(self.token_embedding.weight, std=EMBED_INIT_STD)
        nn.init.normal_(self.position, std=EMBED_INIT_STD)
        self.encoder = TransformerEncoder(depth, d_model, n_heads, dropout)

    def forward(self, token_ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        if token_ids.shape[-1] > self.max_len:
            raise ShapeMismatch(f"sequence length {token_ids.shape[-1]} exceeds max_len {self.max_len}")
        x = self.token_embedding(token_ids) + self.position[:, :token_ids.shape[-1]]
        return self.encoder(x, attention_mask)

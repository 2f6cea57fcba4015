"""Noise-prediction network: condition embedding, CAB, transformer stack.

EEG features enter only through the condition-aligned block (CAB), which
fuses them with the diffusion timestep and feeds every block's
cross-attention. The ablated variant bypasses the CAB: raw embedded EEG
tokens feed cross-attention and the timestep is added to the state-token
embeddings instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError, InputError


@dataclass
class DenoiserConfig:
    depth: int = 4
    model_width: int = 128
    n_heads: int = 4
    token_count: int = 16
    token_width: int = 16
    max_timestep: int = 200
    cond_feature_dim: int = 40  # channels * pooled bands
    ff_mult: int = 4
    use_cab: bool = True

    def validate(self) -> None:
        if self.depth < 1:
            raise ConfigurationError("depth must be >= 1")
        if self.model_width % self.n_heads:
            raise ConfigurationError(
                f"model_width {self.model_width} not divisible by "
                f"n_heads {self.n_heads}"
            )
        for name in ("token_count", "token_width", "max_timestep", "cond_feature_dim"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")


def timestep_embedding(
    t, dim: int, max_timestep: int | None = None, max_period: float = 10000.0
):
    """Sinusoidal features of length ``dim``: sin halves then cos halves.

    The frequency ladder runs geometrically from 1 down to 1/max_period,
    so distinct steps below max_period*2*pi stay distinguishable even at
    dim 2 (where only the slowest frequency is used).
    """
    t_tensor = torch.as_tensor(t, dtype=torch.float64)
    if max_timestep is not None:
        if torch.any(t_tensor < 0) or torch.any(t_tensor > max_timestep):
            raise InputError(
                f"timestep {t} outside [0, {max_timestep}]"
            )
    if dim < 1:
        raise ConfigurationError("dim must be >= 1")
    half = dim // 2
    if half >= 2:
        freqs = torch.exp(
            -math.log(max_period) * torch.arange(half, dtype=torch.float64) / (half - 1)
        )
    else:
        freqs = torch.full((max(half, 1),), 1.0 / max_period, dtype=torch.float64)
    args = t_tensor[..., None] * freqs
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[..., :1])], dim=-1)
    return emb[..., :dim]


class ConditionAlignedBlock(nn.Module):
    """Fuses condition tokens with the timestep embedding.

    Linear projections of both inputs are summed per token, then passed
    through one hidden nonlinear layer. The output is computed once per
    (condition, timestep) pair and shared by every transformer block;
    ``call_count`` lets tests assert that sharing.
    """

    def __init__(self, width: int, time_dim: int):
        super().__init__()
        self.cond_proj = nn.Linear(width, width)
        self.time_proj = nn.Linear(time_dim, width)
        self.hidden = nn.Linear(width, width)
        self.act = nn.GELU()
        self.out = nn.Linear(width, width)
        self.call_count = 0

    def forward(self, cond: torch.Tensor, t_emb: torch.Tensor) -> torch.Tensor:
        self.call_count += 1
        if cond.shape[-1] != self.cond_proj.in_features:
            raise ConfigurationError(
                f"condition width {cond.shape[-1]} does not match CAB width "
                f"{self.cond_proj.in_features}"
            )
        mixed = self.cond_proj(cond) + self.time_proj(t_emb).unsqueeze(-2)
        return self.out(self.act(self.hidden(mixed)))


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention; heads concatenated then projected."""

    def __init__(self, width: int, n_heads: int, kv_width: int | None = None):
        super().__init__()
        if width % n_heads:
            raise ConfigurationError(
                f"width {width} not divisible by n_heads {n_heads}"
            )
        kv_width = width if kv_width is None else kv_width
        self.n_heads = n_heads
        self.head_dim = width // n_heads
        self.q_proj = nn.Linear(width, width)
        self.k_proj = nn.Linear(kv_width, width)
        self.v_proj = nn.Linear(kv_width, width)
        self.out_proj = nn.Linear(width, width)

    def forward(self, queries, keys_values, return_weights: bool = False):
        if keys_values.shape[-2] < 1:
            raise InputError("attention needs at least one key/value pair")
        b, nq, _ = queries.shape
        nk = keys_values.shape[-2]

        def split(x, n):
            return x.view(b, n, self.n_heads, self.head_dim).transpose(1, 2)

        q = split(self.q_proj(queries), nq)
        k = split(self.k_proj(keys_values), nk)
        v = split(self.v_proj(keys_values), nk)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        weights = torch.softmax(scores, dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(b, nq, -1)
        out = self.out_proj(out)
        if return_weights:
            return out, weights
        return out


class TransformerBlock(nn.Module):
    """Pre-norm residual block: self-attention, cross-attention, feed-forward."""

    def __init__(self, width: int, n_heads: int, ff_mult: int = 4):
        super().__init__()
        self.norm_self = nn.LayerNorm(width)
        self.self_attn = MultiHeadAttention(width, n_heads)
        self.norm_cross = nn.LayerNorm(width)
        self.cross_attn = MultiHeadAttention(width, n_heads)
        self.norm_ff = nn.LayerNorm(width)
        self.ff = nn.Sequential(
            nn.Linear(width, ff_mult * width),
            nn.GELU(),
            nn.Linear(ff_mult * width, width),
        )

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        x = x + self.self_attn(self.norm_self(x), self.norm_self(x))
        x = x + self.cross_attn(self.norm_cross(x), cond)
        x = x + self.ff(self.norm_ff(x))
        return x


class CATDenoiser(nn.Module):
    """Predicts the forward-process noise from (x_t tokens, t, EEG features)."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        config.validate()
        self.config = config
        w = config.model_width
        self.cond_embed = nn.Linear(config.cond_feature_dim, w)
        self.input_embed = nn.Linear(config.token_width, w)
        self.pos_embed = nn.Parameter(torch.zeros(config.token_count, w))
        nn.init.normal_(self.pos_embed, std=0.02)
        self.cab = ConditionAlignedBlock(w, w)
        self.time_in_x = nn.Linear(w, w)  # ablated route only
        self.blocks = nn.ModuleList(
            TransformerBlock(w, config.n_heads, config.ff_mult)
            for _ in range(config.depth)
        )
        self.final_norm = nn.LayerNorm(w)
        self.output_proj = nn.Linear(w, config.token_width)
        nn.init.zeros_(self.output_proj.weight)
        nn.init.zeros_(self.output_proj.bias)

    def forward(
        self, x_tokens: torch.Tensor, t: torch.Tensor, cond_features: torch.Tensor
    ) -> torch.Tensor:
        cfg = self.config
        if x_tokens.shape[-2:] != (cfg.token_count, cfg.token_width):
            raise ConfigurationError(
                f"x tokens {tuple(x_tokens.shape[-2:])} do not match config "
                f"({cfg.token_count}, {cfg.token_width})"
            )
        if cond_features.shape[-2:] != (cfg.token_count, cfg.cond_feature_dim):
            raise ConfigurationError(
                f"condition features {tuple(cond_features.shape[-2:])} do not "
                f"match config ({cfg.token_count}, {cfg.cond_feature_dim})"
            )
        t = torch.as_tensor(t)
        if torch.any(t < 1) or torch.any(t > cfg.max_timestep):
            raise InputError(f"timestep outside [1, {cfg.max_timestep}]")

        dtype = self.pos_embed.dtype
        t_emb = timestep_embedding(t, cfg.model_width).to(dtype)
        cond_tokens = self.cond_embed(cond_features)
        x = self.input_embed(x_tokens) + self.pos_embed
        if cfg.use_cab:
            cond_ctx = self.cab(cond_tokens, t_emb)
        else:
            cond_ctx = cond_tokens
            x = x + self.time_in_x(t_emb).unsqueeze(-2)
        for block in self.blocks:
            x = block(x, cond_ctx)
        return self.output_proj(self.final_norm(x))


def denoise(
    model: CATDenoiser, x_tokens: np.ndarray, t: int, cond_features: np.ndarray
) -> np.ndarray:
    """Single-sample convenience wrapper around the module; numpy in/out."""
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        out = model(
            torch.from_numpy(np.asarray(x_tokens)).to(dtype)[None],
            torch.tensor([t]),
            torch.from_numpy(np.asarray(cond_features)).to(dtype)[None],
        )
    return out[0].numpy().astype(np.float64)

"""Spectral-wise attention fusion of cube features with aggregated reference
features, plus the residual projection head.

Attention operates across channels (spectra), not positions: the (c x c)
per-head map is a softmax over the key-derived dimension, so each column is
a convex combination of value channels.  Blocks come in two flavours: plain
self-attention (SSA) and reference-gated attention (RCA) whose values are
modulated elementwise by a projection of the aggregated reference stream.
The final head starts at zero (the network's first estimate is the upsampled
input); zero_residual_projections() additionally zeroes every block's output
projection, which makes the whole stack an exact identity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, ShapeError


class ChannelLayerNorm(nn.Module):
    """LayerNorm over the channel axis of (B, C, H, W), per position."""

    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        xn = channel_norm(x, self.eps)
        return xn * self.weight[None, :, None, None] + self.bias[None, :, None, None]


def channel_norm(x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Parameter-free channel normalization; any channel-constant map -> 0."""
    mu = x.mean(dim=1, keepdim=True)
    var = x.var(dim=1, keepdim=True, unbiased=False)
    return (x - mu) / torch.sqrt(var + eps)


@dataclass(frozen=True)
class SpectralAttentionMap:
    """Per-head channel-attention maps, shape (B, heads, c, c), column-stochastic."""

    maps: torch.Tensor

    def __post_init__(self) -> None:
        if self.maps.ndim != 4 or self.maps.shape[2] != self.maps.shape[3]:
            raise ShapeError(f"SpectralAttentionMap: expected (B, R, c, c), got "
                             f"{tuple(self.maps.shape)}")
        maps = self.maps.detach()
        if float(maps.min()) < 0:
            raise ShapeError("SpectralAttentionMap: negative entries")
        colsum = maps.sum(dim=2)
        if not torch.allclose(colsum, torch.ones_like(colsum), atol=1e-5):
            raise ShapeError("SpectralAttentionMap: columns must sum to 1")


class SpectralAttention(nn.Module):
    """Channel-wise attention; optionally gated by a second feature stream."""

    def __init__(self, dim: int, heads: int, gated: bool):
        super().__init__()
        if dim % heads != 0:
            raise ConfigError(f"SpectralAttention: dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.gated = gated
        self.qkv = nn.Conv2d(dim, dim * 3, 1, bias=False)
        self.qkv_dw = nn.Conv2d(dim * 3, dim * 3, 3, padding=1, groups=dim * 3, bias=False)
        if gated:
            self.y_proj = nn.Conv2d(dim, dim, 1, bias=False)
            self.y_dw = nn.Conv2d(dim, dim, 3, padding=1, groups=dim, bias=False)
        self.temperature = nn.Parameter(torch.ones(heads, 1, 1))
        # bias-free so a zeroed value stream leaves the residual branch at
        # exactly zero no matter the parameters
        self.proj = nn.Conv2d(dim, dim, 1, bias=False)

    def _split(self, t: torch.Tensor) -> torch.Tensor:
        b, c, h, w = t.shape
        return t.reshape(b, self.heads, c // self.heads, h * w)

    def _logits(self, q: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
        # Unit-normalizing each channel's spatial vector keeps the logits in
        # [-1, 1] (cosine similarity); the per-head temperature then learns
        # the softmax sharpness instead of starting saturated.
        qn = F.normalize(self._split(q), dim=-1)
        kn = F.normalize(self._split(k), dim=-1)
        return torch.einsum("bhip,bhjp->bhij", kn, qn) * self.temperature

    def attention_maps(self, x: torch.Tensor) -> SpectralAttentionMap:
        q, k, _ = self.qkv_dw(self.qkv(x)).chunk(3, dim=1)
        return SpectralAttentionMap(torch.softmax(self._logits(q, k), dim=2))

    def forward(self, x: torch.Tensor, y: Optional[torch.Tensor] = None) -> torch.Tensor:
        if self.gated != (y is not None):
            raise ShapeError("SpectralAttention: gating input must match construction")
        b, c, h, w = x.shape
        q, k, v = self.qkv_dw(self.qkv(x)).chunk(3, dim=1)
        attn = torch.softmax(self._logits(q, k), dim=2)  # columns sum to 1
        vv = self._split(v)
        if y is not None:
            if y.shape != x.shape:
                raise ShapeError(f"SpectralAttention: y {tuple(y.shape)} vs x {tuple(x.shape)}")
            # Anchored gate: the identity part keeps y == 1 an exact no-op and
            # y == 0 an exact annihilator for any parameter values, while the
            # normed conv path learns content-dependent modulation.
            y_hat = y + self.y_dw(self.y_proj(channel_norm(y)))
            vv = vv * self._split(y_hat)
        out = torch.einsum("bhij,bhip->bhjp", attn, vv)
        return self.proj(out.reshape(b, c, h, w))


class GatedFeedForward(nn.Module):
    """Gated depthwise feed-forward (two-path expansion, GELU gate)."""

    def __init__(self, dim: int, expansion: int = 2):
        super().__init__()
        hidden = dim * expansion
        self.project_in = nn.Conv2d(dim, hidden * 2, 1, bias=False)
        self.dwconv = nn.Conv2d(hidden * 2, hidden * 2, 3, padding=1,
                                groups=hidden * 2, bias=False)
        self.project_out = nn.Conv2d(hidden, dim, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x1, x2 = self.dwconv(self.project_in(x)).chunk(2, dim=1)
        return self.project_out(F.gelu(x1) * x2)


class AttentionBlock(nn.Module):
    """Pre-norm residual block: attention then gated feed-forward.

    gated=False is the self-attention flavour; gated=True takes the
    aggregated reference features as the value-gating stream.
    """

    def __init__(self, dim: int, heads: int, gated: bool, expansion: int = 2):
        super().__init__()
        self.norm1 = ChannelLayerNorm(dim)
        self.attn = SpectralAttention(dim, heads, gated)
        self.norm2 = ChannelLayerNorm(dim)
        self.ffn = GatedFeedForward(dim, expansion)

    def forward(self, x: torch.Tensor, y: Optional[torch.Tensor] = None) -> torch.Tensor:
        x = x + self.attn(self.norm1(x), y)
        return x + self.ffn(self.norm2(x))


def ssa_block(dim: int, heads: int) -> AttentionBlock:
    return AttentionBlock(dim, heads, gated=False)


def rca_block(dim: int, heads: int) -> AttentionBlock:
    return AttentionBlock(dim, heads, gated=True)


class FusionLevel(nn.Module):
    """One decoder stage: merge the previous (coarser) fused level, then run
    n_blocks pairs of (self-attention, reference-gated attention).

    prev_dim is None exactly at the first (coarsest) stage.  Cross-level
    upsampling is a learned stride-2 transposed convolution.
    """

    def __init__(self, dim: int, prev_dim: Optional[int], heads: int, n_blocks: int):
        super().__init__()
        if n_blocks < 1:
            raise ConfigError("FusionLevel: n_blocks must be >= 1")
        self.dim = dim
        self.prev_dim = prev_dim
        if prev_dim is not None:
            self.upsample = nn.ConvTranspose2d(prev_dim, dim, 2, stride=2)
            self.mix = nn.Conv2d(2 * dim, dim, 1)
            # Start as "pass this level through, ignore the coarser level":
            # training then learns how much of the upsampled stream to blend in.
            with torch.no_grad():
                self.mix.weight.zero_()
                self.mix.weight[:, :dim].copy_(torch.eye(dim).reshape(dim, dim, 1, 1))
                self.mix.bias.zero_()
        self.pairs = nn.ModuleList(
            nn.ModuleList([ssa_block(dim, heads), rca_block(dim, heads)])
            for _ in range(n_blocks)
        )

    def forward(self, f_hsi: torch.Tensor, f_prev: Optional[torch.Tensor],
                a_ref: torch.Tensor) -> torch.Tensor:
        if (f_prev is None) != (self.prev_dim is None):
            raise ShapeError("FusionLevel: previous-level input must match construction")
        if f_hsi.shape[1] != self.dim or a_ref.shape != f_hsi.shape:
            raise ShapeError(
                f"FusionLevel: f_hsi {tuple(f_hsi.shape)} vs a_ref {tuple(a_ref.shape)}"
            )
        x = f_hsi
        if f_prev is not None:
            up = self.upsample(f_prev)
            if up.shape[2:] != f_hsi.shape[2:]:
                raise ShapeError(
                    f"FusionLevel: upsampled previous level {tuple(up.shape[2:])} does not "
                    f"match {tuple(f_hsi.shape[2:])}"
                )
            x = self.mix(torch.cat([f_hsi, up], dim=1))
        for ssa, rca in self.pairs:
            x = rca(ssa(x), a_ref)
        return x


class SrHead(nn.Module):
    """Residual projection: upsampled cube + 1x1 conv of the fused features."""

    def __init__(self, dim: int, bands: int):
        super().__init__()
        self.proj = nn.Conv2d(dim, bands, 1)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, f_sr: torch.Tensor, lr_up: torch.Tensor) -> torch.Tensor:
        if f_sr.shape[2:] != lr_up.shape[2:]:
            raise ShapeError(
                f"SrHead: features {tuple(f_sr.shape[2:])} vs cube {tuple(lr_up.shape[2:])}"
            )
        return lr_up + self.proj(f_sr)


def zero_residual_projections(module: nn.Module) -> nn.Module:
    """Zero every residual-path output projection under ``module``.

    After this, each attention/feed-forward block is the identity map and the
    whole fusion stack returns its input features unchanged (the final head,
    if present, then adds a zero residual).  Useful as a controlled starting
    point and for verifying the residual topology.
    """
    for m in module.modules():
        if isinstance(m, SpectralAttention):
            nn.init.zeros_(m.proj.weight)
        elif isinstance(m, GatedFeedForward):
            nn.init.zeros_(m.project_out.weight)
            nn.init.zeros_(m.project_out.bias)
        elif isinstance(m, SrHead):
            nn.init.zeros_(m.proj.weight)
            nn.init.zeros_(m.proj.bias)
    return module

"""Patchwise global matching and deformable reference aggregation.

gam_match scores every target patch against every reference patch
(L2-normalized 3x3 patches, dense dot products) and keeps the best match's
similarity and position.  IdfaBlock then samples the reference features
around each matched position with learned sub-pixel offsets and
similarity-gated masks, and mixes the taps with learned kernel weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, ShapeError
from .warp import bilinear_sample


@dataclass(frozen=True)
class MatchMaps:
    """Best-match similarity and position per target location.

    similarity: (B, h, w) cosine scores in [-1, 1]
    positions:  (B, h, w) int64 flat indices into the reference patch grid
                (stride-1 patches centred on pixels, so a flat index IS the
                reference pixel's row-major index)
    grid:       (h_ref, w_ref) extent of the reference grid
    """

    similarity: torch.Tensor
    positions: torch.Tensor
    grid: Tuple[int, int]

    def __post_init__(self) -> None:
        if self.similarity.ndim != 3 or self.positions.shape != self.similarity.shape:
            raise ShapeError("MatchMaps: similarity and positions must both be (B, h, w)")
        if self.positions.dtype != torch.int64:
            raise ShapeError("MatchMaps: positions must be int64")
        n = self.grid[0] * self.grid[1]
        if self.positions.numel() and (
            int(self.positions.min()) < 0 or int(self.positions.max()) >= n
        ):
            raise ShapeError("MatchMaps: positions outside the reference grid")


def identity_match(b: int, h: int, w: int, device="cpu") -> MatchMaps:
    """Self-match maps: every position points at itself with similarity 1."""
    pos = torch.arange(h * w, dtype=torch.int64, device=device).reshape(1, h, w).expand(b, h, w)
    return MatchMaps(torch.ones(b, h, w, device=device), pos.contiguous(), (h, w))


def gam_match(f_tgt: torch.Tensor, f_ref: torch.Tensor, patch_size: int = 3) -> MatchMaps:
    """Exact argmax patch matching between two same-shape feature maps.

    Ties resolve to the smallest flat index.  Similarities are cosine scores
    of L2-normalized patch vectors; gradients flow through the similarity.
    """
    if f_tgt.shape != f_ref.shape or f_tgt.ndim != 4:
        raise ShapeError(f"gam_match: shapes {tuple(f_tgt.shape)} vs {tuple(f_ref.shape)}")
    if patch_size % 2 != 1 or patch_size < 1:
        raise ConfigError("gam_match: patch_size must be odd and >= 1")
    b, _, h, w = f_tgt.shape
    pad = patch_size // 2
    pt = F.unfold(f_tgt, patch_size, padding=pad)  # (B, C*p*p, h*w)
    pr = F.unfold(f_ref, patch_size, padding=pad)
    pt = pt / pt.norm(dim=1, keepdim=True).clamp_min(1e-12)
    pr = pr / pr.norm(dim=1, keepdim=True).clamp_min(1e-12)
    scores = torch.bmm(pt.transpose(1, 2), pr)  # (B, n_tgt, n_ref)
    sim, pos = scores.max(dim=2)  # first occurrence on ties (CPU)
    return MatchMaps(sim.reshape(b, h, w), pos.reshape(b, h, w), (h, w))


@dataclass(frozen=True)
class IdfaConfig:
    kernel_size: int = 3
    max_offset: float = 4.0  # tanh clamp radius, in feature-grid pixels

    def __post_init__(self) -> None:
        if self.kernel_size % 2 != 1 or self.kernel_size < 1:
            raise ConfigError("IdfaConfig: kernel_size must be odd and >= 1")
        if not (self.max_offset > 0):
            raise ConfigError("IdfaConfig: max_offset must be > 0")


@dataclass(frozen=True)
class IdfaInternals:
    """Raw offsets (B, K, 2, h, w), masks (B, K, h, w), similarity (B, h, w)."""

    offsets: torch.Tensor
    masks: torch.Tensor
    similarity: torch.Tensor


class IdfaBlock(nn.Module):
    """Similarity-gated deformable aggregation anchored at matched positions.

    With guidance (the previous fused level, bilinearly upsampled 2x) the
    offset/mask predictor sees [guidance; reference features]; without it,
    the reference features alone.  Forcing zero offsets, unit masks, and an
    identity match reduces the block to a dense kernel_size x kernel_size
    convolution (no bias) with zero padding.
    """

    def __init__(self, channels: int, guidance_channels: Optional[int] = None,
                 cfg: IdfaConfig = IdfaConfig()):
        super().__init__()
        self.cfg = cfg
        self.channels = channels
        self.guidance_channels = guidance_channels
        k = cfg.kernel_size
        taps = k * k
        in_g = channels + (guidance_channels or 0)
        self.offset_conv = nn.Conv2d(in_g, 2 * taps, 3, padding=1)
        self.mask_conv = nn.Conv2d(in_g, taps, 3, padding=1)
        weight = torch.empty(channels, channels, k, k)
        nn.init.kaiming_uniform_(weight, a=5 ** 0.5)  # default conv init
        self.weight = nn.Parameter(weight)

    def forward(
        self,
        f_ref2: torch.Tensor,
        maps: MatchMaps,
        guidance: Optional[torch.Tensor] = None,
        force_zero_offsets: bool = False,
        force_unit_masks: bool = False,
        return_internals: bool = False,
    ):
        b, c, h, w = f_ref2.shape
        if c != self.channels:
            raise ShapeError(f"IdfaBlock: expected {self.channels} channels, got {c}")
        if maps.grid != (h, w) or maps.similarity.shape != (b, h, w):
            raise ShapeError("IdfaBlock: match maps not aligned to the feature grid")
        if (guidance is None) != (self.guidance_channels is None):
            raise ShapeError("IdfaBlock: guidance presence must match construction")
        if guidance is not None:
            if guidance.shape[1] != self.guidance_channels:
                raise ShapeError(
                    f"IdfaBlock: guidance has {guidance.shape[1]} channels, "
                    f"expected {self.guidance_channels}"
                )
            up = F.interpolate(guidance, size=(h, w), mode="bilinear", align_corners=False)
            g = torch.cat([up, f_ref2], dim=1)
        else:
            g = f_ref2

        k = self.cfg.kernel_size
        taps = k * k
        offsets = self.cfg.max_offset * torch.tanh(self.offset_conv(g))
        offsets = offsets.reshape(b, taps, 2, h, w)
        if force_zero_offsets:
            offsets = torch.zeros_like(offsets)
        logits = self.mask_conv(g)
        masks = torch.sigmoid(maps.similarity.unsqueeze(1) * logits)
        if force_unit_masks:
            masks = torch.ones_like(masks)

        pos = maps.positions.reshape(b, h * w)
        cx = (pos % w).to(f_ref2.dtype)
        cy = torch.div(pos, w, rounding_mode="floor").to(f_ref2.dtype)
        half = k // 2
        out = f_ref2.new_zeros(b, self.channels, h * w)
        for tap in range(taps):
            dy, dx = tap // k - half, tap % k - half
            ox = offsets[:, tap, 0].reshape(b, h * w)
            oy = offsets[:, tap, 1].reshape(b, h * w)
            coords = torch.stack([cx + dx + ox, cy + dy + oy], dim=-1)
            sampled = bilinear_sample(f_ref2, coords, "zeros")  # (B, C, h*w)
            sampled = sampled * masks[:, tap].reshape(b, 1, h * w)
            out = out + torch.einsum("oc,bcp->bop", self.weight[:, :, dy + half, dx + half],
                                     sampled)
        out = out.reshape(b, self.channels, h, w)
        if return_internals:
            return out, IdfaInternals(offsets, masks, maps.similarity)
        return out


def offset_stats(internals: IdfaInternals, bins: int = 8) -> dict:
    """JSON-friendly summary of offset magnitudes, masks, and similarities."""
    mag = internals.offsets.detach().norm(dim=2).cpu().numpy().ravel()
    counts, edges = np.histogram(mag, bins=bins)
    return {
        "offset_mean": float(mag.mean()),
        "offset_max": float(mag.max()),
        "offset_hist": {"edges": [float(e) for e in edges],
                        "counts": [int(c) for c in counts]},
        "mask_mean": float(internals.masks.detach().mean()),
        "similarity_mean": float(internals.similarity.detach().mean()),
    }

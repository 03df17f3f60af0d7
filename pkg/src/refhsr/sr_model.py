"""Full reference-guided super-resolution network.

Encodes the upsampled cube and three RGB streams into pyramids, then runs
the fusion decoder coarse-to-fine: at each stage, match target patches
against the warped reference, aggregate reference features deformably, and
fuse them with the cube features under spectral attention.  The head adds a
residual on top of the bicubically upsampled cube, so an untrained network
already reproduces the bicubic baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import torch
from torch import nn

from .aggregation import IdfaBlock, IdfaConfig, gam_match, offset_stats
from .encoders import EncoderConfig, HsiEncoder, RgbEncoderBank
from .errors import ConfigError, ShapeError
from .flow_net import FlowEstimator
from .fusion import FusionLevel, SrHead
from .warp import warp_tensor
from .warp_net import WarpNet


@dataclass(frozen=True)
class SrModelConfig:
    bands: int
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    heads: int = 4
    blocks_per_stage: Tuple[int, ...] = (4, 3, 2)  # stage 1 = coarsest level
    idfa: IdfaConfig = field(default_factory=IdfaConfig)
    match_patch: int = 3
    interaction: bool = True

    def __post_init__(self) -> None:
        if self.bands < 2:
            raise ConfigError("SrModelConfig: bands must be >= 2")
        if self.heads < 1:
            raise ConfigError("SrModelConfig: heads must be >= 1")
        if len(self.blocks_per_stage) != self.encoder.levels:
            raise ConfigError(
                f"SrModelConfig: {len(self.blocks_per_stage)} stage block counts for "
                f"{self.encoder.levels} levels"
            )
        if any(n < 1 for n in self.blocks_per_stage):
            raise ConfigError("SrModelConfig: every stage needs >= 1 block")
        for lvl in range(1, self.encoder.levels + 1):
            if self.encoder.channels(lvl) % self.heads:
                raise ConfigError(
                    f"SrModelConfig: level {lvl} width {self.encoder.channels(lvl)} "
                    f"not divisible by {self.heads} heads"
                )


class SuperResolutionNet(nn.Module):
    """forward(lr_up, tgt_rgb, ref_rgb) -> super-resolved cube (B, bands, H, W)."""

    def __init__(self, cfg: SrModelConfig):
        super().__init__()
        self.cfg = cfg
        enc = cfg.encoder
        self.levels = enc.levels
        self.enc_hsi = HsiEncoder(cfg.bands, enc)
        self.bank = RgbEncoderBank(enc)
        idfa_blocks = []
        fuse_stages = []
        for stage in range(1, self.levels + 1):
            lvl = self.levels - stage + 1  # pyramid level for this stage
            dim = enc.channels(lvl)
            prev_dim = enc.channels(lvl + 1) if stage > 1 else None
            guid_dim = prev_dim if (stage > 1 and cfg.interaction) else None
            idfa_blocks.append(IdfaBlock(dim, guid_dim, cfg.idfa))
            fuse_stages.append(FusionLevel(dim, prev_dim, cfg.heads,
                                           cfg.blocks_per_stage[stage - 1]))
        self.idfa_blocks = nn.ModuleList(idfa_blocks)
        self.fuse_stages = nn.ModuleList(fuse_stages)
        self.head = SrHead(enc.channels(1), cfg.bands)

    def forward(
        self,
        lr_up: torch.Tensor,
        tgt_rgb: torch.Tensor,
        ref_rgb: torch.Tensor,
        return_diagnostics: bool = False,
    ):
        if lr_up.ndim != 4 or lr_up.shape[1] != self.cfg.bands:
            raise ShapeError(f"SuperResolutionNet: lr_up {tuple(lr_up.shape)} has wrong rank "
                             f"or band count (expected {self.cfg.bands})")
        if tgt_rgb.shape[2:] != lr_up.shape[2:] or ref_rgb.shape[2:] != lr_up.shape[2:]:
            raise ShapeError("SuperResolutionNet: all inputs must share the full resolution")
        pyr_hsi = self.enc_hsi(lr_up)
        pyr_tgt = self.bank.encode(tgt_rgb, "target")
        pyr_ref1 = self.bank.encode(ref_rgb, "ref1")
        pyr_ref2 = self.bank.encode(ref_rgb, "ref2")

        diagnostics = []
        f_prev: Optional[torch.Tensor] = None
        for stage in range(1, self.levels + 1):
            lvl = self.levels - stage + 1
            maps = gam_match(pyr_tgt[lvl], pyr_ref1[lvl], self.cfg.match_patch)
            guidance = f_prev if (stage > 1 and self.cfg.interaction) else None
            idfa = self.idfa_blocks[stage - 1]
            if return_diagnostics:
                a_ref, internals = idfa(pyr_ref2[lvl], maps, guidance, return_internals=True)
                diagnostics.append({"level": lvl, **offset_stats(internals)})
            else:
                a_ref = idfa(pyr_ref2[lvl], maps, guidance)
            f_prev = self.fuse_stages[stage - 1](pyr_hsi[lvl], f_prev, a_ref)
        sr = self.head(f_prev, lr_up)
        if return_diagnostics:
            return sr, diagnostics
        return sr


class SrSystem(nn.Module):
    """Two-stage alignment (optional) followed by the fusion network.

    When alignment is present, the raw reference is flow-warped onto the
    target grid and refined before the fusion network sees it; otherwise the
    reference goes in untouched (the no-alignment ablation).
    """

    def __init__(
        self,
        sr: SuperResolutionNet,
        flow: Optional[FlowEstimator] = None,
        warp: Optional[WarpNet] = None,
    ):
        super().__init__()
        if (flow is None) != (warp is None):
            raise ConfigError("SrSystem: flow and warp nets come as a pair")
        self.sr = sr
        self.flow = flow
        self.warp = warp

    @property
    def aligned(self) -> bool:
        return self.flow is not None

    def align(self, ref_rgb: torch.Tensor, tgt_rgb: torch.Tensor) -> torch.Tensor:
        if not self.aligned:
            return ref_rgb
        flow = self.flow(ref_rgb, tgt_rgb)[-1]
        coarse = warp_tensor(ref_rgb, flow, "border")
        return self.warp(coarse, tgt_rgb)

    def forward(
        self,
        lr_up: torch.Tensor,
        tgt_rgb: torch.Tensor,
        ref_rgb: torch.Tensor,
        return_diagnostics: bool = False,
    ):
        refined = self.align(ref_rgb, tgt_rgb)
        return self.sr(lr_up, tgt_rgb, refined, return_diagnostics)

"""Multi-scale feature encoders for the fusion network.

Conv/ReLU stacks; the RGB variants end each stage with a (stateless)
instance norm so their features are usable for correlation-style matching
straight away.  Level l lives at 1/2^(l-1) of the input resolution with
base * 2^(l-1) channels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, List, Sequence

import torch
from torch import nn

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class EncoderConfig:
    levels: int = 3
    base_channels: int = 64

    def __post_init__(self) -> None:
        if self.levels not in (1, 2, 3):
            raise ConfigError("EncoderConfig: levels must be 1, 2, or 3")
        if self.base_channels < 8:
            raise ConfigError("EncoderConfig: base_channels must be >= 8")

    def channels(self, level: int) -> int:
        """Channel width of 1-indexed pyramid level."""
        if not (1 <= level <= self.levels):
            raise ConfigError(f"EncoderConfig: level {level} not in 1..{self.levels}")
        return self.base_channels * 2 ** (level - 1)


class FeaturePyramid:
    """Sequence of (B, C_l, H_l, W_l) tensors with dyadic spatial scaling."""

    def __init__(self, levels: Sequence[torch.Tensor]):
        if not 1 <= len(levels) <= 3:
            raise ShapeError(f"FeaturePyramid: got {len(levels)} levels, need 1..3")
        h, w = levels[0].shape[2], levels[0].shape[3]
        for i, t in enumerate(levels):
            if t.ndim != 4:
                raise ShapeError(f"FeaturePyramid: level {i + 1} has rank {t.ndim}")
            if t.shape[2] != h >> i or t.shape[3] != w >> i:
                raise ShapeError(
                    f"FeaturePyramid: level {i + 1} is {tuple(t.shape[2:])}, "
                    f"expected ({h >> i}, {w >> i})"
                )
        self.levels: List[torch.Tensor] = list(levels)

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, level: int) -> torch.Tensor:
        """1-indexed access, matching the pyramid-level convention."""
        if not (1 <= level <= len(self.levels)):
            raise ShapeError(f"FeaturePyramid: level {level} not in 1..{len(self.levels)}")
        return self.levels[level - 1]

    def __iter__(self) -> Iterator[torch.Tensor]:
        return iter(self.levels)


class _PyramidEncoder(nn.Module):
    def __init__(self, in_channels: int, cfg: EncoderConfig, normalize: bool = False):
        super().__init__()
        self.cfg = cfg
        stages = []
        prev = in_channels
        for lvl in range(1, cfg.levels + 1):
            ch = cfg.channels(lvl)
            stride = 1 if lvl == 1 else 2
            layers = [
                nn.Conv2d(prev, ch, 3, stride=stride, padding=1), nn.ReLU(inplace=True),
                nn.Conv2d(ch, ch, 3, padding=1), nn.ReLU(inplace=True),
            ]
            if normalize:
                # Zero-mean channels keep patch correlations contrastive; raw
                # ReLU features share a positive DC direction that swamps the
                # cosine scores the matcher relies on.
                layers.append(nn.InstanceNorm2d(ch))
            stages.append(nn.Sequential(*layers))
            prev = ch
        self.stages = nn.ModuleList(stages)
        self.in_channels = in_channels

    def forward(self, x: torch.Tensor) -> FeaturePyramid:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"encoder: expected (B, {self.in_channels}, H, W), got {tuple(x.shape)}"
            )
        div = 2 ** (self.cfg.levels - 1)
        if x.shape[2] % div or x.shape[3] % div or x.shape[2] < div or x.shape[3] < div:
            raise ShapeError(
                f"encoder: spatial size {tuple(x.shape[2:])} not divisible by {div}"
            )
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return FeaturePyramid(feats)


class HsiEncoder(_PyramidEncoder):
    """Encoder for the upsampled cube (B spectral input channels)."""

    def __init__(self, bands: int, cfg: EncoderConfig = EncoderConfig()):
        if bands < 2:
            raise ConfigError("HsiEncoder: bands must be >= 2")
        super().__init__(bands, cfg)


class RgbEncoder(_PyramidEncoder):
    """Encoder for 3-channel images; normalized stages for stable matching."""

    def __init__(self, cfg: EncoderConfig = EncoderConfig()):
        super().__init__(3, cfg, normalize=True)


_RGB_ROLES = ("target", "ref1", "ref2")


class RgbEncoderBank(nn.Module):
    """Three independently parameterized RGB encoders.

    "target" encodes the blurry target image (matching query), "ref1" the
    warped reference for matching keys, "ref2" the warped reference for the
    features that actually get aggregated.
    """

    def __init__(self, cfg: EncoderConfig = EncoderConfig()):
        super().__init__()
        self.encoders = nn.ModuleDict({role: RgbEncoder(cfg) for role in _RGB_ROLES})

    def encode(self, img: torch.Tensor, which: str) -> FeaturePyramid:
        if which not in _RGB_ROLES:
            raise ConfigError(f"RgbEncoderBank: unknown role {which!r}, use {_RGB_ROLES}")
        return self.encoders[which](img)


def pretrain_contrastive(bank: RgbEncoderBank, *_args, **_kwargs) -> RgbEncoderBank:
    """Contrastive pretraining hook; intentionally a no-op at desk scale."""
    return bank

"""Iterative correlation-volume flow estimator, plus its loss and metrics.

A compact recurrent design: features at 1/4 resolution, an all-pairs
correlation volume pooled into a small pyramid, and a conv-GRU that emits a
flow update per refinement step.  Every step's flow (upsampled to input
resolution) is returned, so the sequence loss can weight late iterates more.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, ShapeError
from .types import FlowField, NDArrayF, RgbImage
from .warp import bilinear_sample, pixel_grid

_DOWN = 4  # feature grid stride


@dataclass(frozen=True)
class FlowEstimatorConfig:
    pyramid_levels: int = 2
    correlation_radius: int = 3
    refinement_iters: int = 6
    feature_channels: int = 48

    def __post_init__(self) -> None:
        for name in ("pyramid_levels", "correlation_radius", "refinement_iters",
                     "feature_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"FlowEstimatorConfig: {name} must be >= 1")


class _ConvGRU(nn.Module):
    def __init__(self, hidden: int, inp: int):
        super().__init__()
        self.convz = nn.Conv2d(hidden + inp, hidden, 3, padding=1)
        self.convr = nn.Conv2d(hidden + inp, hidden, 3, padding=1)
        self.convq = nn.Conv2d(hidden + inp, hidden, 3, padding=1)

    def forward(self, h, x):
        hx = torch.cat([h, x], dim=1)
        z = torch.sigmoid(self.convz(hx))
        r = torch.sigmoid(self.convr(hx))
        q = torch.tanh(self.convq(torch.cat([r * h, x], dim=1)))
        return (1 - z) * h + z * q


def _feature_stem(out_ch: int, normalize: bool = False) -> nn.Sequential:
    layers = [
        nn.Conv2d(3, 32, 7, stride=2, padding=3),
        nn.InstanceNorm2d(32), nn.ReLU(inplace=True),
        nn.Conv2d(32, out_ch, 3, stride=2, padding=1),
        nn.InstanceNorm2d(out_ch), nn.ReLU(inplace=True),
        nn.Conv2d(out_ch, out_ch, 3, padding=1),
    ]
    if normalize:
        # Zero-mean/unit-var channels keep the correlation volume contrastive:
        # without this the shared positive DC of ReLU features swamps the
        # match peak and the update operator has nothing to read.
        layers.append(nn.InstanceNorm2d(out_ch))
    return nn.Sequential(*layers)


class FlowEstimator(nn.Module):
    """estimate: (ref, tgt) -> per-iteration flows warping ref onto tgt's grid."""

    def __init__(self, cfg: FlowEstimatorConfig = FlowEstimatorConfig()):
        super().__init__()
        self.cfg = cfg
        fc = cfg.feature_channels
        hidden = 48
        ctx = 48
        self.fnet = _feature_stem(fc, normalize=True)
        self.cnet = _feature_stem(hidden + ctx)
        corr_planes = cfg.pyramid_levels * (2 * cfg.correlation_radius + 1) ** 2
        self.corr_enc = nn.Sequential(
            nn.Conv2d(corr_planes, 96, 1), nn.ReLU(inplace=True),
            nn.Conv2d(96, 64, 3, padding=1), nn.ReLU(inplace=True),
        )
        self.flow_enc = nn.Sequential(nn.Conv2d(2, 16, 3, padding=1), nn.ReLU(inplace=True))
        self.gru = _ConvGRU(hidden, 64 + 16 + ctx)
        self.head = nn.Sequential(
            nn.Conv2d(hidden, 48, 3, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(48, 2, 3, padding=1),
        )
        self._hidden = hidden

    def _corr_pyramid(self, f_tgt: torch.Tensor, f_ref: torch.Tensor) -> List[torch.Tensor]:
        b, c, h, w = f_tgt.shape
        corr = torch.einsum("bchw,bcuv->bhwuv", f_tgt, f_ref) / float(c) ** 0.5
        corr = corr.reshape(b * h * w, 1, h, w)
        pyr = [corr]
        for _ in range(self.cfg.pyramid_levels - 1):
            corr = F.avg_pool2d(corr, 2, stride=2)
            pyr.append(corr)
        return pyr

    def _lookup(self, pyr: List[torch.Tensor], coords: torch.Tensor) -> torch.Tensor:
        # coords: (B, 2, h, w) absolute positions in the ref feature grid
        b, _, h, w = coords.shape
        r = self.cfg.correlation_radius
        span = torch.arange(-r, r + 1, dtype=coords.dtype, device=coords.device)
        dy, dx = torch.meshgrid(span, span, indexing="ij")
        deltas = torch.stack([dx, dy], dim=-1).reshape(1, -1, 2)
        centre = coords.permute(0, 2, 3, 1).reshape(b * h * w, 1, 2)
        feats = []
        for lvl, vol in enumerate(pyr):
            pts = centre / (2.0 ** lvl) + deltas
            sampled = bilinear_sample(vol, pts, "zeros")  # (b*h*w, 1, K)
            feats.append(sampled.reshape(b, h, w, -1).permute(0, 3, 1, 2))
        return torch.cat(feats, dim=1)

    def forward(self, ref: torch.Tensor, tgt: torch.Tensor,
                iters: Optional[int] = None) -> List[torch.Tensor]:
        if ref.shape != tgt.shape or ref.ndim != 4 or ref.shape[1] != 3:
            raise ShapeError(f"FlowEstimator: got ref {tuple(ref.shape)}, tgt {tuple(tgt.shape)}")
        iters = self.cfg.refinement_iters if iters is None else iters
        b, _, h0, w0 = ref.shape
        pad_h = (-h0) % _DOWN
        pad_w = (-w0) % _DOWN
        if pad_h or pad_w:
            ref = F.pad(ref, (0, pad_w, 0, pad_h), mode="replicate")
            tgt = F.pad(tgt, (0, pad_w, 0, pad_h), mode="replicate")
        f_ref = self.fnet(ref)
        f_tgt = self.fnet(tgt)
        hidden, ctx = torch.split(self.cnet(tgt), [self._hidden, 48], dim=1)
        hidden = torch.tanh(hidden)
        ctx = torch.relu(ctx)
        pyr = self._corr_pyramid(f_tgt, f_ref)
        _, _, h, w = f_tgt.shape
        grid = pixel_grid(h, w, ref.dtype, ref.device).expand(b, -1, -1, -1)
        flow = torch.zeros(b, 2, h, w, dtype=ref.dtype, device=ref.device)
        outputs: List[torch.Tensor] = []
        for _ in range(iters):
            corr_feat = self.corr_enc(self._lookup(pyr, grid + flow))
            x = torch.cat([corr_feat, self.flow_enc(flow), ctx], dim=1)
            hidden = self.gru(hidden, x)
            flow = flow + self.head(hidden)
            up = F.interpolate(flow, scale_factor=_DOWN, mode="bilinear",
                               align_corners=False) * _DOWN
            outputs.append(up[:, :, :h0, :w0])
        return outputs

    @torch.no_grad()
    def estimate(self, ref: RgbImage, tgt: RgbImage) -> List[FlowField]:
        """Numpy-level wrapper; returns the full iterate sequence."""
        to_t = lambda im: torch.from_numpy(
            np.ascontiguousarray(im.data, dtype=np.float32)
        ).permute(2, 0, 1).unsqueeze(0)
        outs = self.forward(to_t(ref), to_t(tgt))
        return [FlowField(o.squeeze(0).permute(1, 2, 0).numpy().astype(np.float64))
                for o in outs]


## ---------------------------------------------------------------------------
## sequence loss and flow metrics
## ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FlowLossConfig:
    gamma: float = 0.8

    def __post_init__(self) -> None:
        if not (0 < self.gamma <= 1):
            raise ConfigError("FlowLossConfig: gamma must be in (0, 1]")


def flow_loss(preds: List[torch.Tensor], gt: torch.Tensor,
              cfg: FlowLossConfig = FlowLossConfig()) -> torch.Tensor:
    """sum_i gamma^(N-i) * mean|gt - pred_i| over the iterate sequence."""
    if not preds:
        raise ShapeError("flow_loss: empty prediction sequence")
    n = len(preds)
    total = preds[0].new_zeros(())
    for i, p in enumerate(preds, start=1):
        if p.shape != gt.shape:
            raise ShapeError(f"flow_loss: pred {tuple(p.shape)} vs gt {tuple(gt.shape)}")
        total = total + cfg.gamma ** (n - i) * (gt - p).abs().mean()
    return total


def _flow_array(f: Union[FlowField, NDArrayF, torch.Tensor]) -> NDArrayF:
    if isinstance(f, FlowField):
        return f.data
    if isinstance(f, torch.Tensor):
        f = f.detach().cpu().numpy()
    return np.asarray(f, dtype=np.float64)


def flow_metrics(pred: Union[FlowField, NDArrayF], gt: Union[FlowField, NDArrayF],
                 px_thresh: float = 3.0, rel_thresh: float = 0.05) -> dict:
    """End-point error stats: {'epe': mean px, 'f1': outlier fraction}.

    A pixel is an outlier when its error exceeds px_thresh AND ALSO exceeds
    rel_thresh times the ground-truth magnitude there.
    """
    p, g = _flow_array(pred), _flow_array(gt)
    if p.shape != g.shape or p.ndim != 3 or p.shape[2] != 2:
        raise ShapeError(f"flow_metrics: shapes {p.shape} vs {g.shape}")
    err = np.linalg.norm(p - g, axis=2)
    mag = np.linalg.norm(g, axis=2)
    outlier = (err > px_thresh) & (err > rel_thresh * mag)
    return {"epe": float(err.mean()), "f1": float(outlier.mean())}

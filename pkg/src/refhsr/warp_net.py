"""Residual U-Net refiner for coarsely warped references.

Takes the flow-warped reference plus the blurry target as guidance and
predicts a residual correction; with the zero-initialized head the module
starts as the identity on the coarse input.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ShapeError


def _block(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1), nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1), nn.ReLU(inplace=True),
    )


class WarpNet(nn.Module):
    """3-level U-Net, base width 32, residual output head."""

    def __init__(self, base: int = 32):
        super().__init__()
        self.enc1 = _block(6, base)
        self.enc2 = _block(base, base * 2)
        self.enc3 = _block(base * 2, base * 4)
        self.up2 = nn.ConvTranspose2d(base * 4, base * 2, 2, stride=2)
        self.dec2 = _block(base * 4, base * 2)
        self.up1 = nn.ConvTranspose2d(base * 2, base, 2, stride=2)
        self.dec1 = _block(base * 2, base)
        self.head = nn.Conv2d(base, 3, 3, padding=1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, coarse: torch.Tensor, guide: torch.Tensor) -> torch.Tensor:
        if coarse.shape != guide.shape or coarse.ndim != 4 or coarse.shape[1] != 3:
            raise ShapeError(
                f"WarpNet: got coarse {tuple(coarse.shape)}, guide {tuple(guide.shape)}"
            )
        b, _, h0, w0 = coarse.shape
        pad_h = (-h0) % 4
        pad_w = (-w0) % 4
        x = torch.cat([coarse, guide], dim=1)
        if pad_h or pad_w:
            x = F.pad(x, (0, pad_w, 0, pad_h), mode="replicate")
        e1 = self.enc1(x)
        e2 = self.enc2(F.avg_pool2d(e1, 2))
        e3 = self.enc3(F.avg_pool2d(e2, 2))
        d2 = self.dec2(torch.cat([self.up2(e3), e2], dim=1))
        d1 = self.dec1(torch.cat([self.up1(d2), e1], dim=1))
        res = self.head(d1)[:, :, :h0, :w0]
        return coarse + res

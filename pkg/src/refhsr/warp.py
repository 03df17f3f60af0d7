"""Differentiable bilinear sampling and backward warping (torch).

bilinear_sample is the one gather primitive shared by image warping,
correlation lookup, and deformable feature aggregation.  Out-of-bounds
policy: "border" clamps (used for images), "zeros" masks contributions
(used for features and correlation volumes).
"""

from __future__ import annotations

import numpy as np
import torch

from .errors import ShapeError
from .types import FlowField, RgbImage


def bilinear_sample(values: torch.Tensor, coords: torch.Tensor, mode: str = "zeros") -> torch.Tensor:
    """Sample values (N, C, H, W) at coords (N, K, 2) [x, y]; returns (N, C, K)."""
    if mode not in ("zeros", "border"):
        raise ShapeError(f"bilinear_sample: unknown mode {mode!r}")
    n, c, h, w = values.shape
    x = coords[..., 0]
    y = coords[..., 1]
    if mode == "border":
        x = x.clamp(0.0, w - 1.0)
        y = y.clamp(0.0, h - 1.0)
    x0 = torch.floor(x)
    y0 = torch.floor(y)
    fx = x - x0
    fy = y - y0
    flat = values.reshape(n, c, h * w)
    out = torch.zeros(n, c, coords.shape[1], dtype=values.dtype, device=values.device)
    for dx, dy, wgt in (
        (0, 0, (1 - fx) * (1 - fy)),
        (1, 0, fx * (1 - fy)),
        (0, 1, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        xi = x0 + dx
        yi = y0 + dy
        if mode == "zeros":
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            wgt = wgt * valid.to(values.dtype)
        xi = xi.clamp(0, w - 1).long()
        yi = yi.clamp(0, h - 1).long()
        idx = (yi * w + xi).unsqueeze(1).expand(n, c, -1)
        out = out + torch.gather(flat, 2, idx) * wgt.unsqueeze(1)
    return out


def pixel_grid(h: int, w: int, dtype: torch.dtype = torch.float32,
               device: torch.device | str = "cpu") -> torch.Tensor:
    """Coordinate grid (1, 2, H, W) with channels (x, y)."""
    ys, xs = torch.meshgrid(
        torch.arange(h, dtype=dtype, device=device),
        torch.arange(w, dtype=dtype, device=device),
        indexing="ij",
    )
    return torch.stack([xs, ys], dim=0).unsqueeze(0)


def warp_tensor(x: torch.Tensor, flow: torch.Tensor, mode: str = "border") -> torch.Tensor:
    """Backward warp: out(p) = x(p + flow(p)); x (B, C, H, W), flow (B, 2, H, W)."""
    if x.ndim != 4 or flow.ndim != 4 or flow.shape[1] != 2:
        raise ShapeError(f"warp_tensor: got x {tuple(x.shape)}, flow {tuple(flow.shape)}")
    if x.shape[0] != flow.shape[0] or x.shape[2:] != flow.shape[2:]:
        raise ShapeError("warp_tensor: batch/spatial mismatch between x and flow")
    b, c, h, w = x.shape
    coords = (pixel_grid(h, w, x.dtype, x.device) + flow).permute(0, 2, 3, 1).reshape(b, h * w, 2)
    out = bilinear_sample(x, coords, mode)
    return out.reshape(b, c, h, w)


def warp_image(img: RgbImage, flow: FlowField) -> RgbImage:
    """Backward-warp an RGB image by a flow field (border-clamped sampling)."""
    if img.data.shape[:2] != flow.data.shape[:2]:
        raise ShapeError(f"warp_image: image {img.data.shape} vs flow {flow.data.shape}")
    x = torch.from_numpy(np.ascontiguousarray(img.data, dtype=np.float64))
    f = torch.from_numpy(np.ascontiguousarray(flow.data, dtype=np.float64))
    out = warp_tensor(x.permute(2, 0, 1).unsqueeze(0), f.permute(2, 0, 1).unsqueeze(0), "border")
    arr = out.squeeze(0).permute(1, 2, 0).numpy()
    return RgbImage(np.clip(arr, 0.0, 1.0).astype(img.data.dtype))

"""Novel-view and ground-truth-flow rendering from layered scenes.

Planes are composited front to back: w_n = alpha_n * prod_{m<n} (1 - alpha_m).
The same weight law drives both the image path (warped densities, target
grid) and the flow path (source densities, source grid).
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .mpi import CameraPose, MultiplaneImage, homography_map, plane_spacings
from .types import FlowField, NDArrayF, RgbImage

## Opacity laws mapping (spacing, density) -> alpha.  "one_minus_exp" is the
## physically sensible default; "exp" reproduces the inverted literal variant
## and is kept behind this switch.
OPACITY_LAWS = ("one_minus_exp", "exp")


def opacity(densities: NDArrayF, spacings: NDArrayF, law: str = "one_minus_exp") -> NDArrayF:
    """Per-plane alpha from densities (N, ...) and plane spacings (N,)."""
    if law not in OPACITY_LAWS:
        raise ShapeError(f"opacity: unknown law {law!r}, expected one of {OPACITY_LAWS}")
    n = densities.shape[0]
    if spacings.shape != (n,):
        raise ShapeError(f"opacity: spacings {spacings.shape} vs {n} planes")
    delta = spacings.reshape((n,) + (1,) * (densities.ndim - 1))
    decay = np.exp(-delta * densities)
    return decay if law == "exp" else 1.0 - decay


def compositing_weights(alphas: NDArrayF) -> NDArrayF:
    """Front-to-back weights w_n = alpha_n * prod_{m<n} (1 - alpha_m)."""
    trans = np.cumprod(1.0 - alphas, axis=0)
    shifted = np.concatenate([np.ones_like(trans[:1]), trans[:-1]], axis=0)
    return alphas * shifted


def _bilinear_zero(values: NDArrayF, coords_xy: NDArrayF) -> NDArrayF:
    """Sample (H, W[, C]) at float coords (..., 2); outside contributes zero."""
    h, w = values.shape[:2]
    x, y = coords_xy[..., 0], coords_xy[..., 1]
    x0, y0 = np.floor(x).astype(np.int64), np.floor(y).astype(np.int64)
    out_shape = coords_xy.shape[:-1] + values.shape[2:]
    out = np.zeros(out_shape, dtype=np.float64)
    fx, fy = x - x0, y - y0
    for dx, dy, wgt in (
        (0, 0, (1 - fx) * (1 - fy)),
        (1, 0, fx * (1 - fy)),
        (0, 1, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        xi, yi = x0 + dx, y0 + dy
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        xi_c, yi_c = np.clip(xi, 0, w - 1), np.clip(yi, 0, h - 1)
        contrib = values[yi_c, xi_c] * np.where(valid, wgt, 0.0)[..., None] \
            if values.ndim == 3 else values[yi_c, xi_c] * np.where(valid, wgt, 0.0)
        out += contrib
    return out


def _pixel_grid(h: int, w: int) -> NDArrayF:
    ys, xs = np.mgrid[0:h, 0:w]
    return np.stack([xs, ys], axis=-1).astype(np.float64)


def composite_view(
    mpi: MultiplaneImage,
    src_cam: CameraPose,
    tgt_cam: CameraPose,
    law: str = "one_minus_exp",
) -> tuple[NDArrayF, NDArrayF]:
    """Render the target view; returns (rgb (H, W, 3), weights (N, H, W)).

    Each plane's colours and densities are inverse-warped onto the target
    pixel grid (bilinear, zero outside), converted to alphas, composited.
    """
    n, h, w = mpi.densities.shape
    spacings = plane_spacings(mpi.depths)
    grid = _pixel_grid(h, w)
    warped_colors = np.zeros((n, h, w, 3), dtype=np.float64)
    warped_densities = np.zeros((n, h, w), dtype=np.float64)
    for i in range(n):
        src_xy = homography_map(grid, float(mpi.depths[i]), src_cam, tgt_cam)
        warped_colors[i] = _bilinear_zero(mpi.colors[i], src_xy)
        warped_densities[i] = _bilinear_zero(mpi.densities[i], src_xy)
    weights = compositing_weights(opacity(warped_densities, spacings, law))
    rgb = np.einsum("nhwc,nhw->hwc", warped_colors, weights)
    return rgb, weights


def render_view(
    mpi: MultiplaneImage,
    src_cam: CameraPose,
    tgt_cam: CameraPose,
    law: str = "one_minus_exp",
) -> RgbImage:
    rgb, _ = composite_view(mpi, src_cam, tgt_cam, law)
    return RgbImage(np.clip(rgb, 0.0, 1.0))


def plane_flows(mpi: MultiplaneImage, src_cam: CameraPose, tgt_cam: CameraPose) -> NDArrayF:
    """Per-plane flow (N, H, W, 2) on the source grid: f_n = p_tgt - p_src.

    Mapping source pixels into the target view reuses homography_map with
    the camera roles swapped (its exact inverse direction).
    """
    n, h, w = mpi.densities.shape
    grid = _pixel_grid(h, w)
    flows = np.zeros((n, h, w, 2), dtype=np.float64)
    for i in range(n):
        tgt_xy = homography_map(grid, float(mpi.depths[i]), tgt_cam, src_cam)
        flows[i] = tgt_xy - grid
    return flows


def render_flow(
    mpi: MultiplaneImage, per_plane_flows: NDArrayF, law: str = "one_minus_exp"
) -> FlowField:
    """Composite per-plane flows with the source-view weights of the MPI."""
    n, h, w = mpi.densities.shape
    if per_plane_flows.shape != (n, h, w, 2):
        raise ShapeError(
            f"render_flow: flows {per_plane_flows.shape} vs planes ({n}, {h}, {w}, 2)"
        )
    spacings = plane_spacings(mpi.depths)
    weights = compositing_weights(opacity(mpi.densities, spacings, law))
    flow = np.einsum("nhwc,nhw->hwc", per_plane_flows, weights)
    return FlowField(flow)

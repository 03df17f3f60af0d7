"""Raster conversion and degradation operators.

Resampling uses a separable Catmull-Rom cubic kernel with half-pixel
centre alignment and replicated borders; this kernel reproduces linear
ramps exactly in the interior, which the resampling tests rely on.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import ShapeError
from .types import DegradationConfig, HsiCube, NDArrayF, RgbImage, SpectralResponse

## ---------------------------------------------------------------------------
## spectral projection
## ---------------------------------------------------------------------------


def srf_convert(cube: HsiCube, srf: SpectralResponse) -> RgbImage:
    """Project a cube to RGB through a spectral response matrix.

    Columns of the response are normalized to unit sum before application,
    so a constant-in-band cube maps to the same constant in RGB.
    """
    if srf.bands != cube.bands:
        raise ShapeError(f"srf_convert: cube has {cube.bands} bands, srf has {srf.bands}")
    weights = srf.data / srf.data.sum(axis=0, keepdims=True)
    rgb = np.einsum("hwb,bc->hwc", cube.data.astype(np.float64), weights)
    return RgbImage(np.clip(rgb, 0.0, 1.0).astype(cube.data.dtype))


## ---------------------------------------------------------------------------
## bicubic resampling
## ---------------------------------------------------------------------------


def _catmull_rom_weights(t: NDArrayF) -> NDArrayF:
    """Weights for taps (-1, 0, 1, 2) at fraction t in [0, 1); shape (n, 4)."""
    t = np.asarray(t, dtype=np.float64)
    t2, t3 = t * t, t * t * t
    w = np.empty(t.shape + (4,), dtype=np.float64)
    w[..., 0] = -0.5 * t3 + t2 - 0.5 * t
    w[..., 1] = 1.5 * t3 - 2.5 * t2 + 1.0
    w[..., 2] = -1.5 * t3 + 2.0 * t2 + 0.5 * t
    w[..., 3] = 0.5 * t3 - 0.5 * t2
    return w


def _resample_axis0(arr: NDArrayF, out_len: int, scale: float) -> NDArrayF:
    n = arr.shape[0]
    # half-pixel centre convention: output x samples input at (x + .5)/s - .5
    xs = (np.arange(out_len, dtype=np.float64) + 0.5) / scale - 0.5
    x0 = np.floor(xs).astype(np.int64)
    w = _catmull_rom_weights(xs - x0)
    out = np.zeros((out_len,) + arr.shape[1:], dtype=np.float64)
    for k in range(4):
        idx = np.clip(x0 + (k - 1), 0, n - 1)
        out += w[:, k].reshape((-1,) + (1,) * (arr.ndim - 1)) * arr[idx]
    return out


def resize_bicubic(arr: NDArrayF, scale: int) -> NDArrayF:
    """Separable bicubic resize of an (H, W, C) array by an integer factor."""
    if arr.ndim != 3:
        raise ShapeError(f"resize_bicubic: expected (H, W, C), got {arr.shape}")
    if scale < 1:
        raise ShapeError(f"resize_bicubic: scale must be >= 1, got {scale}")
    if scale == 1:
        return arr.copy()
    h, w, _ = arr.shape
    out = _resample_axis0(arr.astype(np.float64), h * scale, float(scale))
    out = np.swapaxes(_resample_axis0(np.swapaxes(out, 0, 1), w * scale, float(scale)), 0, 1)
    return out


def upsample(cube: HsiCube, scale: int) -> HsiCube:
    """Bicubic per-band upsampling by an integer factor.

    Cubic overshoot is clipped back to [0, 1] to preserve the cube contract.
    """
    out = np.clip(resize_bicubic(cube.data, scale), 0.0, 1.0)
    return HsiCube(out.astype(cube.data.dtype), cube.band_centers)


def upsample_rgb(img: RgbImage, scale: int) -> RgbImage:
    out = np.clip(resize_bicubic(img.data, scale), 0.0, 1.0)
    return RgbImage(out.astype(img.data.dtype))


## ---------------------------------------------------------------------------
## degradation
## ---------------------------------------------------------------------------


def gaussian_kernel_1d(size: int, sigma: float) -> NDArrayF:
    """Normalized 1-D Gaussian; even sizes tap half-integer offsets."""
    if size < 1 or not (sigma > 0):
        raise ShapeError(f"gaussian_kernel_1d: bad size={size} sigma={sigma}")
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def degrade(cube: HsiCube, cfg: DegradationConfig) -> HsiCube:
    """Gaussian blur followed by x-scale decimation, per band.

    Blur borders are reflected.  Decimation keeps rows/columns at offset
    (scale - 1) // 2, i.e. near block centres.  scale == 1 is the identity.
    """
    if cfg.scale == 1:
        return HsiCube(cube.data.copy(), cube.band_centers)
    h, w, _ = cube.shape
    if h % cfg.scale or w % cfg.scale:
        raise ShapeError(f"degrade: {h}x{w} not divisible by scale {cfg.scale}")
    kernel = gaussian_kernel_1d(cfg.effective_kernel_size, cfg.blur_sigma)
    blurred = ndimage.convolve1d(cube.data.astype(np.float64), kernel, axis=0, mode="reflect")
    blurred = ndimage.convolve1d(blurred, kernel, axis=1, mode="reflect")
    off = (cfg.scale - 1) // 2
    out = blurred[off :: cfg.scale, off :: cfg.scale]
    return HsiCube(np.clip(out, 0.0, 1.0).astype(cube.data.dtype), cube.band_centers)

"""Reconstruction quality metrics for hyperspectral rasters.

All functions take (H, W, B) float arrays (or HsiCube .data), promote to
float64 internally, and raise ShapeError when the two inputs disagree.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import ShapeError
from .ops import gaussian_kernel_1d
from .types import NDArrayF

PSNR_CAP_DB = 99.0


def _as_pair(a: NDArrayF, b: NDArrayF) -> tuple[NDArrayF, NDArrayF]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"metric: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim != 3:
        raise ShapeError(f"metric: expected (H, W, B), got {a.shape}")
    return a, b


def psnr(a: NDArrayF, b: NDArrayF, peak: float = 1.0, cap_db: float = PSNR_CAP_DB) -> float:
    """10*log10(peak^2 / MSE) with the MSE over all pixels and bands.

    Identical inputs (MSE == 0) return cap_db.
    """
    a, b = _as_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float(cap_db)
    return min(float(cap_db), float(10.0 * np.log10(peak * peak / mse)))


## SSIM constants: 11x11 Gaussian window (sigma 1.5), K1/K2 from the
## standard definition, dynamic range 1.0.
_SSIM_WIN = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def _win_filter(img: NDArrayF, kernel: NDArrayF) -> NDArrayF:
    """Separable correlation, cropped to the valid (fully-covered) region."""
    half = _SSIM_WIN // 2
    out = ndimage.correlate1d(img, kernel, axis=0, mode="constant")
    out = ndimage.correlate1d(out, kernel, axis=1, mode="constant")
    return out[half:-half, half:-half]


def ssim(a: NDArrayF, b: NDArrayF, peak: float = 1.0) -> float:
    """Mean windowed SSIM over all bands (valid windows only)."""
    a, b = _as_pair(a, b)
    h, w, bands = a.shape
    if h < _SSIM_WIN or w < _SSIM_WIN:
        raise ShapeError(f"ssim: image {h}x{w} smaller than {_SSIM_WIN}x{_SSIM_WIN} window")
    kernel = gaussian_kernel_1d(_SSIM_WIN, _SSIM_SIGMA)
    c1 = (_SSIM_K1 * peak) ** 2
    c2 = (_SSIM_K2 * peak) ** 2
    vals = []
    for k in range(bands):
        x, y = a[:, :, k], b[:, :, k]
        mx, my = _win_filter(x, kernel), _win_filter(y, kernel)
        sxx = _win_filter(x * x, kernel) - mx * mx
        syy = _win_filter(y * y, kernel) - my * my
        sxy = _win_filter(x * y, kernel) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        vals.append(num / den)
    return float(np.mean(vals))


def sam(a: NDArrayF, b: NDArrayF) -> float:
    """Mean spectral angle (radians) between per-pixel spectra.

    Uses the stable 2*atan2(|u - v|, |u + v|) form on unit spectra, which
    stays exact (instead of ~1e-8 arccos noise) when b is a scalar multiple
    of a.  Pixels where either spectrum has zero norm are skipped; if every
    pixel is skipped the result is 0.0.
    """
    a, b = _as_pair(a, b)
    av = a.reshape(-1, a.shape[2])
    bv = b.reshape(-1, b.shape[2])
    na = np.linalg.norm(av, axis=1)
    nb = np.linalg.norm(bv, axis=1)
    valid = (na > 0) & (nb > 0)
    if not valid.any():
        return 0.0
    u = av[valid] / na[valid, None]
    v = bv[valid] / nb[valid, None]
    angles = 2.0 * np.arctan2(np.linalg.norm(u - v, axis=1), np.linalg.norm(u + v, axis=1))
    return float(np.mean(angles))

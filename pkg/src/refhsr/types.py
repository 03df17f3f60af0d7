"""Core raster types.

All rasters are plain numpy arrays wrapped in frozen dataclasses that
validate their contracts once, on construction.  Axis order is always
(H, W, C): height first, channels last.  Values of image-like rasters
live in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import numpy.typing as npt

from .errors import ConfigError, ShapeError

NDArrayF = npt.NDArray[np.floating]

## ---------------------------------------------------------------------------
## image-like rasters
## ---------------------------------------------------------------------------


def _check_image_values(name: str, data: np.ndarray) -> None:
    if not np.issubdtype(data.dtype, np.floating):
        raise ShapeError(f"{name}: expected float array, got {data.dtype}")
    if not np.isfinite(data).all():
        raise ShapeError(f"{name}: non-finite values")
    lo, hi = float(data.min()), float(data.max())
    if lo < 0.0 or hi > 1.0:
        raise ShapeError(f"{name}: values outside [0, 1] (min={lo:g}, max={hi:g})")


@dataclass(frozen=True)
class HsiCube:
    """Hyperspectral cube, shape (H, W, B), B >= 2, values in [0, 1].

    band_centers, when present, are strictly increasing wavelengths
    (nanometres by convention) of length B.
    """

    data: NDArrayF
    band_centers: Optional[Tuple[float, ...]] = None

    def __post_init__(self) -> None:
        if self.data.ndim != 3:
            raise ShapeError(f"HsiCube: expected (H, W, B), got {self.data.shape}")
        h, w, b = self.data.shape
        if h < 1 or w < 1 or b < 2:
            raise ShapeError(f"HsiCube: bad extents {self.data.shape} (need B >= 2)")
        _check_image_values("HsiCube", self.data)
        if self.band_centers is not None:
            if len(self.band_centers) != b:
                raise ShapeError(
                    f"HsiCube: {len(self.band_centers)} band centers for {b} bands"
                )
            centers = np.asarray(self.band_centers, dtype=np.float64)
            if not np.isfinite(centers).all() or np.any(np.diff(centers) <= 0):
                raise ShapeError("HsiCube: band centers must be finite, strictly increasing")

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def bands(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class RgbImage:
    """Three-channel image, shape (H, W, 3), values in [0, 1]."""

    data: NDArrayF

    def __post_init__(self) -> None:
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ShapeError(f"RgbImage: expected (H, W, 3), got {self.data.shape}")
        _check_image_values("RgbImage", self.data)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel scene depth, shape (H, W), strictly positive and finite."""

    data: NDArrayF

    def __post_init__(self) -> None:
        if self.data.ndim != 2:
            raise ShapeError(f"DepthMap: expected (H, W), got {self.data.shape}")
        if not np.isfinite(self.data).all() or self.data.min() <= 0:
            raise ShapeError("DepthMap: depths must be finite and > 0")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class FlowField:
    """Dense 2-D displacement field, shape (H, W, 2), channels (dx, dy) in px."""

    data: NDArrayF

    def __post_init__(self) -> None:
        if self.data.ndim != 3 or self.data.shape[2] != 2:
            raise ShapeError(f"FlowField: expected (H, W, 2), got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ShapeError("FlowField: non-finite values")

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]


## ---------------------------------------------------------------------------
## spectral response + degradation settings
## ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralResponse:
    """Camera spectral response, shape (B, 3): band -> (R, G, B) weights.

    Entries are nonnegative and every column has positive sum; columns are
    normalized to unit sum at application time, not here.
    """

    data: NDArrayF

    def __post_init__(self) -> None:
        if self.data.ndim != 2 or self.data.shape[1] != 3:
            raise ShapeError(f"SpectralResponse: expected (B, 3), got {self.data.shape}")
        if self.data.shape[0] < 2:
            raise ShapeError("SpectralResponse: need at least 2 bands")
        if not np.isfinite(self.data).all() or self.data.min() < 0:
            raise ShapeError("SpectralResponse: entries must be finite and >= 0")
        if np.any(self.data.sum(axis=0) <= 0):
            raise ShapeError("SpectralResponse: every column needs positive sum")

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @classmethod
    def gaussian_rgb(
        cls,
        band_centers_nm: NDArrayF,
        peaks_nm: Tuple[float, float, float] = (610.0, 540.0, 465.0),
        width_nm: float = 55.0,
    ) -> "SpectralResponse":
        """Smooth synthetic RGB response: one Gaussian lobe per channel."""
        centers = np.asarray(band_centers_nm, dtype=np.float64)
        if centers.ndim != 1 or centers.size < 2:
            raise ShapeError("gaussian_rgb: band_centers_nm must be 1-D with >= 2 entries")
        cols = [np.exp(-0.5 * ((centers - p) / width_nm) ** 2) for p in peaks_nm]
        return cls(np.stack(cols, axis=1))


def default_band_centers(bands: int, lo_nm: float = 400.0, hi_nm: float = 700.0) -> NDArrayF:
    """Evenly spaced band centers across the visible range."""
    if bands < 2:
        raise ShapeError("default_band_centers: need bands >= 2")
    return np.linspace(lo_nm, hi_nm, bands)


_ALLOWED_SCALES = (1, 2, 4, 8, 16)


@dataclass(frozen=True)
class DegradationConfig:
    """Blur-then-decimate degradation settings.

    blur_kernel_size is normalized to the next odd size unless
    keep_even_kernel is set, in which case the literal even-length kernel
    (taps at half-integer offsets) is used.  scale == 1 means pass-through.
    """

    scale: int = 4
    blur_kernel_size: int = 8
    blur_sigma: float = 3.0
    keep_even_kernel: bool = False

    def __post_init__(self) -> None:
        if self.scale not in _ALLOWED_SCALES:
            raise ConfigError(f"DegradationConfig: scale {self.scale} not in {_ALLOWED_SCALES}")
        if self.blur_kernel_size < 1:
            raise ConfigError("DegradationConfig: blur_kernel_size must be >= 1")
        if not (self.blur_sigma > 0):
            raise ConfigError("DegradationConfig: blur_sigma must be > 0")

    @property
    def effective_kernel_size(self) -> int:
        k = self.blur_kernel_size
        if k % 2 == 0 and not self.keep_even_kernel:
            k += 1
        return k

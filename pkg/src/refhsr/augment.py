"""Stochastic photometric augmentation for cubes and RGB images.

Used when simulating the appearance gap between a degraded target image
and a clean reference view.  All randomness comes from cfg.seed; the draw
order is fixed and documented on augment() so tests can replay it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple, TypeVar, Union

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy import ndimage

from .errors import ConfigError
from .types import HsiCube, RgbImage

Raster = TypeVar("Raster", HsiCube, RgbImage)


@dataclass(frozen=True)
class AugmentConfig:
    """Jitter ranges are (lo, hi) factors; hue is an additive shift range.

    Degenerate ranges (lo == hi) and zero sigmas make augment() the identity.
    """

    noise_sigma: float = 0.0
    blur_sigma: float = 0.0
    brightness: Tuple[float, float] = (1.0, 1.0)
    contrast: Tuple[float, float] = (1.0, 1.0)
    saturation: Tuple[float, float] = (1.0, 1.0)
    hue: Tuple[float, float] = (0.0, 0.0)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.noise_sigma < 0 or self.blur_sigma < 0:
            raise ConfigError("AugmentConfig: sigmas must be >= 0")
        for name in ("brightness", "contrast", "saturation", "hue"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
                raise ConfigError(f"AugmentConfig: bad {name} range ({lo}, {hi})")
        for name in ("brightness", "contrast", "saturation"):
            if getattr(self, name)[0] < 0:
                raise ConfigError(f"AugmentConfig: {name} factors must be >= 0")
        if self.hue[0] < -0.5 or self.hue[1] > 0.5:
            raise ConfigError("AugmentConfig: hue shifts must lie in [-0.5, 0.5]")


def augment(img: Raster, cfg: AugmentConfig) -> Raster:
    """Apply seeded photometric jitter; output is clipped back to [0, 1].

    Draw order (always consumed, even when degenerate): brightness factor,
    contrast factor, saturation factor, hue shift, then the noise field.
    Op order: brightness, contrast, saturation, hue, blur, noise.  Hue only
    applies to 3-channel rasters and is skipped for cubes.
    """
    rng = np.random.default_rng(cfg.seed)
    b = rng.uniform(*cfg.brightness)
    c = rng.uniform(*cfg.contrast)
    s = rng.uniform(*cfg.saturation)
    hshift = rng.uniform(*cfg.hue)

    x = img.data.astype(np.float64)
    if b != 1.0:
        x = x * b
    if c != 1.0:
        mu = x.mean()
        x = mu + c * (x - mu)
    if s != 1.0:
        m = x.mean(axis=2, keepdims=True)
        x = m + s * (x - m)
    if hshift != 0.0 and x.shape[2] == 3:
        hsv = rgb_to_hsv(np.clip(x, 0.0, 1.0))
        hsv[..., 0] = np.mod(hsv[..., 0] + hshift, 1.0)
        x = hsv_to_rgb(hsv)
    if cfg.blur_sigma > 0:
        x = ndimage.gaussian_filter(x, sigma=(cfg.blur_sigma, cfg.blur_sigma, 0), mode="reflect")
    if cfg.noise_sigma > 0:
        x = x + rng.normal(0.0, cfg.noise_sigma, size=x.shape)
    x = np.clip(x, 0.0, 1.0).astype(img.data.dtype)

    if isinstance(img, HsiCube):
        return HsiCube(x, img.band_centers)  # type: ignore[return-value]
    return RgbImage(x)  # type: ignore[return-value]

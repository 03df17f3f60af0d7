"""Reference-guided hyperspectral super-resolution toolkit."""

from .config import TrainConfig, load_config, save_config
from .errors import (ConfigError, DataError, DivergenceError, PhaseOrderError,
                     RefHsrError, ShapeError, SingularMappingError)
from .metrics import psnr, sam, ssim
from .ops import degrade, resize_bicubic, srf_convert, upsample, upsample_rgb
from .types import (DegradationConfig, DepthMap, FlowField, HsiCube, RgbImage,
                    SpectralResponse, default_band_centers)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "DegradationConfig",
    "DepthMap",
    "DivergenceError",
    "FlowField",
    "HsiCube",
    "PhaseOrderError",
    "RefHsrError",
    "RgbImage",
    "ShapeError",
    "SingularMappingError",
    "SpectralResponse",
    "TrainConfig",
    "default_band_centers",
    "degrade",
    "load_config",
    "psnr",
    "resize_bicubic",
    "sam",
    "save_config",
    "srf_convert",
    "ssim",
    "upsample",
    "upsample_rgb",
    "__version__",
]

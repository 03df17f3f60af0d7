"""Figure rendering from evaluation reports and saved rasters.

All plots read the JSON report / ``.f32`` rasters that evaluation wrote, so
nothing here recomputes a metric.  The flow visualization maps direction to
hue and magnitude to saturation.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402
from matplotlib.colors import hsv_to_rgb  # noqa: E402

from .errors import DataError  # noqa: E402
from .types import NDArrayF, RgbImage  # noqa: E402

PathLike = Union[str, Path]


def plot_error_map(err: NDArrayF, out_png: PathLike, title: str = "abs error") -> None:
    err = np.asarray(err, dtype=np.float64)
    if err.ndim == 3:
        err = err[..., 0]
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    im = ax.imshow(err, cmap="magma", vmin=0.0)
    ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.savefig(out_png, dpi=120, bbox_inches="tight")
    plt.close(fig)


def plot_band_curve(
    values: Sequence[float],
    out_png: PathLike,
    *,
    ylabel: str,
    baseline: Optional[Sequence[float]] = None,
    band_centers: Optional[Sequence[float]] = None,
) -> None:
    xs = list(band_centers) if band_centers is not None else list(range(len(values)))
    fig, ax = plt.subplots(figsize=(4.8, 3.2))
    ax.plot(xs, list(values), marker="o", label="model")
    if baseline is not None:
        ax.plot(xs, list(baseline), marker="s", linestyle="--", label="bicubic")
        ax.legend()
    ax.set_xlabel("band centre (nm)" if band_centers is not None else "band index")
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    fig.savefig(out_png, dpi=120, bbox_inches="tight")
    plt.close(fig)


def plot_spectral_curves(
    curves: Dict[str, Sequence[float]],
    out_png: PathLike,
    *,
    band_centers: Optional[Sequence[float]] = None,
) -> None:
    if not curves:
        raise DataError("plot_spectral_curves: no curves to draw")
    n = len(next(iter(curves.values())))
    xs = list(band_centers) if band_centers is not None else list(range(n))
    fig, ax = plt.subplots(figsize=(4.8, 3.2))
    for name, ys in curves.items():
        ax.plot(xs, list(ys), marker=".", label=name)
    ax.set_xlabel("band centre (nm)" if band_centers is not None else "band index")
    ax.set_ylabel("mean reflectance")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.savefig(out_png, dpi=120, bbox_inches="tight")
    plt.close(fig)


def flow_to_rgb(flow: NDArrayF, max_magnitude: Optional[float] = None) -> NDArrayF:
    """Direction -> hue, magnitude -> saturation; constant flow is one hue."""
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise DataError(f"flow_to_rgb: expected (H, W, 2), got {flow.shape}")
    mag = np.hypot(flow[..., 0], flow[..., 1])
    peak = float(max_magnitude) if max_magnitude is not None else float(mag.max())
    hsv = np.zeros(flow.shape[:2] + (3,))
    hsv[..., 0] = (np.arctan2(flow[..., 1], flow[..., 0]) / (2 * np.pi)) % 1.0
    hsv[..., 1] = mag / peak if peak > 0 else 0.0
    hsv[..., 2] = 1.0
    return hsv_to_rgb(hsv)


def plot_flow(flow: NDArrayF, out_png: PathLike,
              max_magnitude: Optional[float] = None) -> None:
    from .raster_io import save_png

    save_png(RgbImage(flow_to_rgb(flow, max_magnitude)), out_png)

"""Procedural micro-scenes and shiftable texture patterns.

random_scene builds a layered hyperspectral scene (gradient background,
checkerboard patch, elliptical blobs) with a matching depth map, giving the
plane decomposition real parallax to work with.  pattern_rgb evaluates a
smooth random function on a continuously shifted grid, so rigid-shift image
pairs come with exact ground-truth flow and no resampling error.
"""

from __future__ import annotations

from typing import Tuple

import numpy as np

from .types import DepthMap, HsiCube, NDArrayF, default_band_centers


def _random_spectrum(rng: np.random.Generator, bands: int) -> NDArrayF:
    """Smooth positive spectrum: a few Gaussian bumps over the band axis."""
    axis = np.linspace(0.0, 1.0, bands)
    spec = np.full(bands, 0.08, dtype=np.float64)
    for _ in range(rng.integers(1, 4)):
        centre = rng.uniform(0.0, 1.0)
        width = rng.uniform(0.08, 0.35)
        spec += rng.uniform(0.2, 0.8) * np.exp(-0.5 * ((axis - centre) / width) ** 2)
    return np.clip(spec / max(1.0, spec.max() / 0.95), 0.02, 0.98)


def random_scene(
    h: int, w: int, bands: int, seed: int, n_blobs: int = 4
) -> Tuple[HsiCube, DepthMap]:
    """Layered scene with sharp edges, gratings, and per-layer depths."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)

    # background: gradient between two spectra + a sinusoidal grating, far away
    spec_a, spec_b = _random_spectrum(rng, bands), _random_spectrum(rng, bands)
    ang = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(ang) * xs / max(w - 1, 1) + np.sin(ang) * ys / max(h - 1, 1) + 1.0) / 2.0
    cube = ramp[..., None] * spec_a + (1.0 - ramp[..., None]) * spec_b
    freq = rng.uniform(0.15, 0.45, size=2)
    grating = 0.12 * np.sin(2 * np.pi * (freq[0] * xs + freq[1] * ys) + rng.uniform(0, 2 * np.pi))
    cube = cube * (1.0 + grating[..., None])
    depth = np.full((h, w), rng.uniform(40.0, 90.0), dtype=np.float64)

    # one checkerboard patch at mid depth
    cw = rng.integers(max(4, w // 8), max(5, w // 3))
    ch = rng.integers(max(4, h // 8), max(5, h // 3))
    cx0 = int(rng.integers(0, max(1, w - cw)))
    cy0 = int(rng.integers(0, max(1, h - ch)))
    cell = int(rng.integers(2, 5))
    spec_c, spec_d = _random_spectrum(rng, bands), _random_spectrum(rng, bands)
    parity = ((xs[cy0 : cy0 + ch, cx0 : cx0 + cw] // cell)
              + (ys[cy0 : cy0 + ch, cx0 : cx0 + cw] // cell)) % 2
    cube[cy0 : cy0 + ch, cx0 : cx0 + cw] = np.where(
        parity[..., None] > 0.5, spec_c, spec_d
    )
    depth[cy0 : cy0 + ch, cx0 : cx0 + cw] = rng.uniform(8.0, 30.0)

    # near elliptical blobs, nearest wins
    for _ in range(n_blobs):
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        rx, ry = rng.uniform(w / 12, w / 4), rng.uniform(h / 12, h / 4)
        d_blob = rng.uniform(1.5, 8.0)
        spec = _random_spectrum(rng, bands)
        shade = 1.0 - 0.3 * (((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2)
        inside = (((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2) < 1.0
        nearer = inside & (d_blob < depth)
        cube[nearer] = np.clip(shade[nearer, None] * spec, 0.02, 0.98)
        depth[nearer] = d_blob

    return (
        HsiCube(
            np.clip(cube, 0.0, 1.0).astype(np.float32),
            tuple(default_band_centers(bands)),
        ),
        DepthMap(depth),
    )


def pattern_rgb(h: int, w: int, seed: int, shift: Tuple[float, float] = (0.0, 0.0)) -> NDArrayF:
    """Smooth random RGB pattern sampled at (x + dx, y + dy); shape (H, W, 3).

    Shifting the grid is exact, so pattern_rgb(..., shift=f) is the ground
    truth for a constant backward flow f against the unshifted pattern.
    """
    rng = np.random.default_rng(seed)
    dx, dy = shift
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    xs, ys = xs + dx, ys + dy
    img = np.zeros((h, w, 3), dtype=np.float64)
    for c in range(3):
        acc = np.zeros((h, w), dtype=np.float64)
        amp_total = 0.0
        for _ in range(6):
            fx, fy = rng.uniform(-0.18, 0.18, size=2)
            amp = rng.uniform(0.3, 1.0)
            acc += amp * np.sin(2 * np.pi * (fx * xs + fy * ys) + rng.uniform(0, 2 * np.pi))
            amp_total += amp
        for _ in range(3):
            cx, cy = rng.uniform(-4, w + 4), rng.uniform(-4, h + 4)
            r = rng.uniform(min(h, w) / 8, min(h, w) / 3)
            amp = rng.uniform(0.5, 1.5)
            acc += amp * np.exp(-(((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * r * r)))
            amp_total += amp
        # normalize by the analytic amplitude bound (never by the window's
        # min/max) so shifted evaluations stay exactly translation-consistent
        img[:, :, c] = 0.5 + 0.45 * acc / amp_total
    return img

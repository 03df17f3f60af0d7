"""Binary raster formats and image export.

`.hsi` cube layout (little-endian):
    magic b"HSIC" | u8 version | u8 has_wavelengths | u16 zero pad
    u32 H | u32 W | u32 B | [f32 wavelengths x B] | f32 data, row-major (H, W, B)

`.f32` generic raster layout (flow fields, float RGB):
    magic b"RAST" | u8 version | u8 zero | u16 zero pad
    u32 H | u32 W | u32 C | f32 data, row-major (H, W, C)

Cubes can also round-trip through `.npy` (numpy's container format).
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image

from .errors import DataError
from .types import HsiCube, NDArrayF, RgbImage

_CUBE_MAGIC = b"HSIC"
_RASTER_MAGIC = b"RAST"
_VERSION = 1

PathLike = Union[str, Path]


def save_cube(cube: HsiCube, path: PathLike) -> None:
    has_wl = cube.band_centers is not None
    h, w, b = cube.shape
    with open(path, "wb") as f:
        f.write(_CUBE_MAGIC)
        f.write(struct.pack("<BBH", _VERSION, int(has_wl), 0))
        f.write(struct.pack("<III", h, w, b))
        if has_wl:
            f.write(np.asarray(cube.band_centers, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(cube.data, dtype="<f4").tobytes())


def load_cube(path: PathLike) -> HsiCube:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"load_cube: cannot read {path}: {e}") from e
    if len(raw) < 20 or raw[:4] != _CUBE_MAGIC:
        raise DataError(f"load_cube: {path} is not a .hsi cube")
    version, has_wl, _ = struct.unpack_from("<BBH", raw, 4)
    if version != _VERSION:
        raise DataError(f"load_cube: unsupported version {version}")
    h, w, b = struct.unpack_from("<III", raw, 8)
    off = 20
    centers = None
    if has_wl:
        if len(raw) - off < 4 * b:
            raise DataError(f"load_cube: truncated band centers in {path}")
        centers = tuple(np.frombuffer(raw, dtype="<f4", count=b, offset=off).astype(float))
        off += 4 * b
    n = h * w * b
    if len(raw) - off < 4 * n:
        raise DataError(f"load_cube: truncated payload in {path}")
    data = np.frombuffer(raw, dtype="<f4", count=n, offset=off)
    return HsiCube(data.reshape(h, w, b).copy(), centers)


def save_raster(arr: NDArrayF, path: PathLike) -> None:
    if arr.ndim != 3:
        raise DataError(f"save_raster: expected (H, W, C), got {arr.shape}")
    h, w, c = arr.shape
    with open(path, "wb") as f:
        f.write(_RASTER_MAGIC)
        f.write(struct.pack("<BBH", _VERSION, 0, 0))
        f.write(struct.pack("<III", h, w, c))
        f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_raster(path: PathLike) -> NDArrayF:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"load_raster: cannot read {path}: {e}") from e
    if len(raw) < 20 or raw[:4] != _RASTER_MAGIC:
        raise DataError(f"load_raster: {path} is not a .f32 raster")
    version = raw[4]
    if version != _VERSION:
        raise DataError(f"load_raster: unsupported version {version}")
    h, w, c = struct.unpack_from("<III", raw, 8)
    n = h * w * c
    if len(raw) - 20 < 4 * n:
        raise DataError(f"load_raster: truncated payload in {path}")
    data = np.frombuffer(raw, dtype="<f4", count=n, offset=20)
    return data.reshape(h, w, c).copy()


def save_png(img: RgbImage, path: PathLike) -> None:
    """8-bit PNG export (values quantized by round(v * 255))."""
    u8 = np.round(img.data * 255.0).astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(path, format="PNG")


def save_cube_npy(cube: HsiCube, path: PathLike) -> None:
    np.save(path, cube.data.astype(np.float32))


def load_cube_npy(path: PathLike, band_centers: Optional[tuple] = None) -> HsiCube:
    try:
        data = np.load(path)
    except (OSError, ValueError) as e:
        raise DataError(f"load_cube_npy: cannot read {path}: {e}") from e
    if data.ndim != 3:
        raise DataError(f"load_cube_npy: expected 3-D array, got {data.shape}")
    return HsiCube(np.asarray(data, dtype=np.float32), band_centers)

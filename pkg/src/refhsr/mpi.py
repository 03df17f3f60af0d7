"""Layered scene decomposition and camera geometry.

A scene image plus its depth map is decomposed into fronto-parallel
planes in the source camera frame (hard nearest-depth binning).  Novel
views and their ground-truth flow are obtained by per-plane homography
warps followed by alpha compositing (see render.py).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import ShapeError, SingularMappingError
from .types import DepthMap, NDArrayF, RgbImage

DEPTH_MIN = 1.0
DEPTH_MAX = 100.0

## density assigned to a pixel's own plane; large enough that the plane is
## numerically fully opaque (1 - exp(-delta * sigma) rounds to 1.0) for any
## plane spacing used here.
OPAQUE_DENSITY = 1.0e4


## ---------------------------------------------------------------------------
## cameras
## ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CameraPose:
    """Pinhole camera: world -> camera map x_cam = R @ x_world + t."""

    rotation: NDArrayF  # (3, 3)
    translation: NDArrayF  # (3,)
    intrinsics: NDArrayF  # (3, 3)

    def __post_init__(self) -> None:
        r, t, k = self.rotation, self.translation, self.intrinsics
        if r.shape != (3, 3) or t.shape != (3,) or k.shape != (3, 3):
            raise ShapeError("CameraPose: rotation (3,3), translation (3,), intrinsics (3,3)")
        if not (np.isfinite(r).all() and np.isfinite(t).all() and np.isfinite(k).all()):
            raise ShapeError("CameraPose: non-finite entries")
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(r) - 1) > 1e-6:
            raise ShapeError("CameraPose: rotation must be orthonormal with det 1")
        if abs(k[2, 2] - 1.0) > 1e-9 or abs(k[1, 0]) > 1e-9 or np.any(np.abs(k[2, :2]) > 1e-9):
            raise ShapeError("CameraPose: intrinsics must be upper-triangular with K[2,2]=1")


def _intrinsics(width: int, height: int) -> NDArrayF:
    # focal lengths 0.58 * (W, H), principal point at the image centre
    return np.array(
        [
            [0.58 * width, 0.0, 0.5 * width],
            [0.0, 0.58 * height, 0.5 * height],
            [0.0, 0.0, 1.0],
        ],
        dtype=np.float64,
    )


def identity_camera(width: int, height: int) -> CameraPose:
    return CameraPose(np.eye(3), np.zeros(3), _intrinsics(width, height))


def _euler_rotation(ax: float, ay: float, az: float) -> NDArrayF:
    cx, sx = math.cos(ax), math.sin(ax)
    cy, sy = math.cos(ay), math.sin(ay)
    cz, sz = math.cos(az), math.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]], dtype=np.float64)
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]], dtype=np.float64)
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]], dtype=np.float64)
    return rx @ ry @ rz


def virtual_camera(
    width: int,
    height: int,
    seed: int,
    max_translation: float = 0.2,
    max_angle: float = math.pi / 90.0,
) -> CameraPose:
    """Random target camera: translations U[-0.2, 0.2], angles U[-pi/90, pi/90]."""
    rng = np.random.default_rng(seed)
    t = rng.uniform(-max_translation, max_translation, size=3)
    ax, ay, az = rng.uniform(-max_angle, max_angle, size=3)
    return CameraPose(_euler_rotation(ax, ay, az), t, _intrinsics(width, height))


## ---------------------------------------------------------------------------
## plane homographies
## ---------------------------------------------------------------------------


def homography_matrix(plane_depth: float, src_cam: CameraPose, tgt_cam: CameraPose) -> NDArrayF:
    """3x3 map from target pixels to source pixels through the world plane z = d.

    Derivation: back-project a target pixel onto the plane z_w = plane_depth
    (world frame), then project into the source camera.  Because both calls
    reference the same world plane, swapping the cameras yields the exact
    inverse mapping.
    """
    if not (plane_depth > 0) or not math.isfinite(plane_depth):
        raise ShapeError(f"homography_matrix: bad plane depth {plane_depth}")
    r_s, t_s, k_s = src_cam.rotation, src_cam.translation, src_cam.intrinsics
    r_t, t_t, k_t = tgt_cam.rotation, tgt_cam.translation, tgt_cam.intrinsics
    n = np.array([0.0, 0.0, 1.0])
    r_rel = r_s @ r_t.T
    m = n @ r_t.T  # plane normal row, expressed in target-camera coords
    c = plane_depth + m @ t_t
    if abs(c) < 1e-12:
        raise SingularMappingError("homography_matrix: plane passes through target centre")
    b = r_rel @ t_t - t_s
    core = r_rel - np.outer(b, m) / c
    return k_s @ core @ np.linalg.inv(k_t)


def homography_map(
    points_xy: NDArrayF, plane_depth: float, src_cam: CameraPose, tgt_cam: CameraPose
) -> NDArrayF:
    """Map target pixel coordinates (..., 2) to source pixel coordinates."""
    pts = np.asarray(points_xy, dtype=np.float64)
    if pts.shape[-1] != 2:
        raise ShapeError(f"homography_map: expected (..., 2), got {pts.shape}")
    h = homography_matrix(plane_depth, src_cam, tgt_cam)
    flat = pts.reshape(-1, 2)
    hom = np.concatenate([flat, np.ones((flat.shape[0], 1))], axis=1) @ h.T
    wcoord = hom[:, 2]
    if np.any(np.abs(wcoord) < 1e-12):
        raise SingularMappingError("homography_map: degenerate homogeneous scale")
    return (hom[:, :2] / wcoord[:, None]).reshape(pts.shape)


## ---------------------------------------------------------------------------
## multiplane decomposition
## ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MultiplaneImage:
    """Fronto-parallel colour/density layers at strictly increasing depths."""

    colors: NDArrayF  # (N, H, W, 3)
    densities: NDArrayF  # (N, H, W), >= 0
    depths: NDArrayF  # (N,), strictly increasing

    def __post_init__(self) -> None:
        c, s, d = self.colors, self.densities, self.depths
        if c.ndim != 4 or c.shape[3] != 3:
            raise ShapeError(f"MultiplaneImage: colors expected (N, H, W, 3), got {c.shape}")
        if s.shape != c.shape[:3]:
            raise ShapeError("MultiplaneImage: densities must match colors (N, H, W)")
        if d.ndim != 1 or d.shape[0] != c.shape[0] or c.shape[0] < 2:
            raise ShapeError("MultiplaneImage: need depths (N,) with N >= 2")
        if not np.isfinite(c).all() or not np.isfinite(d).all():
            raise ShapeError("MultiplaneImage: non-finite colors or depths")
        if np.any(s < 0) or np.any(np.isnan(s)):
            raise ShapeError("MultiplaneImage: densities must be >= 0")
        if np.any(np.diff(d) <= 0) or d[0] <= 0:
            raise ShapeError("MultiplaneImage: depths must be positive, strictly increasing")

    @property
    def n_planes(self) -> int:
        return self.colors.shape[0]


def plane_depths(n_planes: int, d_min: float = DEPTH_MIN, d_max: float = DEPTH_MAX) -> NDArrayF:
    """Disparity-uniform plane depths spanning [d_min, d_max], ascending."""
    if n_planes < 2:
        raise ShapeError("plane_depths: need n_planes >= 2")
    if not (0 < d_min < d_max):
        raise ShapeError(f"plane_depths: bad range [{d_min}, {d_max}]")
    disparities = np.linspace(1.0 / d_min, 1.0 / d_max, n_planes)
    return 1.0 / disparities


def plane_spacings(depths: NDArrayF) -> NDArrayF:
    """Inter-plane spacing in disparity; the last plane reuses the previous one."""
    disp = 1.0 / np.asarray(depths, dtype=np.float64)
    gaps = disp[:-1] - disp[1:]
    return np.append(gaps, gaps[-1])


def build_mpi(
    img: RgbImage,
    depth: DepthMap,
    n_planes: int = 32,
    d_min: float = DEPTH_MIN,
    d_max: float = DEPTH_MAX,
) -> MultiplaneImage:
    """Hard-binning decomposition: each pixel lands on its nearest-depth plane.

    Depths are clamped to [d_min, d_max] first.  Distance ties resolve to the
    nearer (lower-index) plane.  Assigned pixels get OPAQUE_DENSITY; all other
    plane cells stay empty.
    """
    if img.data.shape[:2] != depth.shape:
        raise ShapeError(f"build_mpi: image {img.data.shape[:2]} vs depth {depth.shape}")
    depths = plane_depths(n_planes, d_min, d_max)
    clamped = np.clip(depth.data, d_min, d_max)
    dist = np.abs(clamped[None, :, :] - depths[:, None, None])
    assign = np.argmin(dist, axis=0)  # first minimum -> nearer plane on ties
    h, w = depth.shape
    colors = np.zeros((n_planes, h, w, 3), dtype=np.float64)
    densities = np.zeros((n_planes, h, w), dtype=np.float64)
    onehot = assign[None, :, :] == np.arange(n_planes)[:, None, None]
    colors[onehot] = np.broadcast_to(img.data, (n_planes, h, w, 3))[onehot]
    densities[onehot] = OPAQUE_DENSITY
    return MultiplaneImage(colors, densities, depths)

"""End-to-end generation of one training triple from a scene.

Pipeline: spectral-project the cube, decompose into depth planes, render a
jittered novel view plus its ground-truth flow, and separately degrade the
(augmented) cube back up to a blurry full-resolution target image.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .augment import AugmentConfig, augment
from .mpi import CameraPose, build_mpi, identity_camera, virtual_camera
from .ops import degrade, srf_convert, upsample_rgb
from .render import plane_flows, render_flow, render_view
from .types import DegradationConfig, DepthMap, FlowField, HsiCube, RgbImage, SpectralResponse


@dataclass(frozen=True)
class SynthPair:
    """One generated sample.

    target_rgb: blurry full-resolution RGB of the degraded cube (network input)
    ref_rgb:    clean RGB rendered from the jittered viewpoint (unaligned)
    flow:       ground-truth flow on the source grid; warping ref_rgb by it
                reproduces the source view
    source_rgb: clean RGB of the source view (alignment training target)
    lr_cube:    degraded cube (super-resolution input)
    """

    target_rgb: RgbImage
    ref_rgb: RgbImage
    flow: FlowField
    source_rgb: RgbImage
    lr_cube: HsiCube


def make_pair(
    hr_cube: HsiCube,
    depth: DepthMap,
    srf: SpectralResponse,
    deg_cfg: DegradationConfig,
    aug_cfg: AugmentConfig,
    seed: int,
    pose: Optional[CameraPose] = None,
    n_planes: int = 32,
    opacity_law: str = "one_minus_exp",
) -> SynthPair:
    """Generate one sample; fully deterministic given (seed, configs, pose)."""
    h, w, _ = hr_cube.shape
    source_rgb = srf_convert(hr_cube, srf)

    mpi = build_mpi(source_rgb, depth, n_planes)
    src_cam = identity_camera(w, h)
    tgt_cam = pose if pose is not None else virtual_camera(w, h, seed)
    ref_rgb = render_view(mpi, src_cam, tgt_cam, opacity_law)
    flow = render_flow(mpi, plane_flows(mpi, src_cam, tgt_cam), opacity_law)

    lr_cube = degrade(augment(hr_cube, aug_cfg), deg_cfg)
    target_rgb = upsample_rgb(srf_convert(lr_cube, srf), deg_cfg.scale)
    return SynthPair(target_rgb, ref_rgb, flow, source_rgb, lr_cube)

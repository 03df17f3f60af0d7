"""Built-in invariant suite.

Each check re-derives an expected value through an independent route (dense
loops, closed forms, brute-force search) and compares the library against
it.  The CLI's ``selftest`` subcommand runs the whole list and reports a
nonzero exit code on any violation, so a broken build cannot quietly train.
"""

from __future__ import annotations

import io
import sys
import tempfile
import traceback
from pathlib import Path
from typing import Callable, List, Tuple

import numpy as np
import torch

from . import metrics, ops
from .aggregation import IdfaBlock, IdfaConfig, gam_match, identity_match
from .fusion import FusionLevel, SpectralAttention, zero_residual_projections
from .mpi import (build_mpi, homography_map, identity_camera, plane_depths,
                  virtual_camera)
from .raster_io import load_cube, load_raster, save_cube, save_raster
from .render import composite_view, plane_flows, render_flow, render_view
from .types import (DegradationConfig, DepthMap, HsiCube, RgbImage,
                    SpectralResponse, default_band_centers)
from .warp import warp_tensor


def _check_bicubic_ramp() -> None:
    h, w = 12, 10
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    ramp = (0.3 * xs / w + 0.5 * ys / h + 0.1)[..., None]
    up = ops.resize_bicubic(ramp, 4)
    hh, ww = up.shape[:2]
    yu, xu = np.mgrid[0:hh, 0:ww].astype(np.float64)
    expect = 0.3 * ((xu + 0.5) / 4 - 0.5) / w + 0.5 * ((yu + 0.5) / 4 - 0.5) / h + 0.1
    inner = np.abs(up[..., 0] - expect)[8:-8, 8:-8]
    assert inner.max() < 1e-3, f"bicubic ramp error {inner.max():.2e}"


def _check_degrade_oracle() -> None:
    rng = np.random.default_rng(11)
    cube = HsiCube(rng.random((16, 16, 3), dtype=np.float64).astype(np.float32),
                   default_band_centers(3))
    cfg = DegradationConfig(scale=4)
    got = ops.degrade(cube, cfg).data
    k1 = ops.gaussian_kernel_1d(cfg.effective_kernel_size, cfg.blur_sigma)
    k2 = np.outer(k1, k1)
    half = cfg.effective_kernel_size // 2
    data = cube.data.astype(np.float64)
    # scipy's "reflect" duplicates the edge sample == np.pad "symmetric"
    padded = np.pad(data, ((half, half), (half, half), (0, 0)), mode="symmetric")
    blurred = np.zeros_like(data)
    for y in range(16):
        for x in range(16):
            patch = padded[y:y + 2 * half + 1, x:x + 2 * half + 1]
            blurred[y, x] = np.einsum("ijc,ij->c", patch, k2)
    off = (cfg.scale - 1) // 2
    expect = blurred[off::cfg.scale, off::cfg.scale]
    err = np.max(np.abs(got.astype(np.float64) - expect))
    assert err < 1e-6, f"degrade vs dense blur oracle: {err:.2e}"


def _check_metric_oracles() -> None:
    rng = np.random.default_rng(5)
    a = rng.random((16, 16, 4))
    b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
    mse = float(np.mean((a - b) ** 2))
    expect_psnr = 10.0 * np.log10(1.0 / mse)
    assert abs(metrics.psnr(a, b) - expect_psnr) < 1e-9, "psnr oracle"
    assert metrics.psnr(a, a) == metrics.PSNR_CAP_DB, "psnr cap"
    assert abs(metrics.ssim(a, a) - 1.0) < 1e-9, "ssim self"
    for _ in range(20):
        c = float(rng.uniform(0.1, 5.0))
        cube = rng.random((8, 8, 6))
        assert metrics.sam(cube, c * cube) < 1e-9, "sam scale invariance"


def _check_homography_round_trip() -> None:
    cam_a = identity_camera(24, 20)
    worst = 0.0
    pts = np.stack(np.meshgrid(np.arange(24.0), np.arange(20.0)), axis=-1)
    for seed in range(20):
        cam_b = virtual_camera(24, 20, seed)
        for depth in (1.5, 7.0, 60.0):
            fwd = homography_map(pts, depth, cam_a, cam_b)
            back = homography_map(fwd, depth, cam_b, cam_a)
            worst = max(worst, float(np.abs(back - pts).max()))
    assert worst < 1e-6, f"homography round trip {worst:.2e}"


def _check_render_identities() -> None:
    rng = np.random.default_rng(3)
    rgb = RgbImage(rng.random((12, 12, 3)))
    depth = DepthMap(np.full((12, 12), 5.0))
    mpi = build_mpi(rgb, depth, 16)
    cam = identity_camera(12, 12)
    out = render_view(mpi, cam, cam)
    assert np.array_equal(out.data, rgb.data), "opaque-plane identity render"
    flow = render_flow(mpi, plane_flows(mpi, cam, cam))
    assert np.abs(flow.data).max() < 1e-6, "identity flow"
    for seed in range(10):
        cam_b = virtual_camera(12, 12, seed)
        _, weights = composite_view(mpi, cam, cam_b)
        total = weights.sum(axis=0)
        assert total.min() >= -1e-12 and total.max() <= 1.0 + 1e-9, "weight bounds"


def _check_gam_bruteforce() -> None:
    for seed in range(3):
        torch.manual_seed(seed)
        f_tgt = torch.randn(1, 5, 6, 6)
        f_ref = torch.randn(1, 5, 6, 6)
        maps = gam_match(f_tgt, f_ref, 3)
        pad = torch.nn.functional.pad
        pt = pad(f_tgt, (1, 1, 1, 1)).unfold(2, 3, 1).unfold(3, 3, 1)
        pr = pad(f_ref, (1, 1, 1, 1)).unfold(2, 3, 1).unfold(3, 3, 1)
        pt = pt.permute(0, 2, 3, 1, 4, 5).reshape(36, -1)
        pr = pr.permute(0, 2, 3, 1, 4, 5).reshape(36, -1)
        pt = pt / pt.norm(dim=1, keepdim=True).clamp_min(1e-12)
        pr = pr / pr.norm(dim=1, keepdim=True).clamp_min(1e-12)
        sims = pt @ pr.t()
        best = sims.argmax(dim=1)
        assert torch.equal(maps.positions.reshape(-1), best), "gam argmax"


def _check_idfa_dense_conv() -> None:
    torch.manual_seed(0)
    block = IdfaBlock(4, cfg=IdfaConfig(kernel_size=3))
    feats = torch.randn(1, 4, 8, 8)
    maps = identity_match(1, 8, 8)
    out = block(feats, maps, None, force_zero_offsets=True, force_unit_masks=True)
    dense = torch.nn.functional.conv2d(feats, block.weight, padding=1)
    err = (out - dense).abs().max().item()
    assert err < 1e-5, f"idfa vs dense conv {err:.2e}"


def _check_attention_identities() -> None:
    torch.manual_seed(1)
    attn = SpectralAttention(8, heads=2, gated=False)
    x = torch.randn(2, 8, 6, 6)
    maps = attn.attention_maps(x)
    cols = maps.maps.sum(dim=2)
    assert (cols - 1).abs().max() < 1e-5, "attention columns"
    fuse = zero_residual_projections(FusionLevel(8, None, heads=2, n_blocks=2))
    feats = torch.randn(1, 8, 6, 6)
    a_ref = torch.randn(1, 8, 6, 6)
    out = fuse(feats, None, a_ref)
    assert torch.equal(out, feats), "fusion identity with zeroed projections"


def _check_warp_gradcheck() -> None:
    torch.manual_seed(2)
    x = torch.randn(1, 2, 4, 5, dtype=torch.float64, requires_grad=True)
    flow = (0.5 * torch.randn(1, 2, 4, 5, dtype=torch.float64)).requires_grad_(True)
    ok = torch.autograd.gradcheck(
        lambda a, f: warp_tensor(a, f, "border"), (x, flow),
        eps=1e-6, atol=1e-4, rtol=1e-3)
    assert ok, "warp gradcheck"


def _check_srf_columns() -> None:
    srf = SpectralResponse.gaussian_rgb(default_band_centers(12))
    rng = np.random.default_rng(9)
    cube = HsiCube(rng.random((6, 6, 12), dtype=np.float64).astype(np.float32),
                   default_band_centers(12))
    rgb = ops.srf_convert(cube, srf)
    norm = srf.data / srf.data.sum(axis=0, keepdims=True)
    expect = np.einsum("hwb,bc->hwc", cube.data.astype(np.float64), norm)
    expect = np.clip(expect, 0, 1).astype(np.float32)
    assert np.array_equal(rgb.data, expect), "srf projection"


def _check_io_round_trip() -> None:
    rng = np.random.default_rng(21)
    with tempfile.TemporaryDirectory() as tmp:
        cube = HsiCube(rng.random((5, 4, 3), dtype=np.float64).astype(np.float32),
                       default_band_centers(3))
        save_cube(cube, Path(tmp) / "c.hsi")
        back = load_cube(Path(tmp) / "c.hsi")
        assert np.array_equal(back.data, cube.data), "cube round trip"
        assert np.allclose(back.band_centers, cube.band_centers), "band centers"
        arr = rng.random((4, 6, 2)).astype(np.float32)
        save_raster(arr, Path(tmp) / "r.f32")
        assert np.array_equal(load_raster(Path(tmp) / "r.f32"), arr), "raster round trip"


def _check_plane_depth_spacing() -> None:
    depths = plane_depths(32)
    disp = 1.0 / depths
    gaps = np.diff(disp)
    assert np.allclose(gaps, gaps[0]), "disparity-uniform depths"
    assert depths[0] == 1.0 and abs(depths[-1] - 100.0) < 1e-9, "depth range"


CHECKS: List[Tuple[str, Callable[[], None]]] = [
    ("bicubic_ramp_identity", _check_bicubic_ramp),
    ("degrade_matches_dense_oracle", _check_degrade_oracle),
    ("metric_oracles", _check_metric_oracles),
    ("homography_round_trip", _check_homography_round_trip),
    ("render_identities", _check_render_identities),
    ("gam_matches_bruteforce", _check_gam_bruteforce),
    ("idfa_matches_dense_conv", _check_idfa_dense_conv),
    ("attention_identities", _check_attention_identities),
    ("warp_gradcheck", _check_warp_gradcheck),
    ("srf_projection", _check_srf_columns),
    ("io_round_trip", _check_io_round_trip),
    ("plane_depth_spacing", _check_plane_depth_spacing),
]


def run_selftest(verbose: bool = False, stream=None) -> int:
    """Run every check; returns the number of failures."""
    stream = stream if stream is not None else sys.stdout
    failures = 0
    for name, fn in CHECKS:
        try:
            fn()
        except Exception:
            failures += 1
            print(f"FAIL {name}", file=stream)
            if verbose:
                buf = io.StringIO()
                traceback.print_exc(file=buf)
                print(buf.getvalue(), file=stream)
        else:
            print(f"ok   {name}", file=stream)
    print(f"selftest: {len(CHECKS) - failures} passed, {failures} failed",
          file=stream)
    return failures

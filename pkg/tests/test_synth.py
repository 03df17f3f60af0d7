import numpy as np
import pytest

from refhsr.augment import AugmentConfig, augment
from refhsr.errors import ConfigError, ShapeError, SingularMappingError
from refhsr.mpi import (
    DEPTH_MAX,
    DEPTH_MIN,
    OPAQUE_DENSITY,
    CameraPose,
    MultiplaneImage,
    build_mpi,
    homography_map,
    homography_matrix,
    identity_camera,
    plane_depths,
    plane_spacings,
    virtual_camera,
)
from refhsr.pairs import make_pair
from refhsr.render import (
    composite_view,
    compositing_weights,
    opacity,
    plane_flows,
    render_flow,
    render_view,
)
from refhsr.scenes import pattern_rgb, random_scene
from refhsr.types import (
    DegradationConfig,
    DepthMap,
    HsiCube,
    RgbImage,
    SpectralResponse,
    default_band_centers,
)


# ---------------------------------------------------------------------------
# cameras and homographies
# ---------------------------------------------------------------------------


class TestCameras:
    def test_identity_camera(self):
        cam = identity_camera(32, 24)
        assert np.allclose(cam.rotation, np.eye(3))
        assert np.allclose(cam.translation, 0.0)
        assert cam.intrinsics[0, 2] == pytest.approx(16.0)
        assert cam.intrinsics[1, 2] == pytest.approx(12.0)

    def test_virtual_camera_bounds(self):
        for seed in range(10):
            cam = virtual_camera(32, 32, seed)
            assert np.all(np.abs(cam.translation) <= 0.2 + 1e-12)
            # rotation stays close to identity for the small angle budget
            assert np.abs(cam.rotation - np.eye(3)).max() < 0.12

    def test_virtual_camera_deterministic(self):
        a = virtual_camera(16, 16, 9)
        b = virtual_camera(16, 16, 9)
        assert np.array_equal(a.rotation, b.rotation)
        assert np.array_equal(a.translation, b.translation)

    def test_pose_validation(self):
        cam = identity_camera(8, 8)
        with pytest.raises(ShapeError):
            CameraPose(rotation=2 * np.eye(3), translation=cam.translation,
                       intrinsics=cam.intrinsics)


class TestHomography:
    def test_identity_pose_is_identity_map(self):
        cam = identity_camera(16, 16)
        h = homography_matrix(5.0, cam, cam)
        assert np.allclose(h / h[2, 2], np.eye(3), atol=1e-12)

    @pytest.mark.parametrize("depth", [1.5, 10.0, 80.0])
    def test_round_trip(self, depth):
        src = identity_camera(32, 32)
        for seed in range(5):
            tgt = virtual_camera(32, 32, seed)
            pts = np.random.default_rng(seed).uniform(0, 31, size=(40, 2))
            fwd = homography_map(pts, depth, src, tgt)
            back = homography_map(fwd, depth, tgt, src)
            assert np.abs(back - pts).max() < 1e-6

    def test_swapped_cameras_invert(self):
        src = identity_camera(16, 16)
        tgt = virtual_camera(16, 16, 3)
        h_fwd = homography_matrix(4.0, src, tgt)
        h_back = homography_matrix(4.0, tgt, src)
        prod = h_fwd @ h_back
        assert np.allclose(prod / prod[2, 2], np.eye(3), atol=1e-9)

    def test_singular_plane_raises(self):
        cam = identity_camera(8, 8)
        # a plane at the camera centre collapses the projection
        with pytest.raises((SingularMappingError, ShapeError)):
            homography_matrix(0.0, cam, cam)


# ---------------------------------------------------------------------------
# multiplane images
# ---------------------------------------------------------------------------


class TestPlaneLayout:
    def test_plane_depths_endpoints(self):
        d = plane_depths(8)
        assert d[0] == pytest.approx(DEPTH_MIN)
        assert d[-1] == pytest.approx(DEPTH_MAX)
        assert np.all(np.diff(d) > 0)

    def test_plane_depths_uniform_in_disparity(self):
        d = plane_depths(6)
        assert np.allclose(np.diff(1.0 / d), np.diff(1.0 / d)[0])

    def test_plane_spacings_repeat_last(self):
        d = plane_depths(5)
        s = plane_spacings(d)
        assert s.shape == (5,)
        assert s[-1] == pytest.approx(s[-2])
        assert np.all(s > 0)


class TestBuildMpi:
    def test_each_pixel_on_exactly_one_plane(self):
        rng = np.random.default_rng(11)
        img = RgbImage(rng.random((12, 12, 3)))
        depth = DepthMap(rng.uniform(2.0, 50.0, size=(12, 12)))
        mpi = build_mpi(img, depth, n_planes=8)
        occupancy = (mpi.densities > 0).sum(axis=0)
        assert np.all(occupancy == 1)
        assert np.all(mpi.densities[mpi.densities > 0] == OPAQUE_DENSITY)

    def test_colors_copied_to_assigned_plane(self):
        rng = np.random.default_rng(12)
        img = RgbImage(rng.random((8, 8, 3)))
        depth = DepthMap(np.full((8, 8), 3.0))
        mpi = build_mpi(img, depth, n_planes=4)
        n = int(np.argmax((mpi.densities > 0).any(axis=(1, 2))))
        assert np.allclose(mpi.colors[n], img.data)

    def test_out_of_range_depth_clamped(self):
        img = RgbImage(np.zeros((4, 4, 3)))
        depth = DepthMap(np.full((4, 4), 1e6))
        mpi = build_mpi(img, depth, n_planes=4)
        assert np.all(mpi.densities[-1] == OPAQUE_DENSITY)

    def test_validation(self):
        colors = np.zeros((3, 4, 4, 3))
        dens = np.zeros((3, 4, 4))
        with pytest.raises(ShapeError):
            MultiplaneImage(colors, dens, depths=np.array([5.0, 3.0, 7.0]))


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def _random_mpi(rng, n=4, h=8, w=8):
    colors = rng.random((n, h, w, 3))
    densities = rng.uniform(0.0, 5.0, size=(n, h, w))
    return MultiplaneImage(colors, densities, depths=plane_depths(n))


class TestCompositing:
    def test_opacity_laws_agree(self):
        rng = np.random.default_rng(13)
        dens = rng.uniform(0, 4, size=(3, 4, 4))
        spac = plane_spacings(plane_depths(3))
        a1 = opacity(dens, spac, "one_minus_exp")
        a2 = opacity(dens, spac, "exp")
        assert np.allclose(a1, 1.0 - a2)

    def test_unknown_law(self):
        with pytest.raises(ShapeError):
            opacity(np.zeros((2, 2, 2)), np.ones(2), "linear")

    def test_weights_manual_oracle(self):
        alphas = np.zeros((3, 1, 1))
        alphas[:, 0, 0] = [0.5, 0.25, 1.0]
        w = compositing_weights(alphas)
        assert w[:, 0, 0] == pytest.approx([0.5, 0.125, 0.375])

    def test_first_opaque_plane_takes_all(self):
        alphas = np.zeros((3, 2, 2))
        alphas[0] = 1.0
        w = compositing_weights(alphas)
        assert np.allclose(w[0], 1.0)
        assert np.allclose(w[1:], 0.0)

    def test_weights_bounded_on_random_mpis(self):
        rng = np.random.default_rng(14)
        for _ in range(20):
            mpi = _random_mpi(rng)
            _, w = composite_view(mpi, identity_camera(8, 8), identity_camera(8, 8))
            total = w.sum(axis=0)
            assert total.min() >= -1e-12
            assert total.max() <= 1.0 + 1e-12


class TestRendering:
    def test_single_opaque_plane_returns_plane_color(self):
        rng = np.random.default_rng(15)
        color = rng.random(3)
        colors = np.broadcast_to(color, (2, 8, 8, 3)).copy()
        densities = np.zeros((2, 8, 8))
        densities[0] = OPAQUE_DENSITY
        mpi = MultiplaneImage(colors, densities, depths=np.array([2.0, 50.0]))
        cam = identity_camera(8, 8)
        out = render_view(mpi, cam, cam)
        assert np.array_equal(out.data, np.broadcast_to(color, (8, 8, 3)))

    def test_identity_pose_flow_is_zero(self):
        rng = np.random.default_rng(16)
        mpi = _random_mpi(rng)
        cam = identity_camera(8, 8)
        flows = plane_flows(mpi, cam, cam)
        assert np.abs(flows).max() < 1e-6
        rendered = render_flow(mpi, flows)
        assert np.abs(rendered.data).max() < 1e-6

    def test_translation_only_flow_matches_analytic_shift(self):
        # for a fronto-parallel plane at depth d and camera shift (tx, ty, 0)
        # the flow is constant: (fx * tx / d, fy * ty / d)
        h = w = 16
        src = identity_camera(w, h)
        t = np.array([0.1, -0.05, 0.0])
        tgt = CameraPose(rotation=np.eye(3), translation=t,
                         intrinsics=src.intrinsics)
        depth = 4.0
        colors = np.random.default_rng(17).random((2, h, w, 3))
        dens = np.zeros((2, h, w))
        dens[0] = OPAQUE_DENSITY
        mpi = MultiplaneImage(colors, dens, depths=np.array([depth, 50.0]))
        flows = plane_flows(mpi, src, tgt)
        fx = src.intrinsics[0, 0]
        fy = src.intrinsics[1, 1]
        expected = np.array([fx * t[0] / depth, fy * t[1] / depth])
        assert np.allclose(flows[0], expected, atol=1e-9)


# ---------------------------------------------------------------------------
# procedural scenes and pair synthesis
# ---------------------------------------------------------------------------


class TestScenes:
    def test_random_scene_contract(self):
        cube, depth = random_scene(24, 20, 6, seed=5)
        assert cube.data.shape == (24, 20, 6)
        assert cube.band_centers is not None and len(cube.band_centers) == 6
        assert cube.data.min() >= 0.0 and cube.data.max() <= 1.0
        assert depth.data.shape == (24, 20)
        assert depth.data.min() > 0

    def test_random_scene_deterministic(self):
        a, da = random_scene(16, 16, 4, seed=8)
        b, db = random_scene(16, 16, 4, seed=8)
        assert np.array_equal(a.data, b.data)
        assert np.array_equal(da.data, db.data)

    def test_pattern_rgb_shift_consistency(self):
        base = pattern_rgb(32, 32, seed=3)
        shifted = pattern_rgb(32, 32, seed=3, shift=(2.0, -1.0))
        # integer part of the shift appears as a pixel translation
        assert np.allclose(shifted[4:-4, 4:-4],
                           base[3:-5, 6:-2], atol=1e-10)

    def test_pattern_rgb_range(self):
        img = pattern_rgb(16, 16, seed=1)
        assert img.min() >= 0.0 and img.max() <= 1.0


class TestMakePair:
    def test_identity_pose_reference_equals_source(self):
        cube, depth = random_scene(16, 16, 4, seed=21)
        srf = SpectralResponse.gaussian_rgb(default_band_centers(4))
        pose = identity_camera(16, 16)
        pair = make_pair(cube, depth, srf, DegradationConfig(scale=4),
                         AugmentConfig(), seed=0, pose=pose, n_planes=6)
        assert np.array_equal(pair.ref_rgb.data, pair.source_rgb.data)
        assert np.abs(pair.flow.data).max() < 1e-6

    def test_shapes_and_determinism(self):
        cube, depth = random_scene(16, 16, 4, seed=22)
        srf = SpectralResponse.gaussian_rgb(default_band_centers(4))
        cfg = DegradationConfig(scale=4)
        a = make_pair(cube, depth, srf, cfg, AugmentConfig(), seed=9, n_planes=6)
        b = make_pair(cube, depth, srf, cfg, AugmentConfig(), seed=9, n_planes=6)
        assert a.lr_cube.data.shape == (4, 4, 4)
        assert a.target_rgb.data.shape == (16, 16, 3)
        assert np.array_equal(a.ref_rgb.data, b.ref_rgb.data)
        assert np.array_equal(a.flow.data, b.flow.data)
        assert np.array_equal(a.lr_cube.data, b.lr_cube.data)


# ---------------------------------------------------------------------------
# photometric augmentation
# ---------------------------------------------------------------------------


class TestAugment:
    def test_identity_config_is_noop(self):
        rng = np.random.default_rng(30)
        img = RgbImage(rng.random((8, 8, 3)))
        out = augment(img, AugmentConfig())
        assert np.allclose(out.data, img.data, atol=1e-12)

    def test_deterministic(self):
        rng = np.random.default_rng(31)
        img = RgbImage(rng.random((8, 8, 3)))
        cfg = AugmentConfig(noise_sigma=0.05, brightness=(0.8, 1.2), seed=4)
        a = augment(img, cfg)
        b = augment(img, cfg)
        assert np.array_equal(a.data, b.data)

    def test_brightness_scales_image(self):
        img = RgbImage(np.full((6, 6, 3), 0.25))
        out = augment(img, AugmentConfig(brightness=(1.5, 1.5)))
        assert np.allclose(out.data, 0.375, atol=1e-12)

    def test_output_clipped(self):
        img = RgbImage(np.full((6, 6, 3), 0.9))
        out = augment(img, AugmentConfig(brightness=(2.0, 2.0)))
        assert out.data.max() <= 1.0

    def test_works_on_cubes(self):
        cube = HsiCube(np.random.default_rng(32).random((8, 8, 5)))
        out = augment(cube, AugmentConfig(noise_sigma=0.01, seed=1))
        assert isinstance(out, HsiCube)
        assert out.data.shape == cube.data.shape

    def test_bad_ranges_rejected(self):
        with pytest.raises(ConfigError):
            AugmentConfig(brightness=(1.2, 0.8))
        with pytest.raises(ConfigError):
            AugmentConfig(noise_sigma=-0.1)
        with pytest.raises(ConfigError):
            AugmentConfig(hue=(-0.7, 0.0))

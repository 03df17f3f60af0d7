import json

import numpy as np
import pytest
import torch

from refhsr.checkpoints import (
    check_fingerprint,
    checkpoint_exists,
    config_from_manifest,
    load_checkpoint,
    require_phase,
    save_checkpoint,
)
from refhsr.config import TrainConfig, load_config, save_config
from refhsr.datasets import (
    FlowCorpus,
    SceneCorpus,
    load_corpus,
    make_flow_corpus,
    make_scene_corpus,
    save_corpus,
)
from refhsr.errors import ConfigError, DataError, PhaseOrderError
from refhsr.raster_io import (
    load_cube,
    load_cube_npy,
    load_raster,
    save_cube,
    save_cube_npy,
    save_png,
    save_raster,
)
from refhsr.types import HsiCube, default_band_centers


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------


class TestConfigFiles:
    def test_round_trip(self, tmp_path):
        cfg = TrainConfig(phase="flow", epochs=7, learning_rate=3e-4,
                          blocks=(3, 2), levels=2, batch_size=4)
        path = tmp_path / "run.ini"
        save_config(cfg, path)
        assert load_config(path) == cfg

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[train]\nmomentum = 0.9\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[optimizer]\nlr = 0.1\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_blocks_parsed_as_tuple(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[model]\nlevels = 3\nblocks = 2, 2, 1\n")
        cfg = load_config(path)
        assert cfg.blocks == (2, 2, 1)

    @pytest.mark.parametrize("raw,expected", [
        ("true", True), ("yes", True), ("on", True), ("1", True),
        ("false", False), ("no", False), ("off", False), ("0", False),
    ])
    def test_bool_forms(self, tmp_path, raw, expected):
        path = tmp_path / "run.ini"
        path.write_text(f"[model]\ninteraction = {raw}\n")
        assert load_config(path).interaction is expected

    def test_invalid_value_rejected(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[train]\nepochs = soon\n")
        with pytest.raises(ConfigError):
            load_config(path)


class TestFingerprint:
    def test_epochs_excluded(self):
        a = TrainConfig(epochs=1)
        b = TrainConfig(epochs=500)
        assert a.fingerprint() == b.fingerprint()

    def test_sensitive_to_learning_rate(self):
        a = TrainConfig(learning_rate=1e-4)
        b = TrainConfig(learning_rate=2e-4)
        assert a.fingerprint() != b.fingerprint()

    def test_stable_value(self):
        assert TrainConfig().fingerprint() == TrainConfig().fingerprint()


class TestTrainConfigValidation:
    @pytest.mark.parametrize("kwargs", [
        dict(phase="warp"),
        dict(epochs=0),
        dict(learning_rate=0.0),
        dict(val_fraction=1.0),
        dict(scale=3),
        dict(levels=2, blocks=(1, 1, 1)),
    ])
    def test_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs)


# ---------------------------------------------------------------------------
# corpora
# ---------------------------------------------------------------------------


class TestFlowCorpus:
    def test_generation_deterministic(self):
        a = make_flow_corpus(3, 32, 32, seed=5)
        b = make_flow_corpus(3, 32, 32, seed=5)
        for pa, pb in zip(a.pairs, b.pairs):
            assert np.array_equal(pa.tgt.data, pb.tgt.data)
            assert np.array_equal(pa.flow.data, pb.flow.data)

    def test_shift_bound_respected(self):
        corpus = make_flow_corpus(6, 32, 32, seed=1, max_shift=4.0)
        for pair in corpus.pairs:
            assert np.abs(pair.flow.data).max() <= 4.0

    def test_flow_constant_per_pair(self):
        corpus = make_flow_corpus(2, 16, 16, seed=2)
        for pair in corpus.pairs:
            assert np.ptp(pair.flow.data[..., 0]) == 0
            assert np.ptp(pair.flow.data[..., 1]) == 0

    def test_save_load_round_trip(self, tmp_path):
        corpus = make_flow_corpus(2, 16, 16, seed=3)
        save_corpus(corpus, tmp_path / "c")
        loaded = load_corpus(tmp_path / "c")
        assert isinstance(loaded, FlowCorpus)
        assert len(loaded.pairs) == 2
        for pa, pb in zip(corpus.pairs, loaded.pairs):
            assert np.allclose(pa.tgt.data, pb.tgt.data, atol=1e-7)
            assert np.allclose(pa.flow.data, pb.flow.data, atol=1e-7)


class TestSceneCorpus:
    def test_structure(self, tiny_scenes):
        assert isinstance(tiny_scenes, SceneCorpus)
        assert tiny_scenes.scale == 4
        assert len(tiny_scenes.scenes) == 2
        scene = tiny_scenes.scenes[0]
        assert scene.hr.data.shape == (32, 32, 4)
        assert scene.lr.data.shape == (8, 8, 4)
        assert len(scene.views) == 2
        assert scene.views[0].flow.data.shape == (32, 32, 2)

    def test_deterministic(self, tiny_scenes):
        again = make_scene_corpus(2, 32, 32, bands=4, scale=4, views=2, seed=77)
        assert np.array_equal(tiny_scenes.scenes[1].hr.data, again.scenes[1].hr.data)
        assert np.array_equal(tiny_scenes.scenes[1].views[1].ref_rgb.data,
                              again.scenes[1].views[1].ref_rgb.data)

    def test_save_load_round_trip(self, tmp_path, tiny_scenes):
        save_corpus(tiny_scenes, tmp_path / "c")
        loaded = load_corpus(tmp_path / "c")
        assert isinstance(loaded, SceneCorpus)
        assert loaded.scale == tiny_scenes.scale
        a = tiny_scenes.scenes[0]
        b = loaded.scenes[0]
        assert np.allclose(a.hr.data, b.hr.data, atol=1e-7)
        assert np.allclose(a.lr.data, b.lr.data, atol=1e-7)
        assert np.allclose(a.views[1].flow.data, b.views[1].flow.data, atol=1e-7)

    def test_load_rejects_non_corpus(self, tmp_path):
        (tmp_path / "manifest.json").write_text(json.dumps({"kind": "mystery"}))
        with pytest.raises(DataError):
            load_corpus(tmp_path)

    def test_load_missing_dir(self, tmp_path):
        with pytest.raises((DataError, OSError)):
            load_corpus(tmp_path / "nope")


# ---------------------------------------------------------------------------
# raster files
# ---------------------------------------------------------------------------


class TestRasterIo:
    def test_cube_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        cube = HsiCube(rng.random((6, 5, 4)).astype(np.float32).astype(np.float64),
                       band_centers=default_band_centers(4))
        path = tmp_path / "x.hsi"
        save_cube(cube, path)
        loaded = load_cube(path)
        assert np.allclose(loaded.data, cube.data, atol=1e-7)
        assert np.allclose(loaded.band_centers, cube.band_centers)

    def test_cube_without_centers(self, tmp_path):
        cube = HsiCube(np.zeros((4, 4, 3)))
        save_cube(cube, tmp_path / "x.hsi")
        assert load_cube(tmp_path / "x.hsi").band_centers is None

    def test_raster_round_trip(self, tmp_path):
        arr = np.random.default_rng(1).random((5, 7, 2)).astype(np.float32)
        save_raster(arr, tmp_path / "x.f32")
        assert np.array_equal(load_raster(tmp_path / "x.f32"), arr)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.hsi"
        path.write_bytes(b"JUNKJUNKJUNKJUNK")
        with pytest.raises(DataError):
            load_cube(path)

    def test_truncated_payload(self, tmp_path):
        cube = HsiCube(np.zeros((4, 4, 3)))
        path = tmp_path / "x.hsi"
        save_cube(cube, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(DataError):
            load_cube(path)

    def test_png_writes_file(self, tmp_path):
        from refhsr.types import RgbImage

        img = RgbImage(np.random.default_rng(2).random((8, 8, 3)))
        out = tmp_path / "x.png"
        save_png(img, out)
        assert out.stat().st_size > 0

    def test_npy_round_trip(self, tmp_path):
        cube = HsiCube(np.random.default_rng(3).random((4, 4, 5)))
        save_cube_npy(cube, tmp_path / "x.npy")
        loaded = load_cube_npy(tmp_path / "x.npy",
                               band_centers=tuple(default_band_centers(5)))
        assert np.allclose(loaded.data, cube.data, atol=1e-7)
        assert loaded.band_centers is not None


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


class TestCheckpoints:
    def _saved(self, tmp_path, phase="flow"):
        cfg = TrainConfig(phase=phase)
        model = torch.nn.Linear(3, 3)
        save_checkpoint(tmp_path, phase=phase, config=cfg,
                        models={"m": model.state_dict()},
                        optimizer_state={}, numpy_rng=np.random.default_rng(0),
                        epoch=2, step=10)
        return cfg

    def test_round_trip(self, tmp_path):
        cfg = self._saved(tmp_path)
        payload, manifest = load_checkpoint(tmp_path)
        assert manifest["phase"] == "flow"
        assert manifest["epoch"] == 2
        assert "m" in payload["models"]
        assert checkpoint_exists(tmp_path)
        assert config_from_manifest(manifest) == cfg

    def test_require_phase(self, tmp_path):
        self._saved(tmp_path, phase="flow")
        require_phase(tmp_path, "flow")
        with pytest.raises(PhaseOrderError):
            require_phase(tmp_path, "warpnet")

    def test_require_phase_missing_dir(self, tmp_path):
        with pytest.raises(PhaseOrderError):
            require_phase(tmp_path / "none", "flow")

    def test_fingerprint_check(self, tmp_path):
        cfg = self._saved(tmp_path)
        _, manifest = load_checkpoint(tmp_path)
        check_fingerprint(manifest, cfg)
        with pytest.raises(ConfigError):
            check_fingerprint(manifest, cfg.replace(learning_rate=0.5))

    def test_blocks_restored_as_tuple(self, tmp_path):
        cfg = TrainConfig(phase="sr", blocks=(2, 1), levels=2)
        save_checkpoint(tmp_path, phase="sr", config=cfg, models={},
                        optimizer_state={}, numpy_rng=np.random.default_rng(0),
                        epoch=1, step=1)
        _, manifest = load_checkpoint(tmp_path)
        restored = config_from_manifest(manifest)
        assert restored.blocks == (2, 1)
        assert restored == cfg

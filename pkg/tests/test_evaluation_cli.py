import json

import numpy as np
import pytest

from refhsr.cli import main
from refhsr.config import TrainConfig
from refhsr.datasets import make_scene_corpus
from refhsr.errors import DataError
from refhsr.evaluation import REPORT_NAME, evaluate_sr, infer_scene, per_band_metrics
from refhsr.plots import flow_to_rgb, plot_band_curve, plot_error_map, plot_spectral_curves
from refhsr.training import build_system, train_phase2_sr
from refhsr.types import HsiCube


def _sr_cfg(**kwargs):
    base = dict(phase="sr", epochs=1, learning_rate=1e-4, bands=4,
                base_channels=8, levels=2, heads=2, blocks=(1, 1),
                use_alignment=False)
    base.update(kwargs)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def fresh_system():
    import torch

    torch.manual_seed(0)
    return build_system(_sr_cfg())


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


class TestEvaluateSr:
    def test_baseline_only(self, tiny_scenes, tmp_path):
        report = evaluate_sr(None, tiny_scenes, 4, out_dir=tmp_path)
        assert report["n_scenes"] == 2
        assert "model" not in report
        assert set(report["bicubic"]) == {"psnr", "ssim", "sam"}
        assert (tmp_path / REPORT_NAME).exists()
        on_disk = json.loads((tmp_path / REPORT_NAME).read_text())
        assert on_disk["bicubic"] == report["bicubic"]

    def test_untrained_system_matches_baseline(self, tiny_scenes, fresh_system):
        # the residual head starts at zero, so the model output is exactly
        # the bicubic input and every gain is zero
        report = evaluate_sr(fresh_system, tiny_scenes, 4)
        assert report["model"]["psnr"] == pytest.approx(report["bicubic"]["psnr"])
        assert report["gain"]["psnr_db"] == pytest.approx(0.0, abs=1e-9)
        assert report["gain"]["sam_rel"] == pytest.approx(0.0, abs=1e-9)

    def test_error_maps_written(self, tiny_scenes, fresh_system, tmp_path):
        report = evaluate_sr(fresh_system, tiny_scenes, 4, out_dir=tmp_path)
        assert len(report["error_maps"]) == 2
        for rel in report["error_maps"]:
            assert (tmp_path / rel).exists()

    def test_scale_mismatch(self, tiny_scenes):
        with pytest.raises(DataError):
            evaluate_sr(None, tiny_scenes, 8)

    def test_rejects_flow_corpus(self):
        from refhsr.datasets import make_flow_corpus

        with pytest.raises(DataError):
            evaluate_sr(None, make_flow_corpus(1, 16, 16, seed=0), 4)

    def test_per_band_lengths(self, tiny_scenes):
        report = evaluate_sr(None, tiny_scenes, 4)
        assert len(report["per_band"]["bicubic"]["psnr"]) == report["bands"]

    def test_per_band_metrics_shape(self):
        rng = np.random.default_rng(0)
        a = rng.random((16, 16, 5))
        b = rng.random((16, 16, 5))
        m = per_band_metrics(a, b)
        assert len(m["psnr"]) == 5 and len(m["ssim"]) == 5


class TestInferScene:
    def test_returns_cube(self, tiny_scenes, fresh_system):
        cube = infer_scene(fresh_system, tiny_scenes, 4, 0, 1)
        assert isinstance(cube, HsiCube)
        assert cube.data.shape == (32, 32, 4)

    def test_bad_indices(self, tiny_scenes, fresh_system):
        with pytest.raises(DataError):
            infer_scene(fresh_system, tiny_scenes, 4, 99)
        with pytest.raises(DataError):
            infer_scene(fresh_system, tiny_scenes, 4, 0, 99)


# ---------------------------------------------------------------------------
# plots
# ---------------------------------------------------------------------------


class TestPlots:
    def test_error_map(self, tmp_path):
        out = tmp_path / "err.png"
        plot_error_map(np.random.default_rng(0).random((16, 16)), out, "err")
        assert out.stat().st_size > 0

    def test_band_curve_with_baseline(self, tmp_path):
        out = tmp_path / "band.png"
        plot_band_curve([30.0, 31.0, 29.5], out, ylabel="psnr",
                        baseline=[28.0, 28.5, 28.2])
        assert out.stat().st_size > 0

    def test_spectral_curves_empty_rejected(self, tmp_path):
        with pytest.raises(DataError):
            plot_spectral_curves({}, tmp_path / "s.png")

    def test_flow_to_rgb_constant_flow_single_hue(self):
        flow = np.full((8, 8, 2), [1.5, -0.5])
        rgb = flow_to_rgb(flow)
        assert rgb.data.std(axis=(0, 1)).max() < 1e-6

    def test_flow_to_rgb_zero_flow_white(self):
        rgb = flow_to_rgb(np.zeros((4, 4, 2)))
        assert np.allclose(rgb.data, 1.0)

    def test_flow_to_rgb_shape_guard(self):
        with pytest.raises(DataError):
            flow_to_rgb(np.zeros((4, 4, 3)))


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------


class TestCli:
    def test_gen_scenes_and_eval(self, tmp_path, capsys):
        data = tmp_path / "data"
        rc = main(["gen", "--kind", "scenes", "--scenes", "1", "--views", "1",
                   "--size", "32", "--bands", "4", "--seed", "3",
                   "--out", str(data)])
        assert rc == 0
        record = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert record["kind"] == "scenes"

        rc = main(["eval", "--data", str(data), "--out", str(tmp_path / "ev")])
        assert rc == 0
        record = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert "bicubic" in record
        assert (tmp_path / "ev" / REPORT_NAME).exists()

    def test_gen_reproducible(self, tmp_path, capsys):
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out in (a, b):
            assert main(["gen", "--kind", "shifts", "--pairs", "2",
                         "--size", "16", "--seed", "7", "--out", str(out)]) == 0
        capsys.readouterr()
        flows_a = sorted(a.glob("pair_*/flow.f32"))
        flows_b = sorted(b.glob("pair_*/flow.f32"))
        assert flows_a and len(flows_a) == len(flows_b)
        for fa, fb in zip(flows_a, flows_b):
            assert fa.read_bytes() == fb.read_bytes()

    def test_missing_data_exits_3(self, tmp_path, capsys):
        rc = main(["eval", "--data", str(tmp_path / "nope"),
                   "--out", str(tmp_path / "ev")])
        capsys.readouterr()
        assert rc == 3

    def test_bad_config_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "bad.ini"
        cfg.write_text("[train]\nphase = warp\n")
        data = tmp_path / "d"
        main(["gen", "--kind", "shifts", "--pairs", "1", "--size", "16",
              "--out", str(data)])
        rc = main(["train-flow", "--data", str(data), "--config", str(cfg),
                   "--out", str(tmp_path / "ck")])
        capsys.readouterr()
        assert rc == 2

    def test_phase_mismatch_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "sr.ini"
        cfg.write_text("[train]\nphase = sr\n")
        data = tmp_path / "d"
        main(["gen", "--kind", "shifts", "--pairs", "1", "--size", "16",
              "--out", str(data)])
        rc = main(["train-flow", "--data", str(data), "--config", str(cfg),
                   "--out", str(tmp_path / "ck")])
        capsys.readouterr()
        assert rc == 2

    def test_selftest_subcommand_listed(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        assert "selftest" in capsys.readouterr().out

import pytest
import torch

from refhsr.encoders import (
    EncoderConfig,
    FeaturePyramid,
    HsiEncoder,
    RgbEncoder,
    RgbEncoderBank,
    pretrain_contrastive,
)
from refhsr.errors import ConfigError, ShapeError


class TestEncoderConfig:
    def test_channel_doubling(self):
        cfg = EncoderConfig(levels=3, base_channels=16)
        assert [cfg.channels(i) for i in (1, 2, 3)] == [16, 32, 64]

    @pytest.mark.parametrize("levels", [0, 4])
    def test_level_bounds(self, levels):
        with pytest.raises(ConfigError):
            EncoderConfig(levels=levels)

    def test_min_channels(self):
        with pytest.raises(ConfigError):
            EncoderConfig(base_channels=4)


class TestFeaturePyramid:
    def test_one_indexed_access(self):
        feats = [torch.zeros((1, 8, 16, 16)), torch.zeros((1, 16, 8, 8))]
        pyr = FeaturePyramid(tuple(feats))
        assert pyr[1].shape[2] == 16
        assert pyr[2].shape[2] == 8

    def test_rejects_non_dyadic(self):
        feats = [torch.zeros((1, 8, 16, 16)), torch.zeros((1, 16, 9, 9))]
        with pytest.raises(ShapeError):
            FeaturePyramid(tuple(feats))


class TestEncoders:
    @pytest.mark.parametrize("levels", [1, 2, 3])
    def test_pyramid_shapes(self, levels):
        cfg = EncoderConfig(levels=levels, base_channels=8)
        enc = HsiEncoder(bands=5, cfg=cfg)
        pyr = enc(torch.rand((2, 5, 16, 16)))
        for lvl in range(1, levels + 1):
            f = pyr[lvl]
            assert f.shape == (2, cfg.channels(lvl), 16 >> (lvl - 1), 16 >> (lvl - 1))

    def test_input_divisibility_enforced(self):
        enc = RgbEncoder(EncoderConfig(levels=3, base_channels=8))
        with pytest.raises(ShapeError):
            enc(torch.rand((1, 3, 18, 16)))

    def test_rgb_channel_guard(self):
        enc = RgbEncoder(EncoderConfig(levels=2, base_channels=8))
        with pytest.raises(ShapeError):
            enc(torch.rand((1, 4, 16, 16)))


class TestRgbEncoderBank:
    def test_roles_have_independent_weights(self):
        torch.manual_seed(0)
        bank = RgbEncoderBank(EncoderConfig(levels=2, base_channels=8))
        x = torch.rand((1, 3, 16, 16))
        with torch.no_grad():
            a = bank.encode(x, "target")[1]
            b = bank.encode(x, "ref1")[1]
        assert not torch.allclose(a, b)

    def test_unknown_role(self):
        bank = RgbEncoderBank(EncoderConfig(levels=2, base_channels=8))
        with pytest.raises(ConfigError):
            bank.encode(torch.rand((1, 3, 16, 16)), "ref3")

    def test_pretrain_hook_is_noop(self):
        bank = RgbEncoderBank(EncoderConfig(levels=2, base_channels=8))
        before = {k: v.clone() for k, v in bank.state_dict().items()}
        out = pretrain_contrastive(bank)
        assert out is bank
        after = bank.state_dict()
        assert all(torch.equal(before[k], after[k]) for k in before)

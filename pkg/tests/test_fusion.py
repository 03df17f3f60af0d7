import numpy as np
import pytest
import torch
import torch.nn.functional as F

from refhsr.errors import ConfigError, ShapeError
from refhsr.fusion import (
    AttentionBlock,
    ChannelLayerNorm,
    FusionLevel,
    GatedFeedForward,
    SpectralAttention,
    SpectralAttentionMap,
    SrHead,
    channel_norm,
    rca_block,
    ssa_block,
    zero_residual_projections,
)


class TestChannelNorm:
    def test_channel_constant_maps_to_zero(self):
        x = torch.full((2, 5, 4, 4), 3.7)
        assert torch.equal(channel_norm(x), torch.zeros_like(x))

    def test_moments(self):
        x = torch.rand((1, 16, 3, 3), dtype=torch.float64)
        out = channel_norm(x, eps=0.0)
        assert torch.allclose(out.mean(dim=1), torch.zeros(1, 3, 3, dtype=torch.float64),
                              atol=1e-10)
        assert torch.allclose(out.var(dim=1, unbiased=False),
                              torch.ones(1, 3, 3, dtype=torch.float64), atol=1e-8)

    def test_layer_module_matches_free_function_at_init(self):
        norm = ChannelLayerNorm(8)
        x = torch.rand((2, 8, 4, 4))
        assert torch.allclose(norm(x), channel_norm(x), atol=1e-6)


class TestSpectralAttentionMap:
    def test_valid_map(self):
        logits = torch.rand((2, 3, 5, 5))
        SpectralAttentionMap(torch.softmax(logits, dim=2))

    def test_rejects_unnormalised(self):
        with pytest.raises(ShapeError):
            SpectralAttentionMap(torch.rand((1, 2, 4, 4)))

    def test_rejects_negative(self):
        m = torch.softmax(torch.rand((1, 2, 4, 4)), dim=2)
        m[0, 0, 0, 0] -= 2.0
        m[0, 0, 1, 0] += 2.0
        with pytest.raises(ShapeError):
            SpectralAttentionMap(m)


class TestSpectralAttention:
    def test_attention_maps_column_stochastic(self):
        torch.manual_seed(0)
        attn = SpectralAttention(8, heads=2, gated=False)
        for _ in range(10):
            maps = attn.attention_maps(torch.randn((2, 8, 5, 5)))
            sums = maps.maps.sum(dim=2)
            assert torch.allclose(sums, torch.ones_like(sums), atol=1e-5)

    def test_forward_matches_manual_chain(self):
        torch.manual_seed(1)
        dim, heads = 4, 1
        attn = SpectralAttention(dim, heads, gated=False).double()
        x = torch.rand((1, dim, 3, 3), dtype=torch.float64)

        q, k, v = attn.qkv_dw(attn.qkv(x)).chunk(3, dim=1)
        qn = F.normalize(q.reshape(1, 1, dim, 9), dim=-1)
        kn = F.normalize(k.reshape(1, 1, dim, 9), dim=-1)
        logits = torch.einsum("bhip,bhjp->bhij", kn, qn) * attn.temperature
        a = torch.softmax(logits, dim=2)
        mixed = torch.einsum("bhij,bhip->bhjp", a, v.reshape(1, 1, dim, 9))
        expected = attn.proj(mixed.reshape(1, dim, 3, 3))

        assert torch.allclose(attn(x), expected, atol=1e-12)

    def test_unit_gate_equals_ungated(self):
        torch.manual_seed(2)
        gated = SpectralAttention(8, heads=2, gated=True)
        plain = SpectralAttention(8, heads=2, gated=False)
        state = {k: v for k, v in gated.state_dict().items()
                 if not k.startswith("y_")}
        plain.load_state_dict(state)
        x = torch.rand((2, 8, 4, 4))
        with torch.no_grad():
            assert torch.equal(gated(x, torch.ones_like(x)), plain(x))

    def test_zero_gate_annihilates(self):
        torch.manual_seed(3)
        attn = SpectralAttention(8, heads=4, gated=True)
        x = torch.rand((1, 8, 4, 4))
        with torch.no_grad():
            out = attn(x, torch.zeros_like(x))
        assert torch.equal(out, torch.zeros_like(out))

    def test_gate_presence_enforced(self):
        attn = SpectralAttention(4, heads=1, gated=True)
        with pytest.raises(ShapeError):
            attn(torch.rand((1, 4, 3, 3)))
        plain = SpectralAttention(4, heads=1, gated=False)
        with pytest.raises(ShapeError):
            plain(torch.rand((1, 4, 3, 3)), torch.rand((1, 4, 3, 3)))

    def test_dim_head_divisibility(self):
        with pytest.raises(ConfigError):
            SpectralAttention(6, heads=4, gated=False)


class TestResidualTopology:
    def test_zeroed_blocks_are_identity(self):
        torch.manual_seed(4)
        block = zero_residual_projections(ssa_block(8, 2))
        x = torch.rand((1, 8, 6, 6))
        with torch.no_grad():
            assert torch.equal(block(x), x)

        gated = zero_residual_projections(rca_block(8, 2))
        y = torch.rand((1, 8, 6, 6))
        with torch.no_grad():
            assert torch.equal(gated(x, y), x)

    def test_zeroed_fusion_level_is_identity(self):
        torch.manual_seed(5)
        level = zero_residual_projections(FusionLevel(8, None, heads=2, n_blocks=3))
        f = torch.rand((2, 8, 8, 8))
        a = torch.rand((2, 8, 8, 8))
        with torch.no_grad():
            assert torch.equal(level(f, None, a), f)

    def test_mix_starts_as_passthrough(self):
        torch.manual_seed(6)
        level = zero_residual_projections(FusionLevel(8, 16, heads=2, n_blocks=1))
        f = torch.rand((1, 8, 8, 8))
        prev = torch.rand((1, 16, 4, 4))
        a = torch.rand((1, 8, 8, 8))
        with torch.no_grad():
            assert torch.allclose(level(f, prev, a), f, atol=1e-6)

    def test_head_starts_as_upsampled_input(self):
        torch.manual_seed(7)
        head = SrHead(8, 5)
        f = torch.rand((1, 8, 8, 8))
        lr_up = torch.rand((1, 5, 8, 8))
        with torch.no_grad():
            assert torch.equal(head(f, lr_up), lr_up)

    def test_prev_level_mismatch_raises(self):
        level = FusionLevel(8, None, heads=2, n_blocks=1)
        f = torch.rand((1, 8, 4, 4))
        with pytest.raises(ShapeError):
            level(f, torch.rand((1, 16, 2, 2)), f)


class TestGatedFeedForward:
    def test_shapes(self):
        ffn = GatedFeedForward(8)
        x = torch.rand((2, 8, 5, 5))
        assert ffn(x).shape == x.shape

    def test_zeroed_projection_kills_output(self):
        ffn = GatedFeedForward(8)
        torch.nn.init.zeros_(ffn.project_out.weight)
        torch.nn.init.zeros_(ffn.project_out.bias)
        x = torch.rand((1, 8, 4, 4))
        assert torch.equal(ffn(x), torch.zeros_like(x))


class TestGradients:
    def test_attention_block_gradcheck(self):
        torch.manual_seed(8)
        block = rca_block(4, 2).double()
        x = torch.rand((1, 4, 3, 3), dtype=torch.float64, requires_grad=True)
        y = torch.rand((1, 4, 3, 3), dtype=torch.float64, requires_grad=True)
        assert torch.autograd.gradcheck(
            lambda a, b: block(a, b).sum(), (x, y), eps=1e-6, atol=1e-4)

    def test_fusion_level_gradcheck(self):
        torch.manual_seed(9)
        level = FusionLevel(4, None, heads=2, n_blocks=1).double()
        f = torch.rand((1, 4, 4, 4), dtype=torch.float64, requires_grad=True)
        a = torch.rand((1, 4, 4, 4), dtype=torch.float64, requires_grad=True)
        assert torch.autograd.gradcheck(
            lambda u, v: level(u, None, v).sum(), (f, a), eps=1e-6, atol=1e-4)


def test_attention_block_can_overfit_noise():
    torch.manual_seed(10)
    block = ssa_block(8, 2)
    x = torch.rand((1, 8, 6, 6))
    target = torch.rand((1, 8, 6, 6))
    opt = torch.optim.Adam(block.parameters(), lr=5e-3)
    first = None
    for _ in range(60):
        loss = F.mse_loss(block(x), target)
        if first is None:
            first = loss.item()
        opt.zero_grad()
        loss.backward()
        opt.step()
    assert loss.item() < 0.5 * first

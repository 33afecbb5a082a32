import numpy as np
import pytest
import torch

from noisetransfer.errors import ConfigError
from noisetransfer.models import GeneratorConfig, NoiseGenerator
from noisetransfer.models.generator import SftLayer


def _inputs(cfg: GeneratorConfig, b: int = 2, hw: int = 32, seed: int = 0):
    g = torch.Generator().manual_seed(seed)
    x = torch.rand(b, cfg.in_channels, hw, hw, generator=g)
    e = torch.tanh(torch.randn(b, cfg.embed_dim, generator=g))
    return x, e


class TestSftLayer:
    def _zeroed_identity_layer(self, channels=6, embed_dim=8, z_dim=4):
        # gamma forced to 1 (zero weights, bias 1), beta forced to 0
        layer = SftLayer(channels, embed_dim, z_dim, spectral=False)
        with torch.no_grad():
            layer.gamma2.weight.zero_()
            layer.gamma2.bias.fill_(1.0)
            layer.beta2.weight.zero_()
            layer.beta2.bias.zero_()
        return layer

    def test_identity_modulation(self):
        layer = self._zeroed_identity_layer()
        feat = torch.randn(2, 6, 10, 10)
        e_map = torch.randn(2, 8, 10, 10)
        z = torch.randn(2, 4, 10, 10)
        out = layer(feat, e_map, z)
        assert torch.equal(out, feat)

    def test_randomness_is_live(self):
        layer = SftLayer(6, 8, 4, spectral=False)
        feat = torch.randn(1, 6, 10, 10)
        e_map = torch.randn(1, 8, 10, 10)
        out1 = layer(feat, e_map, torch.randn(1, 4, 10, 10))
        out2 = layer(feat, e_map, torch.randn(1, 4, 10, 10))
        assert not torch.equal(out1, out2)

    def test_pure_given_inputs(self):
        layer = SftLayer(6, 8, 4, spectral=False)
        feat = torch.randn(1, 6, 10, 10)
        e_map = torch.randn(1, 8, 10, 10)
        z = torch.randn(1, 4, 10, 10)
        assert torch.equal(layer(feat, e_map, z), layer(feat, e_map, z))

    def test_shape_mismatch_rejected(self):
        layer = SftLayer(6, 8, 4, spectral=False)
        with pytest.raises(ConfigError):
            layer(torch.randn(1, 6, 10, 10), torch.randn(1, 8, 5, 5),
                  torch.randn(1, 4, 10, 10))

    def test_output_shape_equals_feature_shape(self):
        layer = SftLayer(6, 8, 4, spectral=False)
        feat = torch.randn(3, 6, 12, 16)
        out = layer(feat, torch.randn(3, 8, 12, 16), torch.randn(3, 4, 12, 16))
        assert out.shape == feat.shape


class TestGenerator:
    def test_output_shape(self, tiny_gen_cfg):
        net = NoiseGenerator(tiny_gen_cfg)
        x, e = _inputs(tiny_gen_cfg)
        out = net(x, e, rng=torch.Generator().manual_seed(1))
        assert out.shape == x.shape

    def test_different_seeds_differ(self, tiny_gen_cfg):
        net = NoiseGenerator(tiny_gen_cfg).eval()
        x, e = _inputs(tiny_gen_cfg)
        with torch.no_grad():
            a = net(x, e, rng=torch.Generator().manual_seed(1))
            b = net(x, e, rng=torch.Generator().manual_seed(2))
        assert not torch.equal(a, b)

    def test_fixed_z_deterministic(self, tiny_gen_cfg):
        net = NoiseGenerator(tiny_gen_cfg).eval()
        x, e = _inputs(tiny_gen_cfg)
        z = net.sample_z(2, 32, 32, rng=torch.Generator().manual_seed(3))
        with torch.no_grad():
            assert torch.equal(net(x, e, z=z), net(x, e, z=z))

    def test_untrained_outputs_finite(self, tiny_gen_cfg):
        net = NoiseGenerator(tiny_gen_cfg)
        x, e = _inputs(tiny_gen_cfg)
        out = net(x, e, rng=torch.Generator().manual_seed(0))
        assert torch.isfinite(out).all()

    def test_embedding_dim_mismatch_rejected(self, tiny_gen_cfg):
        net = NoiseGenerator(tiny_gen_cfg)
        x, _ = _inputs(tiny_gen_cfg)
        with pytest.raises(ConfigError):
            net(x, torch.zeros(2, tiny_gen_cfg.embed_dim + 1))

    def test_indivisible_input_rejected(self, tiny_gen_cfg):
        net = NoiseGenerator(tiny_gen_cfg)
        x = torch.rand(1, 3, 30, 30)  # 30 not divisible by 2**2
        with pytest.raises(ConfigError):
            net(x, torch.zeros(1, tiny_gen_cfg.embed_dim))

    def test_wrong_z_shape_rejected(self, tiny_gen_cfg):
        net = NoiseGenerator(tiny_gen_cfg)
        x, e = _inputs(tiny_gen_cfg)
        z = net.sample_z(2, 32, 32, rng=torch.Generator().manual_seed(0))
        with pytest.raises(ConfigError):
            net(x, e, z=z[:-1])

    def test_z_shapes_coarsest_first(self, tiny_gen_cfg):
        net = NoiseGenerator(tiny_gen_cfg)
        shapes = net.z_shapes(2, 32, 32)
        assert shapes == [(2, 4, 8, 8), (2, 4, 16, 16), (2, 4, 32, 32)]

    def test_channels_double_per_level(self):
        net = NoiseGenerator(GeneratorConfig(base_channels=8, depth=3, z_dim=4,
                                             embed_dim=16))
        assert [d.out_channels for d in net.down] == [16, 32, 64]

    def test_all_parameters_receive_gradient(self, tiny_gen_cfg):
        net = NoiseGenerator(tiny_gen_cfg)
        x, e = _inputs(tiny_gen_cfg)
        out = net(x, e, rng=torch.Generator().manual_seed(0))
        out.mean().backward()
        missing = [n for n, p in net.named_parameters() if p.grad is None]
        assert missing == []

    def test_gradient_flows_to_input(self, tiny_gen_cfg):
        net = NoiseGenerator(tiny_gen_cfg)
        x, e = _inputs(tiny_gen_cfg)
        x.requires_grad_(True)
        out = net(x, e, rng=torch.Generator().manual_seed(0))
        out.sum().backward()
        assert x.grad is not None and x.grad.abs().sum() > 0

    def test_residual_head_with_zeroed_output_is_identity(self):
        cfg = GeneratorConfig(base_channels=8, depth=2, z_dim=4, embed_dim=16,
                              spectral_norm=False, residual_head=True)
        net = NoiseGenerator(cfg)
        with torch.no_grad():
            net.head.weight.zero_()
            net.head.bias.zero_()
        x, e = _inputs(cfg)
        out = net(x, e, rng=torch.Generator().manual_seed(0))
        assert torch.equal(out, x)

    def test_spectral_norm_bound(self, tiny_gen_cfg):
        net = NoiseGenerator(tiny_gen_cfg)
        x, e = _inputs(tiny_gen_cfg)
        for _ in range(50):  # converge the power iteration
            net(x, e, rng=torch.Generator().manual_seed(0))
        for name, module in net.named_modules():
            if hasattr(module, "weight_orig"):
                w = module.weight.detach().reshape(module.weight.shape[0], -1).numpy()
                top = np.linalg.svd(w, compute_uv=False)[0]
                assert top <= 1.05, f"{name} spectral norm {top:.4f}"

    def test_describe_lists_totals(self, tiny_gen_cfg):
        text = NoiseGenerator(tiny_gen_cfg).describe()
        assert "total parameters" in text
        assert "head" in text

    def test_config_round_trip(self, tiny_gen_cfg):
        assert GeneratorConfig(**tiny_gen_cfg.to_dict()) == tiny_gen_cfg

    def test_invalid_config_rejected(self):
        with pytest.raises(ConfigError):
            NoiseGenerator(GeneratorConfig(base_channels=0))

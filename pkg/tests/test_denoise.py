import numpy as np
import pytest
import torch

from noisetransfer.data import CleanPool
from noisetransfer.denoise import (
    GENERATED,
    GROUND_TRUTH,
    ORACLE,
    DenoisePair,
    DenoiserConfig,
    eval_denoiser,
    denoise_image,
    load_denoiser,
    make_denoise_pairs,
    save_denoiser,
    train_denoiser,
)
from noisetransfer.errors import ConfigError, DataError
from noisetransfer.metrics import psnr
from noisetransfer.models import DenoiserNet
from noisetransfer.noise import NoiseSpec, sample_noisy


def _oracle_synthesize(sigma=25.0):
    spec = NoiseSpec("gaussian", sigma=sigma)

    def synthesize(clean, reference, seed):
        return sample_noisy(clean, spec, np.random.default_rng(seed))

    return synthesize


def _pool(seed=0, n=3, hw=32):
    rng = np.random.default_rng(seed)
    return CleanPool([rng.random((hw, hw, 3)).astype(np.float32)
                      for _ in range(n)])


def _refs(n=2, hw=16, seed=1):
    rng = np.random.default_rng(seed)
    return [rng.random((hw, hw, 3)).astype(np.float32) for _ in range(n)]


class TestMakePairs:
    def test_zero_pairs(self):
        assert make_denoise_pairs(_oracle_synthesize(), _pool(), _refs(), 0) == []

    def test_reproducible_and_tagged(self):
        a = make_denoise_pairs(_oracle_synthesize(), _pool(), _refs(), 4,
                               seed=3, patch=16, source=ORACLE)
        b = make_denoise_pairs(_oracle_synthesize(), _pool(), _refs(), 4,
                               seed=3, patch=16, source=ORACLE)
        assert len(a) == 4
        for pa, pb in zip(a, b):
            assert np.array_equal(pa.clean, pb.clean)
            assert np.array_equal(pa.noisy, pb.noisy)
            assert pa.provenance == pb.provenance
            assert pa.provenance["source"] == ORACLE
            assert 0 <= pa.provenance["reference"] < 2
            assert isinstance(pa.provenance["seed"], int)

    def test_empty_reference_pool(self):
        with pytest.raises(ConfigError):
            make_denoise_pairs(_oracle_synthesize(), _pool(), [], 2)

    def test_shape_mismatch_from_synthesize(self):
        bad = lambda clean, ref, seed: clean[:4]
        with pytest.raises(DataError, match="pair 0"):
            make_denoise_pairs(bad, _pool(), _refs(), 1, patch=16)

    def test_negative_count(self):
        with pytest.raises(ConfigError):
            make_denoise_pairs(_oracle_synthesize(), _pool(), _refs(), -1)


class TestTrainDenoiser:
    def _train_pairs(self, n=24, source=GENERATED):
        return make_denoise_pairs(_oracle_synthesize(), _pool(), _refs(), n,
                                  seed=5, patch=16, source=source)

    def test_generative_only_rejects_ground_truth(self):
        pairs = self._train_pairs(4, source=GROUND_TRUTH)
        with pytest.raises(DataError, match="pair 0"):
            train_denoiser(pairs, DenoiserConfig(layers=3, channels=8, epochs=1),
                           generative_only=True)

    def test_generative_only_accepts_generated(self):
        pairs = self._train_pairs(4, source=GENERATED)
        cfg = DenoiserConfig(layers=3, channels=8, epochs=1, batch=4, patch=16)
        net, history = train_denoiser(pairs, cfg, generative_only=True)
        assert len(history["train_loss"]) == 1

    def test_untagged_pairs_treated_as_ground_truth(self):
        pairs = [DenoisePair(clean=np.zeros((8, 8, 3), np.float32),
                             noisy=np.zeros((8, 8, 3), np.float32))]
        with pytest.raises(DataError):
            train_denoiser(pairs, DenoiserConfig(layers=3, channels=8, epochs=1),
                           generative_only=True)

    def test_zero_epochs_returns_initial_net(self):
        pairs = self._train_pairs(4)
        cfg = DenoiserConfig(layers=3, channels=8, epochs=0)
        net, history = train_denoiser(pairs, cfg)
        assert isinstance(net, DenoiserNet)
        assert history == {"train_loss": [], "val_psnr": []}

    def test_empty_pairs_rejected(self):
        with pytest.raises(ConfigError):
            train_denoiser([], DenoiserConfig())

    def test_learning_improves_validation_psnr(self):
        train = self._train_pairs(32)
        val = make_denoise_pairs(_oracle_synthesize(), _pool(seed=9), _refs(), 8,
                                 seed=8, patch=16, source=ORACLE)
        cfg = DenoiserConfig(layers=3, channels=8, epochs=4, batch=8,
                             patch=16, seed=0)
        net, history = train_denoiser(train, cfg, val_pairs=val)
        assert len(history["val_psnr"]) == 4
        assert history["val_psnr"][-1] > history["val_psnr"][0]
        assert history["train_loss"][-1] < history["train_loss"][0]

    def test_time_budget_stops_early(self):
        pairs = self._train_pairs(8)
        cfg = DenoiserConfig(layers=3, channels=8, epochs=50, batch=8)
        _, history = train_denoiser(pairs, cfg, time_budget_s=0.0)
        assert len(history["train_loss"]) == 1


class TestDenoiseImage:
    def test_clipped_shape_and_mode_restored(self):
        net = DenoiserNet(channels=8, layers=3)
        net.train()
        noisy = np.random.default_rng(0).normal(0.5, 2.0, (16, 16, 3)).astype(np.float32)
        out = denoise_image(net, noisy)
        assert out.shape == (16, 16, 3)
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert net.training  # restored

    def test_zeroed_residual_net_is_identity(self):
        net = DenoiserNet(channels=8, layers=3, residual=True)
        with torch.no_grad():
            for p in net.parameters():
                p.zero_()
        noisy = np.random.default_rng(1).random((12, 12, 3)).astype(np.float32)
        assert np.array_equal(denoise_image(net, noisy), noisy)


class TestEvalDenoiser:
    def test_identity_net_matches_direct_psnr(self):
        net = DenoiserNet(channels=8, layers=3, residual=True)
        with torch.no_grad():
            for p in net.parameters():
                p.zero_()
        pairs = make_denoise_pairs(_oracle_synthesize(), _pool(), _refs(), 4,
                                   patch=16, source=ORACLE)
        res = eval_denoiser(net, pairs)
        want = float(np.mean([psnr(p.clean, np.clip(p.noisy, 0, 1))
                              for p in pairs]))
        assert abs(res["psnr"] - want) < 1e-6
        assert 0.0 <= res["ssim"] <= 1.0

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            eval_denoiser(DenoiserNet(channels=8, layers=3), [])


class TestSaveLoad:
    def test_round_trip(self, tmp_path):
        cfg = DenoiserConfig(layers=3, channels=8)
        torch.manual_seed(0)
        net = DenoiserNet(channels=cfg.channels, layers=cfg.layers,
                          residual=cfg.residual)
        path = str(tmp_path / "denoiser.npz")
        save_denoiser(net, cfg, path)
        loaded, loaded_cfg = load_denoiser(path)
        assert loaded_cfg == cfg
        for (n, a), b in zip(net.named_parameters(), loaded.parameters()):
            assert torch.equal(a, b), n
        noisy = np.random.default_rng(2).random((16, 16, 3)).astype(np.float32)
        assert np.array_equal(denoise_image(net, noisy),
                              denoise_image(loaded, noisy))


class TestConfig:
    def test_validation(self):
        for bad in (dict(layers=1), dict(lr=0.0), dict(channels=0),
                    dict(batch=0)):
            with pytest.raises(ConfigError):
                DenoiserConfig(**bad).validate()

    def test_round_trip(self):
        cfg = DenoiserConfig(layers=4, channels=12)
        assert DenoiserConfig(**cfg.to_dict()) == cfg

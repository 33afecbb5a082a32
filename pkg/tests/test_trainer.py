import copy
import os

import numpy as np
import pytest
import torch

from noisetransfer.data import CleanPool
from noisetransfer.errors import ConfigError, NumericError
from noisetransfer.losses import AblationFlags
from noisetransfer.noise import NoiseSpec
from noisetransfer.trainer import (
    LOSS_KEYS,
    MetricsLog,
    TrainData,
    TrainerConfig,
    _next_batch,
    init_state,
    load_state,
    run_training,
    save_state,
    train_step,
)


def _cfg(**overrides):
    base = dict(steps_per_epoch=4, epochs=2, batch=2, patch=16, seed=0,
                momentum=0.99, queue_capacity=16, real_fraction=0.0)
    base.update(overrides)
    return TrainerConfig(**base)


def _data(seed=0, sigma=15.0):
    rng = np.random.default_rng(seed)
    pool = CleanPool([rng.random((24, 24, 3)).astype(np.float32)
                      for _ in range(4)])
    sampler = lambda rng: NoiseSpec("gaussian", sigma=sigma)
    return TrainData(clean_pool=pool, spec_sampler=sampler)


def _state(cfg=None, seed=0, **cfg_overrides):
    cfg = cfg or _cfg(seed=seed, **cfg_overrides)
    return init_state(cfg, tiny_gen_cfg(), tiny_disc_cfg())


def tiny_gen_cfg():
    from noisetransfer.models import GeneratorConfig
    return GeneratorConfig(base_channels=8, depth=2, z_dim=4, embed_dim=16)


def tiny_disc_cfg():
    from noisetransfer.models import DiscriminatorConfig
    return DiscriminatorConfig(base_channels=8, embed_dim=16, mlp_hidden=32)


def _params(net):
    return {n: p.detach().clone() for n, p in net.named_parameters()}


class TestConfig:
    def test_round_trip(self):
        cfg = _cfg(ablation=AblationFlags(no_noise_d=True))
        assert TrainerConfig.from_dict(cfg.to_dict()) == cfg

    def test_published_defaults(self):
        cfg = TrainerConfig()
        assert (cfg.lr, cfg.beta1, cfg.beta2) == (1e-4, 0.5, 0.99)
        assert cfg.weight_decay == 1e-7
        assert (cfg.batch, cfg.patch) == (32, 96)
        assert (cfg.tau, cfg.queue_capacity) == (0.1, 4096)
        assert cfg.persist_queue is False

    def test_validation(self):
        for bad in (dict(lr=0.0), dict(tau=-1.0), dict(momentum=1.5),
                    dict(queue_capacity=0), dict(beta1=1.0), dict(epochs=0)):
            with pytest.raises(ConfigError):
                _cfg(**bad).validate()


class TestTrainStep:
    def test_updates_g_and_d_momentum_updates_key(self):
        state = _state()
        g0, d0 = _params(state.generator), _params(state.disc)
        k0 = _params(state.key_disc)
        batch = _next_batch(state, _data())
        record = train_step(state, batch)

        assert state.step == 1
        assert set(LOSS_KEYS) <= set(record)
        g_changed = [n for n, p in state.generator.named_parameters()
                     if not torch.equal(p, g0[n])]
        d_changed = [n for n, p in state.disc.named_parameters()
                     if not torch.equal(p, d0[n])]
        assert len(g_changed) == len(g0)
        assert len(d_changed) == len(d0)
        # key moved exactly per k <- m*k + (1-m)*q with the post-step disc
        m = state.cfg.momentum
        d_new = dict(state.disc.named_parameters())
        for n, kp in state.key_disc.named_parameters():
            expected = k0[n].mul(m).add(d_new[n], alpha=1.0 - m)
            assert torch.equal(kp, expected), n

    def test_key_untouched_by_optimizers(self):
        state = _state(momentum=1.0)  # EMA frozen: any change must be a bug
        k0 = _params(state.key_disc)
        data = _data()
        for _ in range(5):
            train_step(state, _next_batch(state, data))
        for n, p in state.key_disc.named_parameters():
            assert torch.equal(p, k0[n]), n

    def test_ablation_drops_noise_d_term(self):
        state = _state(ablation=AblationFlags(no_noise_d=True))
        record = train_step(state, _next_batch(state, _data()))
        assert record["loss_d"] == record["gan_d"]
        assert record["loss_d"] != record["gan_d"] + record["noise_d"]

    def test_queue_grows_by_batch_until_capacity(self):
        state = _state(queue_capacity=7, batch=2)
        data = _data()
        sizes = []
        for _ in range(5):
            train_step(state, _next_batch(state, data))
            sizes.append(len(state.queue))
        assert sizes == [2, 4, 6, 7, 7]

    def test_same_seed_same_trajectory(self):
        records_a, records_b = [], []
        for records in (records_a, records_b):
            state = _state(seed=3)
            data = _data(seed=9)
            for _ in range(8):
                records.append(train_step(state, _next_batch(state, data)))
        assert records_a == records_b

    def test_nan_input_raises_numeric_error(self):
        state = _state()
        batch = _next_batch(state, _data())
        batch.X[0, 0, 0, 0] = np.nan
        with pytest.raises(NumericError, match="step"):
            train_step(state, batch)


class TestCheckpoint:
    def test_save_load_round_trip(self, tmp_path):
        state = _state(persist_queue=True)
        data = _data()
        for _ in range(3):
            train_step(state, _next_batch(state, data))
        path = str(tmp_path / "ckpt.npz")
        save_state(state, path)
        loaded = load_state(path)

        assert loaded.step == 3 and loaded.epoch == state.epoch
        assert loaded.cfg == state.cfg
        for net in ("generator", "disc", "key_disc"):
            sd_a = getattr(state, net).state_dict()
            sd_b = getattr(loaded, net).state_dict()
            assert sd_a.keys() == sd_b.keys()
            for k in sd_a:
                assert torch.equal(sd_a[k], sd_b[k]), f"{net}.{k}"
        assert len(loaded.queue) == len(state.queue)
        assert torch.equal(loaded.queue.negatives(), state.queue.negatives())
        # RNG streams continue identically
        assert np.array_equal(loaded.np_rng.integers(0, 1 << 30, 8),
                              state.np_rng.integers(0, 1 << 30, 8))
        assert torch.equal(torch.randn(4, generator=loaded.z_rng),
                           torch.randn(4, generator=state.z_rng))

    def test_queue_not_persisted_by_default(self, tmp_path):
        state = _state()  # persist_queue=False
        data = _data()
        train_step(state, _next_batch(state, data))
        path = str(tmp_path / "ckpt.npz")
        save_state(state, path)
        loaded = load_state(path)
        assert len(state.queue) == 2
        assert len(loaded.queue) == 0  # warm-up restarts

    def test_resume_matches_uninterrupted(self, tmp_path):
        # continuous reference run
        state_a = _state(persist_queue=True, seed=5)
        data = _data(seed=11)
        ref = [train_step(state_a, _next_batch(state_a, data)) for _ in range(6)]

        # interrupted at step 3
        state_b = _state(persist_queue=True, seed=5)
        data_b = _data(seed=11)
        got = [train_step(state_b, _next_batch(state_b, data_b)) for _ in range(3)]
        save_state(state_b, str(tmp_path / "mid.npz"))
        resumed = load_state(str(tmp_path / "mid.npz"))
        got += [train_step(resumed, _next_batch(resumed, data_b)) for _ in range(3)]

        assert got == ref
        for (n, pa), pb in zip(state_a.generator.named_parameters(),
                               resumed.generator.parameters()):
            assert torch.equal(pa, pb), n


class TestRunTraining:
    def test_writes_epochs_logs_and_evals(self, tmp_path):
        state = _state()
        rng = np.random.default_rng(0)
        clean = rng.random((16, 16, 3)).astype(np.float32)
        noisy = clean + rng.normal(0, 15 / 255, clean.shape).astype(np.float32)
        data = _data()
        data.eval_pairs = [(clean, noisy)]
        last = run_training(state, data, str(tmp_path))

        assert state.step == 8 and state.epoch == 2
        assert os.path.exists(last)
        for fn in ("epoch_0001.npz", "epoch_0002.npz", "last.npz"):
            assert os.path.exists(tmp_path / "checkpoints" / fn)
        lines = (tmp_path / "logs" / "train.tsv").read_text().splitlines()
        fields = [ln.split("\t") for ln in lines]
        assert all(len(f) == 3 for f in fields)
        keys = {f[1] for f in fields}
        assert set(LOSS_KEYS) <= keys
        assert {"eval/akld", "eval/ks"} <= keys

    def test_max_steps_caps_run(self, tmp_path):
        state = _state()
        last = run_training(state, _data(), str(tmp_path), max_steps=3)
        assert state.step == 3
        assert os.path.exists(last)
        assert not os.path.exists(tmp_path / "checkpoints" / "epoch_0001.npz")

    def test_numeric_error_dumps_diagnostic_batch(self, tmp_path):
        state = _state()
        pool = CleanPool([np.full((24, 24, 3), np.nan, dtype=np.float32)])
        data = TrainData(clean_pool=pool,
                         spec_sampler=lambda rng: NoiseSpec("gaussian", sigma=15.0))
        with pytest.raises(NumericError):
            run_training(state, data, str(tmp_path))
        dump = tmp_path / "diagnostic_step1.npz"
        assert dump.exists()
        arrays = np.load(str(dump))
        assert set(arrays.files) == {"X", "Y", "Y_pos", "Y_ref"}

    def test_resume_via_run_training(self, tmp_path):
        state = _state(persist_queue=True)
        data = _data()
        run_training(state, data, str(tmp_path / "a"), max_steps=4)
        resumed = load_state(str(tmp_path / "a" / "checkpoints" / "last.npz"))
        assert resumed.step == 4 and resumed.epoch == 1
        run_training(resumed, data, str(tmp_path / "a"), max_steps=8)
        assert resumed.step == 8 and resumed.epoch == 2


class TestInitState:
    def test_key_starts_as_disc_copy(self):
        state = _state()
        for (n, kp), dp in zip(state.key_disc.named_parameters(),
                               state.disc.parameters()):
            assert torch.equal(kp, dp), n
            assert not kp.requires_grad

    def test_same_seed_same_init(self):
        a, b = _state(seed=7), _state(seed=7)
        for (n, pa), pb in zip(a.generator.named_parameters(),
                               b.generator.parameters()):
            assert torch.equal(pa, pb), n


class TestMetricsLog:
    def test_tsv_lines(self, tmp_path):
        path = str(tmp_path / "logs" / "m.tsv")
        log = MetricsLog(path)
        log.write(3, "loss_d", 1.25)
        log.write(4, "eval/akld", 0.5)
        log.close()
        lines = open(path).read().splitlines()
        assert lines == ["3\tloss_d\t1.25", "4\teval/akld\t0.5"]

    def test_append_mode(self, tmp_path):
        path = str(tmp_path / "m.tsv")
        for i in range(2):
            log = MetricsLog(path)
            log.write(i, "k", float(i))
            log.close()
        assert len(open(path).read().splitlines()) == 2

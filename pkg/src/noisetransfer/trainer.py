"""Alternating D/G optimization with momentum key encoder and negative queue.

Per-step order:

1. embed the reference with the key encoder (no gradient);
2. generate a fake noisy image;
3. update the discriminator on its total loss;
4. regenerate with fresh z and update the generator on its total loss;
5. momentum-update the key encoder;
6. enqueue the positives' key embeddings.

The key encoder is never touched by an optimizer. All randomness flows
through explicit generators (numpy for data, torch for z) so that two runs
with one seed produce bit-identical loss trajectories, and a resumed run
continues the uninterrupted trajectory when the queue is persisted.
"""

from __future__ import annotations

import copy
import math
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np
import torch

from . import checkpoint as ckpt
from .contrastive import EmbeddingQueue, momentum_update
from .data import CleanPool, PairedDataset, TrainingBatch, make_batch, to_torch
from .errors import ConfigError, NumericError
from .losses import (
    AblationFlags,
    LossWeights,
    ReconLossConfig,
    combine_losses,
    loss_fm,
    loss_gan_d,
    loss_gan_g,
    loss_noise_d,
    loss_noise_g,
    loss_recon,
)
from .models import (
    DiscriminatorConfig,
    GeneratorConfig,
    NoiseDiscriminator,
    NoiseGenerator,
)

LOSS_KEYS = ("noise_d", "gan_d", "loss_d", "noise_g", "gan_g",
             "fm_noise", "fm_gan", "recon", "loss_g")


@dataclass
class TrainerConfig:
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.99
    weight_decay: float = 1e-7
    steps_per_epoch: int = 2000
    epochs: int = 200
    batch: int = 32
    patch: int = 96
    seed: int = 0
    tau: float = 0.1
    momentum: float = 0.999
    queue_capacity: int = 4096
    real_fraction: float = 0.5
    augment: bool = True
    paired_ref: bool = True
    regime: str = "train"
    persist_queue: bool = False
    eval_draws: int = 10
    eval_every: int = 1  # epochs between held-out AKLD/KS evaluations
    weights: LossWeights = field(default_factory=LossWeights)
    recon: ReconLossConfig = field(default_factory=ReconLossConfig)
    ablation: AblationFlags = field(default_factory=AblationFlags)

    def validate(self) -> None:
        if self.lr <= 0 or self.tau <= 0:
            raise ConfigError("lr and tau must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0,1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if min(self.steps_per_epoch, self.epochs, self.batch, self.patch) < 1:
            raise ConfigError("steps_per_epoch, epochs, batch, patch must be positive")
        if not 0.0 <= self.momentum <= 1.0:
            raise ConfigError("momentum must be in [0,1]")
        if self.queue_capacity < 1:
            raise ConfigError("queue_capacity must be positive")
        self.weights.validate()
        self.recon.validate()

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["weights"] = self.weights.to_dict()
        d["recon"] = self.recon.to_dict()
        d["ablation"] = self.ablation.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainerConfig":
        d = dict(d)
        if isinstance(d.get("weights"), dict):
            d["weights"] = LossWeights(**d["weights"])
        if isinstance(d.get("recon"), dict):
            d["recon"] = ReconLossConfig(**d["recon"])
        if isinstance(d.get("ablation"), dict):
            d["ablation"] = AblationFlags(**d["ablation"])
        return cls(**d)


@dataclass
class TrainData:
    """Everything the loop draws batches and evaluations from."""

    real_ds: PairedDataset | None = None
    clean_pool: CleanPool | None = None
    spec_sampler: object = None  # callable(rng) -> NoiseSpec, overrides regime
    eval_pairs: list | None = None  # list of (clean, noisy) float arrays


@dataclass
class TrainState:
    cfg: TrainerConfig
    generator: NoiseGenerator
    disc: NoiseDiscriminator
    key_disc: NoiseDiscriminator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    queue: EmbeddingQueue
    np_rng: np.random.Generator
    z_rng: torch.Generator
    step: int = 0
    epoch: int = 0


def _make_optimizer(params, cfg: TrainerConfig) -> torch.optim.Adam:
    return torch.optim.Adam(
        params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay
    )


def init_state(
    cfg: TrainerConfig,
    gen_cfg: GeneratorConfig | None = None,
    disc_cfg: DiscriminatorConfig | None = None,
) -> TrainState:
    cfg.validate()
    torch.manual_seed(cfg.seed)
    generator = NoiseGenerator(gen_cfg)
    disc = NoiseDiscriminator(disc_cfg)
    key_disc = NoiseDiscriminator(disc_cfg)
    key_disc.load_state_dict(disc.state_dict())
    for p in key_disc.parameters():
        p.requires_grad_(False)
    return TrainState(
        cfg=cfg,
        generator=generator,
        disc=disc,
        key_disc=key_disc,
        opt_g=_make_optimizer(generator.parameters(), cfg),
        opt_d=_make_optimizer(disc.parameters(), cfg),
        queue=EmbeddingQueue(cfg.queue_capacity, disc.cfg.embed_dim),
        np_rng=np.random.default_rng(cfg.seed),
        z_rng=torch.Generator().manual_seed(cfg.seed + 1),
        step=0,
        epoch=0,
    )


def _check_finite(step: int, parts: dict) -> None:
    bad = {k: v for k, v in parts.items() if not math.isfinite(v)}
    if bad:
        detail = ", ".join(f"{k}={parts[k]:.6g}" for k in parts)
        raise NumericError(
            f"non-finite loss at step {step}: offending components "
            f"{sorted(bad)}; all components: {detail}"
        )


def train_step(state: TrainState, batch: TrainingBatch) -> dict[str, float]:
    """One alternating update; mutates state in place, returns the loss record."""
    cfg = state.cfg
    t = to_torch(batch)
    x, y, y_pos, y_ref = t["x"], t["y"], t["y_pos"], t["y_ref"]

    with torch.no_grad():
        e = state.key_disc.embed_noise(y_ref)[0]
        k_pos = state.key_disc.embed_noise(y_pos)[0]
    negatives = state.queue.negatives()

    # ---- discriminator phase (fake detached) ----
    with torch.no_grad():
        fake_d = state.generator(x, e, rng=state.z_rng)
    state.opt_d.zero_grad(set_to_none=True)
    q_real, _ = state.disc.embed_noise(y)
    l_noise_d = loss_noise_d(q_real, k_pos, negatives, cfg.tau)
    out_real = state.disc.score_gan(x, e, y)
    out_fake_d = state.disc.score_gan(x, e, fake_d)
    l_gan_d = loss_gan_d(out_real.gan_scores, out_fake_d.gan_scores)
    loss_d = l_gan_d if cfg.ablation.no_noise_d else l_noise_d + l_gan_d
    loss_d.backward()
    state.opt_d.step()

    # ---- generator phase (fresh z, current D, targets without gradient) ----
    state.opt_g.zero_grad(set_to_none=True)
    fake_g = state.generator(x, e, rng=state.z_rng)
    with torch.no_grad():
        _, m_noise_real = state.disc.embed_noise(y)
        out_real_g = state.disc.score_gan(x, e, y)
    q_fake, m_noise_fake = state.disc.embed_noise(fake_g)
    out_fake_g = state.disc.score_gan(x, e, fake_g)
    l_noise_g = loss_noise_g(q_fake, k_pos, negatives, cfg.tau)
    l_gan_g = loss_gan_g(out_fake_g.gan_scores)
    l_fm_noise = loss_fm(m_noise_fake, m_noise_real)
    l_fm_gan = loss_fm(out_fake_g.m_gan, out_real_g.m_gan)
    l_recon = loss_recon(y, fake_g, cfg.recon)
    parts = {
        "noise_d": l_noise_d,
        "gan_d": l_gan_d,
        "noise_g": l_noise_g,
        "gan_g": l_gan_g,
        "fm_noise": l_fm_noise,
        "fm_gan": l_fm_gan,
        "recon": l_recon,
    }
    _, loss_g = combine_losses(parts, cfg.weights, cfg.ablation)
    # discriminator gradients produced here are discarded at its next zero_grad
    loss_g.backward()
    state.opt_g.step()

    # ---- key-encoder maintenance ----
    momentum_update(state.disc, state.key_disc, cfg.momentum)
    state.queue.push(k_pos)

    state.step += 1
    record = {k: float(v.detach()) for k, v in parts.items()}
    record["loss_d"] = float(loss_d.detach())
    record["loss_g"] = float(loss_g.detach())
    _check_finite(state.step, record)
    return record


def state_arrays(state: TrainState) -> tuple[dict, dict[str, np.ndarray]]:
    """Meta dict plus named arrays for the checkpoint archive."""
    cfg = state.cfg
    arrays: dict[str, np.ndarray] = {}
    arrays.update(ckpt.arrays_from_state_dict(state.generator.state_dict(), "gen"))
    arrays.update(ckpt.arrays_from_state_dict(state.disc.state_dict(), "disc"))
    arrays.update(ckpt.arrays_from_state_dict(state.key_disc.state_dict(), "key"))
    og_arrays, og_meta = ckpt.optimizer_arrays(state.opt_g, "opt_g")
    od_arrays, od_meta = ckpt.optimizer_arrays(state.opt_d, "opt_d")
    arrays.update(og_arrays)
    arrays.update(od_arrays)
    arrays["rng/z"] = ckpt.torch_rng_array(state.z_rng)
    arrays["rng/torch_global"] = ckpt.torch_rng_array()
    meta = {
        "step": state.step,
        "epoch": state.epoch,
        "trainer": cfg.to_dict(),
        "generator": state.generator.cfg.to_dict(),
        "discriminator": state.disc.cfg.to_dict(),
        "opt_g": og_meta,
        "opt_d": od_meta,
        "np_rng": ckpt.np_rng_meta(state.np_rng),
        "queue_persisted": bool(cfg.persist_queue),
    }
    if cfg.persist_queue:
        qstate = state.queue.state()
        arrays["queue/buffer"] = qstate["buffer"].numpy()
        meta["queue"] = {
            "size": qstate["size"],
            "cursor": qstate["cursor"],
            "capacity": qstate["capacity"],
        }
    return meta, arrays


def save_state(state: TrainState, path: str) -> None:
    meta, arrays = state_arrays(state)
    ckpt.save_archive(path, meta, arrays)


def load_state(path: str) -> TrainState:
    meta, arrays = ckpt.load_archive(path)
    cfg = TrainerConfig.from_dict(meta["trainer"])
    gen_cfg = GeneratorConfig(**meta["generator"])
    disc_cfg = DiscriminatorConfig(**meta["discriminator"])
    generator = NoiseGenerator(gen_cfg)
    disc = NoiseDiscriminator(disc_cfg)
    key_disc = NoiseDiscriminator(disc_cfg)
    generator.load_state_dict(ckpt.state_dict_from_arrays(arrays, "gen"))
    disc.load_state_dict(ckpt.state_dict_from_arrays(arrays, "disc"))
    key_disc.load_state_dict(ckpt.state_dict_from_arrays(arrays, "key"))
    for p in key_disc.parameters():
        p.requires_grad_(False)
    opt_g = _make_optimizer(generator.parameters(), cfg)
    opt_d = _make_optimizer(disc.parameters(), cfg)
    ckpt.load_optimizer(opt_g, arrays, "opt_g", meta["opt_g"])
    ckpt.load_optimizer(opt_d, arrays, "opt_d", meta["opt_d"])
    queue = EmbeddingQueue(cfg.queue_capacity, disc.cfg.embed_dim)
    if meta.get("queue_persisted") and "queue" in meta:
        queue = EmbeddingQueue.from_state(
            {"buffer": torch.from_numpy(arrays["queue/buffer"].copy()), **meta["queue"]}
        )
    z_rng = torch.Generator()
    ckpt.restore_torch_rng(arrays["rng/z"], z_rng)
    ckpt.restore_torch_rng(arrays["rng/torch_global"])
    return TrainState(
        cfg=cfg,
        generator=generator,
        disc=disc,
        key_disc=key_disc,
        opt_g=opt_g,
        opt_d=opt_d,
        queue=queue,
        np_rng=ckpt.np_rng_from_meta(meta["np_rng"]),
        z_rng=z_rng,
        step=int(meta["step"]),
        epoch=int(meta["epoch"]),
    )


class MetricsLog:
    """Line-oriented TSV log: step <TAB> key <TAB> value."""

    def __init__(self, path: str):
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        self.path = path
        self._fh = open(path, "a", encoding="utf-8")

    def write(self, step: int, key: str, value: float) -> None:
        self._fh.write(f"{step}\t{key}\t{value:.10g}\n")

    def flush(self) -> None:
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def _next_batch(state: TrainState, data: TrainData) -> TrainingBatch:
    cfg = state.cfg
    return make_batch(
        data.real_ds,
        data.clean_pool,
        cfg.batch,
        cfg.patch,
        state.np_rng,
        real_fraction=cfg.real_fraction if data.real_ds is not None else 0.0,
        augment=cfg.augment,
        paired_ref=cfg.paired_ref,
        spec_sampler=data.spec_sampler,
        regime=cfg.regime,
    )


def run_training(
    state: TrainState,
    data: TrainData,
    out_dir: str,
    max_steps: int | None = None,
    progress: bool = False,
) -> str:
    """Run (or continue) training; returns the path of the final checkpoint."""
    cfg = state.cfg
    ckpt_dir = os.path.join(out_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    log = MetricsLog(os.path.join(out_dir, "logs", "train.tsv"))
    total_steps = cfg.steps_per_epoch * cfg.epochs
    if max_steps is not None:
        total_steps = min(total_steps, max_steps)
    last_path = os.path.join(ckpt_dir, "last.npz")
    t0 = time.time()
    try:
        while state.step < total_steps:
            batch = _next_batch(state, data)
            failing_step = state.step + 1  # train_step may increment before raising
            try:
                record = train_step(state, batch)
            except NumericError:
                dump = os.path.join(out_dir, f"diagnostic_step{failing_step}.npz")
                np.savez(dump, X=batch.X, Y=batch.Y, Y_pos=batch.Y_pos, Y_ref=batch.Y_ref)
                raise
            for key in LOSS_KEYS:
                log.write(state.step, key, record[key])
            if progress and state.step % 50 == 0:
                rate = state.step / max(time.time() - t0, 1e-9)
                print(f"step {state.step}/{total_steps} loss_d={record['loss_d']:.4f} "
                      f"loss_g={record['loss_g']:.4f} ({rate:.1f} it/s)", flush=True)
            if state.step % cfg.steps_per_epoch == 0:
                state.epoch += 1
                save_state(state, os.path.join(ckpt_dir, f"epoch_{state.epoch:04d}.npz"))
                save_state(state, last_path)
                if data.eval_pairs and state.epoch % cfg.eval_every == 0:
                    from .evaluation import evaluate_generation

                    res = evaluate_generation(
                        state.generator,
                        state.key_disc,
                        data.eval_pairs,
                        draws=cfg.eval_draws,
                        seed=cfg.seed * 1000003 + state.epoch,
                    )
                    log.write(state.step, "eval/akld", res["akld"])
                    log.write(state.step, "eval/ks", res["ks"])
                log.flush()
        save_state(state, last_path)
    finally:
        log.close()
    return last_path

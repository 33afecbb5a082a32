"""Downstream validation: train a small denoiser on generated noisy pairs.

The interesting comparison is between training-data regimes (generated noise
vs real or oracle noise), not absolute restoration quality, so the network
is a deliberately small residual CNN. Pairs carry provenance tags; the
harness refuses ground-truth noisy pairs in generative-only mode.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import checkpoint as ckpt
from .errors import ConfigError, DataError
from .metrics import psnr, ssim
from .models import DenoiserNet

GENERATED = "generated"
GROUND_TRUTH = "ground_truth"
ORACLE = "oracle"


@dataclass
class DenoiserConfig:
    layers: int = 8
    channels: int = 32
    residual: bool = True
    lr: float = 1e-3
    epochs: int = 5
    batch: int = 16
    patch: int = 32
    seed: int = 0

    def validate(self) -> None:
        if self.layers < 2:
            raise ConfigError("denoiser layers must be >= 2")
        if min(self.channels, self.epochs + 1, self.batch, self.patch) < 1:
            raise ConfigError("denoiser sizes must be positive")
        if self.lr <= 0:
            raise ConfigError("denoiser lr must be > 0")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class DenoisePair:
    clean: np.ndarray
    noisy: np.ndarray
    provenance: dict = field(default_factory=dict)


def make_denoise_pairs(
    synthesize,
    clean_pool,
    reference_pool: list[np.ndarray],
    n: int,
    seed: int = 0,
    patch: int = 64,
    source: str = GENERATED,
) -> list[DenoisePair]:
    """Build n (clean, synthesized-noisy) pairs with recorded provenance.

    `synthesize(clean, reference, seed) -> noisy` abstracts the generator so
    the harness also accepts oracle noise sources in controlled experiments.
    Each pair records its reference index and per-pair seed.
    """
    if n < 0:
        raise ConfigError(f"pair count must be >= 0, got {n}")
    if n > 0 and not reference_pool:
        raise ConfigError("reference pool is empty")
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        clean = clean_pool.sample_patch(patch, rng)
        ref_idx = int(rng.integers(0, len(reference_pool)))
        pair_seed = int(rng.integers(0, 2**31 - 1))
        noisy = synthesize(clean, reference_pool[ref_idx], pair_seed)
        if noisy.shape != clean.shape:
            raise DataError(
                f"synthesized pair {i} has shape {noisy.shape}, clean is {clean.shape}"
            )
        pairs.append(
            DenoisePair(
                clean=clean,
                noisy=np.asarray(noisy, dtype=np.float32),
                provenance={"source": source, "reference": ref_idx, "seed": pair_seed},
            )
        )
    return pairs


def _stack(pairs: list[DenoisePair], idx: np.ndarray) -> tuple[torch.Tensor, torch.Tensor]:
    clean = np.stack([pairs[i].clean for i in idx]).transpose(0, 3, 1, 2)
    noisy = np.stack([pairs[i].noisy for i in idx]).transpose(0, 3, 1, 2)
    return (
        torch.from_numpy(np.ascontiguousarray(clean)).float(),
        torch.from_numpy(np.ascontiguousarray(noisy)).float(),
    )


def denoise_image(net: DenoiserNet, noisy: np.ndarray) -> np.ndarray:
    was_training = net.training
    net.eval()
    try:
        with torch.no_grad():
            t = torch.from_numpy(
                np.ascontiguousarray(noisy.transpose(2, 0, 1))
            ).float()[None]
            out = net(t)[0].permute(1, 2, 0).numpy()
    finally:
        net.train(was_training)
    return np.clip(out, 0.0, 1.0)


def eval_denoiser(net: DenoiserNet, pairs: list[DenoisePair]) -> dict:
    """Mean PSNR/SSIM of the denoised outputs against clean ground truth."""
    if not pairs:
        raise ConfigError("evaluation set is empty")
    psnrs, ssims = [], []
    for pair in pairs:
        out = denoise_image(net, pair.noisy)
        psnrs.append(psnr(pair.clean, out))
        ssims.append(ssim(pair.clean, out))
    return {"psnr": float(np.mean(psnrs)), "ssim": float(np.mean(ssims))}


def train_denoiser(
    pairs: list[DenoisePair],
    cfg: DenoiserConfig | None = None,
    val_pairs: list[DenoisePair] | None = None,
    generative_only: bool = False,
    time_budget_s: float | None = None,
) -> tuple[DenoiserNet, dict]:
    """L1-train the small denoiser; returns (net, history).

    History holds per-epoch mean train loss and validation PSNR. In
    generative-only mode any pair whose provenance marks it as ground-truth
    noisy data is rejected, so the downstream model provably never saw real
    noisy images.
    """
    cfg = cfg or DenoiserConfig()
    cfg.validate()
    if not pairs:
        raise ConfigError("training pair list is empty")
    if generative_only:
        for i, pair in enumerate(pairs):
            if pair.provenance.get("source", GROUND_TRUTH) == GROUND_TRUTH:
                raise DataError(
                    f"pair {i} is ground-truth noisy data, forbidden in generative-only mode"
                )
    torch.manual_seed(cfg.seed)
    net = DenoiserNet(channels=cfg.channels, layers=cfg.layers, residual=cfg.residual)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    history = {"train_loss": [], "val_psnr": []}
    start = time.time()
    for _epoch in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        losses = []
        for lo in range(0, len(order), cfg.batch):
            idx = order[lo : lo + cfg.batch]
            clean, noisy = _stack(pairs, idx)
            opt.zero_grad(set_to_none=True)
            loss = F.l1_loss(net(noisy), clean)
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        history["train_loss"].append(float(np.mean(losses)))
        if val_pairs:
            history["val_psnr"].append(eval_denoiser(net, val_pairs)["psnr"])
        if time_budget_s is not None and time.time() - start > time_budget_s:
            break
    return net, history


def save_denoiser(net: DenoiserNet, cfg: DenoiserConfig, path: str) -> None:
    arrays = ckpt.arrays_from_state_dict(net.state_dict(), "denoiser")
    ckpt.save_archive(path, {"denoiser": cfg.to_dict()}, arrays)


def load_denoiser(path: str) -> tuple[DenoiserNet, DenoiserConfig]:
    meta, arrays = ckpt.load_archive(path)
    cfg = DenoiserConfig(**meta["denoiser"])
    net = DenoiserNet(channels=cfg.channels, layers=cfg.layers, residual=cfg.residual)
    net.load_state_dict(ckpt.state_dict_from_arrays(arrays, "denoiser"))
    return net, cfg

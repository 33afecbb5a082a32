"""Training objectives: contrastive, adversarial, feature-matching, recon.

Conventions used throughout:

* the expectation in adversarial losses averages over all score-map elements
  of one level, then per-level losses are summed over the three levels;
* feature-matching losses are the mean absolute difference over all feature
  elements pooled across the levels, so a constant offset c yields exactly c;
* log arguments are clamped below at 1e-8.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .contrastive import info_nce_batch
from .errors import ConfigError

LOG_EPS = 1e-8


@dataclass
class LossWeights:
    w_noise_fm: float = 100.0
    w_gan_fm: float = 100.0
    w_recon: float = 100.0

    def validate(self) -> None:
        if min(self.w_noise_fm, self.w_gan_fm, self.w_recon) < 0:
            raise ConfigError("loss weights must be >= 0")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ReconLossConfig:
    kernel_size: int = 11
    sigma: float = 3.0

    def validate(self) -> None:
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError("recon kernel_size must be odd and positive")
        if self.sigma <= 0:
            raise ConfigError("recon sigma must be > 0")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class AblationFlags:
    """Switches matching the ablation rows: drop L_noise^D, or drop both
    L_noise^G and the noise feature-matching term."""

    no_noise_d: bool = False
    no_noise_g_and_fm: bool = False

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def loss_noise_d(
    q: torch.Tensor,
    k_pos: torch.Tensor,
    negatives: torch.Tensor | None,
    tau: float = 0.1,
) -> torch.Tensor:
    """Contrastive loss of the online noise head on real noisy queries."""
    return info_nce_batch(q, k_pos, negatives, tau)


def loss_noise_g(
    q_fake: torch.Tensor,
    k_pos: torch.Tensor,
    negatives: torch.Tensor | None,
    tau: float = 0.1,
) -> torch.Tensor:
    """Same form as loss_noise_d with generated images as queries."""
    return info_nce_batch(q_fake, k_pos, negatives, tau)


def loss_fm(feats_a: list[torch.Tensor], feats_b: list[torch.Tensor]) -> torch.Tensor:
    """Mean |a - b| over every feature element, pooled across levels."""
    if len(feats_a) != len(feats_b) or not feats_a:
        raise ConfigError("feature lists must be non-empty and same length")
    total = None
    count = 0
    for a, b in zip(feats_a, feats_b):
        if a.shape != b.shape:
            raise ConfigError(f"feature shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
        diff = (a - b).abs().sum()
        total = diff if total is None else total + diff
        count += a.numel()
    return total / count


def loss_gan_d(
    scores_real: list[torch.Tensor], scores_fake: list[torch.Tensor]
) -> torch.Tensor:
    """-E[log D(R)] - E[log(1 - D(F))], per level, summed over levels."""
    if len(scores_real) != len(scores_fake) or not scores_real:
        raise ConfigError("score lists must be non-empty and same length")
    total = None
    for r, f in zip(scores_real, scores_fake):
        term = -torch.log(r.clamp(min=LOG_EPS)).mean()
        term = term - torch.log((1.0 - f).clamp(min=LOG_EPS)).mean()
        total = term if total is None else total + term
    return total


def loss_gan_g(scores_fake: list[torch.Tensor]) -> torch.Tensor:
    """Non-saturating generator loss -E[log D(F)], summed over levels."""
    if not scores_fake:
        raise ConfigError("score list must be non-empty")
    total = None
    for f in scores_fake:
        term = -torch.log(f.clamp(min=LOG_EPS)).mean()
        total = term if total is None else total + term
    return total


def gaussian_kernel2d(
    kernel_size: int = 11, sigma: float = 3.0, dtype: torch.dtype = torch.float32
) -> torch.Tensor:
    """Normalized 2-d Gaussian kernel (sums to 1), computed in float64."""
    coords = torch.arange(kernel_size, dtype=torch.float64) - (kernel_size - 1) / 2.0
    g = torch.exp(-(coords**2) / (2.0 * sigma * sigma))
    kernel = torch.outer(g, g)
    return (kernel / kernel.sum()).to(dtype)


def gaussian_blur(img: torch.Tensor, cfg: ReconLossConfig | None = None) -> torch.Tensor:
    """Channel-wise Gaussian filter with reflect padding, NCHW in and out."""
    cfg = cfg or ReconLossConfig()
    cfg.validate()
    if img.ndim != 4:
        raise ConfigError(f"expected NCHW, got shape {tuple(img.shape)}")
    c = img.shape[1]
    kernel = gaussian_kernel2d(cfg.kernel_size, cfg.sigma, dtype=img.dtype).to(img.device)
    weight = kernel.expand(c, 1, cfg.kernel_size, cfg.kernel_size)
    pad = (cfg.kernel_size - 1) // 2
    padded = F.pad(img, (pad, pad, pad, pad), mode="reflect")
    return F.conv2d(padded, weight, groups=c)


def loss_recon(
    y: torch.Tensor, y_fake: torch.Tensor, cfg: ReconLossConfig | None = None
) -> torch.Tensor:
    """Mean absolute difference of the Gaussian-filtered images."""
    if y.shape != y_fake.shape:
        raise ConfigError(f"shape mismatch {tuple(y.shape)} vs {tuple(y_fake.shape)}")
    cfg = cfg or ReconLossConfig()
    return (gaussian_blur(y, cfg) - gaussian_blur(y_fake, cfg)).abs().mean()


def combine_losses(
    parts: dict[str, torch.Tensor],
    weights: LossWeights | None = None,
    ablation: AblationFlags | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Weighted totals (L_D, L_G) from named component losses.

    Expects keys noise_d, gan_d, noise_g, gan_g, fm_noise, fm_gan, recon.
    """
    w = weights or LossWeights()
    w.validate()
    ab = ablation or AblationFlags()
    loss_d = parts["gan_d"] if ab.no_noise_d else parts["noise_d"] + parts["gan_d"]
    loss_g = parts["gan_g"] + w.w_gan_fm * parts["fm_gan"] + w.w_recon * parts["recon"]
    if not ab.no_noise_g_and_fm:
        loss_g = loss_g + parts["noise_g"] + w.w_noise_fm * parts["fm_noise"]
    return loss_d, loss_g


def total_losses(
    generator,
    disc,
    key_disc,
    x: torch.Tensor,
    y: torch.Tensor,
    y_pos: torch.Tensor,
    y_ref: torch.Tensor,
    negatives: torch.Tensor | None = None,
    weights: LossWeights | None = None,
    tau: float = 0.1,
    recon_cfg: ReconLossConfig | None = None,
    ablation: AblationFlags | None = None,
    z: list[torch.Tensor] | None = None,
    rng: torch.Generator | None = None,
    detach_fake_for_d: bool = True,
) -> dict[str, torch.Tensor]:
    """All loss components plus totals for one batch in a single graph.

    The trainer performs the D and G updates in separate phases; this joint
    evaluation serves tests, gradient checks and loss logging. Keys `loss_d`
    and `loss_g` carry gradients for the respective networks. With
    `detach_fake_for_d` the discriminator's fake scores for L_D are computed
    on a detached copy of the generated image, matching the D update phase.
    """
    with torch.no_grad():
        e = key_disc.embed_noise(y_ref)[0]
        k_pos = key_disc.embed_noise(y_pos)[0]
    fake = generator(x, e, z=z, rng=rng)

    q_real, m_noise_real = disc.embed_noise(y)
    q_fake, m_noise_fake = disc.embed_noise(fake)
    out_real = disc.score_gan(x, e, y)
    out_fake = disc.score_gan(x, e, fake)
    if detach_fake_for_d:
        out_fake_d = disc.score_gan(x, e, fake.detach())
        fake_scores_for_d = out_fake_d.gan_scores
    else:
        fake_scores_for_d = out_fake.gan_scores

    parts = {
        "noise_d": loss_noise_d(q_real, k_pos, negatives, tau),
        "noise_g": loss_noise_g(q_fake, k_pos, negatives, tau),
        "gan_d": loss_gan_d(out_real.gan_scores, fake_scores_for_d),
        "gan_g": loss_gan_g(out_fake.gan_scores),
        "fm_noise": loss_fm(m_noise_fake, [m.detach() for m in m_noise_real]),
        "fm_gan": loss_fm(out_fake.m_gan, [m.detach() for m in out_real.m_gan]),
        "recon": loss_recon(y, fake, recon_cfg),
    }
    loss_d, loss_g = combine_losses(parts, weights, ablation)
    parts["loss_d"] = loss_d
    parts["loss_g"] = loss_g
    return parts

"""Noise-distribution metrics (AKLD, KS) and image-quality metrics (PSNR, SSIM).

All functions are pure numpy over arrays of reals in [0,1] (images) or noise
arrays in 8-bit pixel units. Noise histograms use 256 bins evenly covering
[-256, 256]; out-of-range values are clipped into the boundary bins so mass
is conserved.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate

from .errors import NoiseTransferError

HIST_BINS = 256
HIST_RANGE = (-256.0, 256.0)
_KL_EPS = 1e-12


def noise_of(noisy: np.ndarray, clean: np.ndarray) -> np.ndarray:
    """Noise residual in 8-bit pixel units: (noisy - clean) * 255."""
    noisy = np.asarray(noisy, dtype=np.float64)
    clean = np.asarray(clean, dtype=np.float64)
    if noisy.shape != clean.shape:
        raise NoiseTransferError(f"shape mismatch: noisy {noisy.shape} vs clean {clean.shape}")
    return (noisy - clean) * 255.0


def noise_histogram(noise: np.ndarray) -> np.ndarray:
    """256-bin counts of a noise array over [-256, 256], boundary-clipped."""
    flat = np.clip(np.asarray(noise, dtype=np.float64).ravel(), *HIST_RANGE)
    counts, _ = np.histogram(flat, bins=HIST_BINS, range=HIST_RANGE)
    return counts


def _smoothed_probs(counts: np.ndarray) -> np.ndarray:
    total = counts.sum()
    if total == 0:
        raise NoiseTransferError("empty histogram: no noise samples")
    p = counts / total
    return (p + _KL_EPS) / (1.0 + HIST_BINS * _KL_EPS)


def kl_divergence(counts_p: np.ndarray, counts_q: np.ndarray) -> float:
    """KL(P || Q) between epsilon-smoothed normalized histograms."""
    p = _smoothed_probs(np.asarray(counts_p, dtype=np.float64))
    q = _smoothed_probs(np.asarray(counts_q, dtype=np.float64))
    return float(np.sum(p * np.log(p / q)))


def akld(real_noisy: np.ndarray, fake_noisy_samples: list[np.ndarray], clean: np.ndarray) -> float:
    """Average KL divergence between real and generated noise for one image.

    For each generated sample, KL(P_real || P_fake) is computed between the
    256-bin histograms of (real_noisy - clean) and (fake - clean); the
    divergences are averaged over the samples. Averaging over an evaluation
    set is the caller's job.
    """
    if not fake_noisy_samples:
        raise NoiseTransferError("akld requires at least one generated sample")
    real_counts = noise_histogram(noise_of(real_noisy, clean))
    kls = [
        kl_divergence(real_counts, noise_histogram(noise_of(fake, clean)))
        for fake in fake_noisy_samples
    ]
    return float(np.mean(kls))


def ks_value(
    real_noisy_set: list[np.ndarray],
    fake_noisy_set: list[np.ndarray],
    clean_set: list[np.ndarray],
    fake_clean_set: list[np.ndarray] | None = None,
) -> float:
    """Kolmogorov-Smirnov value between pooled real and generated noise.

    Both sets are reduced to pooled 256-bin histograms; the result is the
    maximum absolute difference between the two empirical CDFs. Symmetric in
    the two noise sets.
    """
    if fake_clean_set is None:
        fake_clean_set = clean_set
    real_counts = np.zeros(HIST_BINS, dtype=np.int64)
    for noisy, clean in zip(real_noisy_set, clean_set, strict=True):
        real_counts += noise_histogram(noise_of(noisy, clean))
    fake_counts = np.zeros(HIST_BINS, dtype=np.int64)
    for noisy, clean in zip(fake_noisy_set, fake_clean_set, strict=True):
        fake_counts += noise_histogram(noise_of(noisy, clean))
    if real_counts.sum() == 0 or fake_counts.sum() == 0:
        raise NoiseTransferError("ks_value requires non-empty noise sets")
    cdf_real = np.cumsum(real_counts) / real_counts.sum()
    cdf_fake = np.cumsum(fake_counts) / fake_counts.sum()
    return float(np.max(np.abs(cdf_real - cdf_fake)))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for [0,1] images, capped at 100 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise NoiseTransferError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return 100.0
    return min(100.0, 10.0 * np.log10(1.0 / mse))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(a: np.ndarray, b: np.ndarray, window_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean structural similarity with the standard 11x11 Gaussian window.

    Local statistics are Gaussian-weighted moments (no sample-covariance
    correction); the boundary band where the window would overhang is
    cropped. Multi-channel images are averaged over channels.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise NoiseTransferError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    pad = (window_size - 1) // 2
    if min(a.shape[0], a.shape[1]) < window_size:
        raise NoiseTransferError(f"image smaller than the {window_size}x{window_size} ssim window")
    kernel = _gaussian_window(window_size, sigma)
    c1 = k1**2
    c2 = k2**2
    values = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mu_x = correlate(x, kernel, mode="nearest")
        mu_y = correlate(y, kernel, mode="nearest")
        mu_xx = correlate(x * x, kernel, mode="nearest")
        mu_yy = correlate(y * y, kernel, mode="nearest")
        mu_xy = correlate(x * y, kernel, mode="nearest")
        var_x = mu_xx - mu_x**2
        var_y = mu_yy - mu_y**2
        cov = mu_xy - mu_x * mu_y
        ssim_map = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
            (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
        )
        values.append(np.mean(ssim_map[pad:-pad, pad:-pad]))
    return float(np.mean(values))

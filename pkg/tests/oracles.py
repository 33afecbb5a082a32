"""Independent reference implementations used to verify the package.

Everything here is written deliberately naively (plain loops, double
precision, no stability tricks, different library calls than the package)
so that agreement with the package is meaningful evidence of correctness.
"""

from __future__ import annotations

import math

import numpy as np


# ---------------------------------------------------------------- contrastive
def cosine_oracle(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))


def info_nce_oracle(q, k_pos, negatives, tau: float) -> float:
    """Direct evaluation of the contrastive loss, no max-subtraction."""
    pos = math.exp(cosine_oracle(q, k_pos) / tau)
    denom = pos
    if negatives is not None:
        for neg in negatives:
            denom += math.exp(cosine_oracle(q, neg) / tau)
    return -math.log(pos / denom)


# -------------------------------------------------------------------- metrics
HIST_LO, HIST_HI, HIST_N = -256.0, 256.0, 256


def histogram_oracle(values: np.ndarray) -> np.ndarray:
    """Manual fixed-bin counting, boundary-clipped, no np.histogram."""
    width = (HIST_HI - HIST_LO) / HIST_N
    counts = np.zeros(HIST_N, dtype=np.int64)
    for v in np.asarray(values, dtype=np.float64).ravel():
        v = min(max(v, HIST_LO), HIST_HI)
        idx = int((v - HIST_LO) / width)
        if idx == HIST_N:  # right boundary belongs to the last bin
            idx -= 1
        counts[idx] += 1
    return counts


def kl_oracle(counts_p: np.ndarray, counts_q: np.ndarray, eps: float = 1e-12) -> float:
    p = counts_p / counts_p.sum()
    q = counts_q / counts_q.sum()
    p = (p + eps) / (1.0 + HIST_N * eps)
    q = (q + eps) / (1.0 + HIST_N * eps)
    total = 0.0
    for pi, qi in zip(p, q):
        total += pi * math.log(pi / qi)
    return total


def akld_oracle(real_noisy, fakes, clean) -> float:
    real = histogram_oracle((real_noisy - clean) * 255.0)
    kls = [
        kl_oracle(real, histogram_oracle((fake - clean) * 255.0)) for fake in fakes
    ]
    return float(np.mean(kls))


def psnr_oracle(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    if mse == 0:
        return 100.0
    return min(100.0, 10.0 * math.log10(1.0 / mse))


# --------------------------------------------------------------------- losses
def gan_d_oracle(scores_real, scores_fake, eps: float = 1e-8) -> float:
    total = 0.0
    for r, f in zip(scores_real, scores_fake):
        r = np.asarray(r, dtype=np.float64).ravel()
        f = np.asarray(f, dtype=np.float64).ravel()
        term = -np.mean([math.log(max(v, eps)) for v in r])
        term += -np.mean([math.log(max(1.0 - v, eps)) for v in f])
        total += term
    return float(total)


def gan_g_oracle(scores_fake, eps: float = 1e-8) -> float:
    total = 0.0
    for f in scores_fake:
        f = np.asarray(f, dtype=np.float64).ravel()
        total += -np.mean([math.log(max(v, eps)) for v in f])
    return float(total)


def fm_oracle(feats_a, feats_b) -> float:
    num, den = 0.0, 0
    for a, b in zip(feats_a, feats_b):
        a = np.asarray(a, dtype=np.float64).ravel()
        b = np.asarray(b, dtype=np.float64).ravel()
        num += np.abs(a - b).sum()
        den += a.size
    return num / den


def blur_oracle(img_hw: np.ndarray, kernel_size: int = 11, sigma: float = 3.0) -> np.ndarray:
    """Reflect-padded Gaussian filtering of one channel via scipy."""
    from scipy.ndimage import correlate

    coords = np.arange(kernel_size, dtype=np.float64) - (kernel_size - 1) / 2
    g = np.exp(-(coords**2) / (2 * sigma * sigma))
    k2 = np.outer(g, g)
    k2 /= k2.sum()
    return correlate(np.asarray(img_hw, dtype=np.float64), k2, mode="mirror")


# ------------------------------------------------------------------ gradients
def finite_difference_grads(
    loss_fn,
    tensors,
    coords,
    h: float = 1e-3,
):
    """Central finite differences of loss_fn() w.r.t. chosen coordinates.

    `tensors` are torch parameter tensors mutated in place (double precision
    recommended); `coords` is a list of (tensor_index, flat_index).
    """
    grads = []
    for t_idx, flat in coords:
        t = tensors[t_idx]
        flat = int(flat)
        orig = t.view(-1)[flat].item()
        t.view(-1)[flat] = orig + h
        up = float(loss_fn())
        t.view(-1)[flat] = orig - h
        down = float(loss_fn())
        t.view(-1)[flat] = orig
        grads.append((up - down) / (2.0 * h))
    return grads


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)

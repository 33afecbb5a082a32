"""Held-out evaluation of the generator: AKLD/KS reports and plots.

All forwards here run with modules switched to eval mode under no_grad, so
evaluating never perturbs training state (notably the spectral-norm power
iteration buffers); the prior training/eval mode is restored afterwards.
"""

from __future__ import annotations

import contextlib
import os

import numpy as np
import torch

from .data import PairedDataset, load_image
from .errors import ConfigError, DataError
from .metrics import HIST_BINS, HIST_RANGE, akld, ks_value, noise_histogram, noise_of


@contextlib.contextmanager
def inference_mode(*modules: torch.nn.Module):
    """Temporarily put modules in eval mode inside a no_grad block."""
    prior = [m.training for m in modules]
    for m in modules:
        m.eval()
    try:
        with torch.no_grad():
            yield
    finally:
        for m, was_training in zip(modules, prior):
            m.train(was_training)


def center_crop_to_multiple(img: np.ndarray, multiple: int) -> np.ndarray:
    """Largest centered crop whose height and width divide by `multiple`."""
    h, w = img.shape[:2]
    nh, nw = (h // multiple) * multiple, (w // multiple) * multiple
    if nh == 0 or nw == 0:
        raise DataError(f"image {h}x{w} smaller than required multiple {multiple}")
    top, left = (h - nh) // 2, (w - nw) // 2
    return img[top : top + nh, left : left + nw]


def load_eval_records(
    manifest_path: str, multiple: int = 8, limit: int | None = None
) -> list[tuple[np.ndarray, np.ndarray]]:
    """(clean, noisy) pairs from a manifest, center-cropped for the generator."""
    ds = PairedDataset.from_manifest(manifest_path)
    pairs = []
    for idx in range(len(ds)):
        if limit is not None and idx >= limit:
            break
        clean, noisy = ds.load_pair(idx)
        pairs.append(
            (center_crop_to_multiple(clean, multiple), center_crop_to_multiple(noisy, multiple))
        )
    return pairs


def _to_tensor(img: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))[None].float()


def _to_image(t: torch.Tensor) -> np.ndarray:
    return t[0].permute(1, 2, 0).cpu().numpy()


def generate_noisy(
    generator: torch.nn.Module,
    key_disc: torch.nn.Module,
    clean: np.ndarray,
    reference: np.ndarray,
    draws: int,
    seed: int = 0,
) -> list[np.ndarray]:
    """Noisy variants of one clean image, conditioned on a reference's noise.

    Outputs are float H×W×C and are not clipped to [0,1].
    """
    if draws < 1:
        raise ConfigError(f"draws must be >= 1, got {draws}")
    z_rng = torch.Generator().manual_seed(seed)
    with inference_mode(generator, key_disc):
        e = key_disc.embed_noise(_to_tensor(reference))[0]
        x = _to_tensor(clean)
        return [_to_image(generator(x, e, rng=z_rng)) for _ in range(draws)]


def evaluate_generation(
    generator: torch.nn.Module,
    key_disc: torch.nn.Module,
    eval_pairs: list[tuple[np.ndarray, np.ndarray]],
    draws: int = 50,
    seed: int = 0,
) -> dict:
    """AKLD (mean over images, `draws` fakes each) and pooled KS for a set.

    Each pair is (clean, real_noisy); the real noisy image doubles as the
    reference for its own generation, mirroring held-out evaluation where the
    generator must reproduce an unseen image's noise from one observation.
    """
    if not eval_pairs:
        raise ConfigError("evaluate_generation needs at least one (clean, noisy) pair")
    per_image = []
    fake_first = []
    for idx, (clean, noisy) in enumerate(eval_pairs):
        fakes = generate_noisy(generator, key_disc, clean, noisy, draws, seed=seed + idx)
        per_image.append(akld(noisy, fakes, clean))
        fake_first.append(fakes[0])
    cleans = [c for c, _ in eval_pairs]
    reals = [n for _, n in eval_pairs]
    ks = ks_value(reals, fake_first, cleans)
    return {
        "akld": float(np.mean(per_image)),
        "ks": ks,
        "per_image_akld": per_image,
        "fakes_first_draw": fake_first,
    }


def write_report(out_dir: str, results: dict, eval_pairs: list) -> dict[str, str]:
    """TSV report plus a real-vs-generated noise histogram plot."""
    os.makedirs(out_dir, exist_ok=True)
    tsv_path = os.path.join(out_dir, "evaluation.tsv")
    with open(tsv_path, "w", encoding="utf-8") as fh:
        fh.write("image\takld\n")
        for idx, val in enumerate(results["per_image_akld"]):
            fh.write(f"{idx}\t{val:.10g}\n")
        fh.write(f"mean\t{results['akld']:.10g}\n")
        fh.write(f"ks\t{results['ks']:.10g}\n")

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    real_counts = np.zeros(HIST_BINS, dtype=np.int64)
    fake_counts = np.zeros(HIST_BINS, dtype=np.int64)
    for (clean, noisy), fake in zip(eval_pairs, results["fakes_first_draw"]):
        real_counts += noise_histogram(noise_of(noisy, clean))
        fake_counts += noise_histogram(noise_of(fake, clean))
    centers = np.linspace(HIST_RANGE[0], HIST_RANGE[1], HIST_BINS, endpoint=False)
    centers += (HIST_RANGE[1] - HIST_RANGE[0]) / (2 * HIST_BINS)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(centers, real_counts / max(real_counts.sum(), 1), label="real noise")
    ax.plot(centers, fake_counts / max(fake_counts.sum(), 1), label="generated noise")
    ax.set_xlabel("noise value (8-bit units)")
    ax.set_ylabel("probability")
    ax.legend()
    fig.tight_layout()
    plot_path = os.path.join(out_dir, "noise_histograms.png")
    fig.savefig(plot_path, dpi=120)
    plt.close(fig)
    return {"tsv": tsv_path, "plot": plot_path}

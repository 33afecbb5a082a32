"""Synthetic noise laws used for training data synthesis and controlled evaluation.

Images are arrays of reals in [0,1]. Noise strength follows the denoising
literature conventions: ``sigma`` is a standard deviation on the 8-bit scale
(applied as ``sigma/255``), ``lam`` is a Poisson event scale (applied as a
per-pixel count ``lam * x``). Sampled noisy images are deliberately not
clipped to [0,1]; use :func:`clip01` only when writing display images.

All samplers are pure functions of an explicitly passed
``numpy.random.Generator``, so they are safe to call from many workers as
long as each owns its own generator.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

KINDS = ("gaussian", "poisson", "poisson_gaussian")

# Parameter ranges of the training regime; wider values work but are flagged.
TRAIN_SIGMA_RANGE = (0.0, 70.0)
TRAIN_LAM_RANGE = (5.0, 100.0)
N2G_SIGMA_RANGE = (0.0, 50.0)
N2G_LAM_RANGE = (5.0, 50.0)


@dataclass(frozen=True)
class NoiseSpec:
    """Tagged description of one synthetic noise law.

    kind      one of ``gaussian``, ``poisson``, ``poisson_gaussian``
    sigma     Gaussian std-dev in 8-bit pixel units (required unless pure poisson)
    lam       Poisson scale (required unless pure gaussian)
    """

    kind: str
    sigma: float | None = None
    lam: float | None = None

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown noise kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "gaussian":
            if self.sigma is None or self.lam is not None:
                raise ConfigError("gaussian spec requires sigma set and lam unset")
        elif self.kind == "poisson":
            if self.lam is None or self.sigma is not None:
                raise ConfigError("poisson spec requires lam set and sigma unset")
        else:
            if self.sigma is None or self.lam is None:
                raise ConfigError("poisson_gaussian spec requires both sigma and lam")
        if self.sigma is not None:
            if self.sigma < 0:
                raise ConfigError(f"sigma must be >= 0, got {self.sigma}")
            if not TRAIN_SIGMA_RANGE[0] <= self.sigma <= TRAIN_SIGMA_RANGE[1]:
                warnings.warn(
                    f"sigma={self.sigma} outside the training regime {TRAIN_SIGMA_RANGE}",
                    stacklevel=2,
                )
        if self.lam is not None:
            if self.lam <= 0:
                raise ConfigError(f"lam must be > 0, got {self.lam}")
            if not TRAIN_LAM_RANGE[0] <= self.lam <= TRAIN_LAM_RANGE[1]:
                warnings.warn(
                    f"lam={self.lam} outside the training regime {TRAIN_LAM_RANGE}",
                    stacklevel=2,
                )

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sigma": self.sigma, "lam": self.lam}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        unknown = set(d) - {"kind", "sigma", "lam"}
        if unknown:
            raise ConfigError(f"unknown NoiseSpec keys: {sorted(unknown)}")
        if "kind" not in d:
            raise ConfigError("NoiseSpec requires a 'kind' key")
        spec = cls(kind=d["kind"], sigma=d.get("sigma"), lam=d.get("lam"))
        spec.validate()
        return spec


def sample_noisy(clean: np.ndarray, spec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """Corrupt a clean image with the given noise law.

    gaussian:          y = x + n,              n ~ N(0, (sigma/255)^2) i.i.d.
    poisson:           y = Pois(lam * x) / lam
    poisson_gaussian:  y = Pois(lam * x) / lam + n

    The output has the same shape and dtype as ``clean`` and is NOT clipped.
    """
    spec.validate()
    clean = np.asarray(clean)
    if clean.size and (clean.min() < 0.0 or clean.max() > 1.0):
        raise DataError(
            f"clean image values outside [0,1]: min={clean.min():.4f} max={clean.max():.4f}"
        )
    if spec.kind == "gaussian":
        noisy = clean + rng.normal(0.0, spec.sigma / 255.0, size=clean.shape)
    elif spec.kind == "poisson":
        noisy = rng.poisson(spec.lam * clean.astype(np.float64)) / spec.lam
    else:
        noisy = rng.poisson(spec.lam * clean.astype(np.float64)) / spec.lam
        noisy = noisy + rng.normal(0.0, spec.sigma / 255.0, size=clean.shape)
    return noisy.astype(clean.dtype, copy=False)


def sample_spec(regime: str, rng: np.random.Generator) -> NoiseSpec:
    """Draw a random NoiseSpec for a sampling regime.

    ``train``:     kind uniform over all three laws, sigma ~ U[0,70], lam ~ U[5,100]
    ``n2g_eval``:  same kinds, sigma ~ U[0,50], lam ~ U[5,50]
    """
    if regime == "train":
        sigma_range, lam_range = TRAIN_SIGMA_RANGE, TRAIN_LAM_RANGE
    elif regime == "n2g_eval":
        sigma_range, lam_range = N2G_SIGMA_RANGE, N2G_LAM_RANGE
    else:
        raise ConfigError(f"unknown sampling regime {regime!r}; expected 'train' or 'n2g_eval'")
    kind = KINDS[rng.integers(0, len(KINDS))]
    sigma = float(rng.uniform(*sigma_range)) if kind != "poisson" else None
    lam = float(rng.uniform(*lam_range)) if kind != "gaussian" else None
    return NoiseSpec(kind=kind, sigma=sigma, lam=lam)


def clip01(img: np.ndarray) -> np.ndarray:
    """Clip to the displayable [0,1] range. For encoding/display only."""
    return np.clip(img, 0.0, 1.0)

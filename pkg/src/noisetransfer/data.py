"""Training-batch assembly from paired real folders plus synthetic corruption.

Real data is described by a UTF-8 tab-separated manifest, one record per
line: clean_path<TAB>noisy_path<TAB>group_id. Paths are relative to the
manifest's directory unless absolute. A group id marks images sharing one
real noise distribution; positives are drawn within a group.

Batches are assembled half real-sourced, half synthetic-sourced by default
(the ratio is configurable). All images are float32 H×W×C in [0,1]; noisy
values may leave [0,1] and are intentionally not clipped.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image

from .errors import ConfigError, DataError
from .noise import NoiseSpec, sample_noisy, sample_spec

IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp")


def load_image(path: str) -> np.ndarray:
    """Decode an 8-bit sRGB image to float32 H×W×3 in [0,1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except FileNotFoundError:
        raise DataError(f"image not found: {path}")
    except OSError as exc:
        raise DataError(f"cannot decode image {path}: {exc}")
    return arr / 255.0


def dihedral(img: np.ndarray, k: int) -> np.ndarray:
    """One of the 8 flip/rotation variants; k in [0,8)."""
    if not 0 <= k < 8:
        raise ConfigError(f"dihedral index must be in [0,8), got {k}")
    out = np.rot90(img, k % 4, axes=(0, 1))
    if k >= 4:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def _random_top_left(h: int, w: int, patch: int, rng: np.random.Generator) -> tuple[int, int]:
    return int(rng.integers(0, h - patch + 1)), int(rng.integers(0, w - patch + 1))


def _crop(img: np.ndarray, top_left: tuple[int, int], patch: int) -> np.ndarray:
    i, j = top_left
    return img[i : i + patch, j : j + patch]


def extract_positive_pair(
    noisy: np.ndarray,
    patch_size: int,
    rng: np.random.Generator,
    name: str = "<array>",
) -> tuple[np.ndarray, np.ndarray]:
    """Two patches of one noisy image with distinct top-left coordinates.

    A single valid position (image exactly patch-sized) yields two identical
    patches and a warning; a smaller image is a data error naming the file.
    """
    h, w = noisy.shape[:2]
    if h < patch_size or w < patch_size:
        raise DataError(
            f"image {name} is {h}x{w}, smaller than patch size {patch_size}"
        )
    first = _random_top_left(h, w, patch_size, rng)
    if h == patch_size and w == patch_size:
        warnings.warn(f"image {name} admits a single {patch_size}-patch position;"
                      " positive pair is degenerate")
        return _crop(noisy, first, patch_size), _crop(noisy, first, patch_size)
    second = _random_top_left(h, w, patch_size, rng)
    while second == first:
        second = _random_top_left(h, w, patch_size, rng)
    return _crop(noisy, first, patch_size), _crop(noisy, second, patch_size)


class PairedDataset:
    """Clean/noisy pairs listed in a manifest file, loaded lazily with a cache."""

    def __init__(self, records: list[tuple[str, str, str]], root: str = ".",
                 patch_size: int = 96):
        if patch_size < 1:
            raise ConfigError("patch_size must be positive")
        self.records = list(records)
        self.root = root
        self.patch_size = patch_size
        self._cache: dict[str, np.ndarray] = {}

    @classmethod
    def from_manifest(cls, manifest_path: str, patch_size: int = 96) -> "PairedDataset":
        records = []
        try:
            with open(manifest_path, encoding="utf-8") as fh:
                for ln, line in enumerate(fh, 1):
                    line = line.rstrip("\n")
                    if not line or line.startswith("#"):
                        continue
                    parts = line.split("\t")
                    if len(parts) != 3:
                        raise DataError(
                            f"{manifest_path}:{ln}: expected 3 tab-separated fields,"
                            f" got {len(parts)}"
                        )
                    records.append((parts[0], parts[1], parts[2]))
        except FileNotFoundError:
            raise DataError(f"manifest not found: {manifest_path}")
        except UnicodeDecodeError:
            raise DataError(f"not a text manifest: {manifest_path}")
        return cls(records, root=os.path.dirname(os.path.abspath(manifest_path)),
                   patch_size=patch_size)

    def __len__(self) -> int:
        return len(self.records)

    def _load(self, rel_path: str) -> np.ndarray:
        if rel_path not in self._cache:
            path = rel_path if os.path.isabs(rel_path) else os.path.join(self.root, rel_path)
            self._cache[rel_path] = load_image(path)
        return self._cache[rel_path]

    def load_pair(self, idx: int) -> tuple[np.ndarray, np.ndarray]:
        clean_p, noisy_p, _ = self.records[idx]
        clean, noisy = self._load(clean_p), self._load(noisy_p)
        if clean.shape != noisy.shape:
            raise DataError(
                f"pair dimension mismatch: {clean_p} {clean.shape} vs {noisy_p} {noisy.shape}"
            )
        return clean, noisy

    def group_indices(self, group_id: str) -> list[int]:
        return [i for i, r in enumerate(self.records) if r[2] == group_id]


def write_manifest(records: list[tuple[str, str, str]], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for clean_p, noisy_p, gid in records:
            fh.write(f"{clean_p}\t{noisy_p}\t{gid}\n")


def build_sidd_manifest(sidd_dir: str, out_path: str) -> int:
    """Scan an SIDD-Medium style tree (scene dirs holding *GT_SRGB* /
    *NOISY_SRGB* images) and write a manifest. Returns the record count."""
    records = []
    for dirpath, _, filenames in sorted(os.walk(sidd_dir)):
        for fn in sorted(filenames):
            if "GT_SRGB" not in fn or not fn.lower().endswith(IMAGE_EXTS):
                continue
            noisy_fn = fn.replace("GT_SRGB", "NOISY_SRGB")
            if noisy_fn in filenames:
                gid = os.path.basename(dirpath)
                records.append(
                    (os.path.join(dirpath, fn), os.path.join(dirpath, noisy_fn), gid)
                )
    if not records:
        raise DataError(f"no GT_SRGB/NOISY_SRGB pairs found under {sidd_dir}")
    write_manifest(records, out_path)
    return len(records)


class CleanPool:
    """Pool of clean images for synthetic corruption, from arrays or a folder."""

    def __init__(self, images: list[np.ndarray]):
        if not images:
            raise ConfigError("clean pool is empty")
        self.images = images

    @classmethod
    def from_dir(cls, directory: str) -> "CleanPool":
        if not os.path.isdir(directory):
            raise DataError(f"clean image directory not found: {directory}")
        paths = sorted(
            os.path.join(directory, f)
            for f in os.listdir(directory)
            if f.lower().endswith(IMAGE_EXTS)
        )
        if not paths:
            raise DataError(f"no images found in {directory}")
        return cls([load_image(p) for p in paths])

    def sample_patch(self, patch: int, rng: np.random.Generator) -> np.ndarray:
        img = self.images[int(rng.integers(0, len(self.images)))]
        h, w = img.shape[:2]
        if h < patch or w < patch:
            raise DataError(f"clean image {h}x{w} smaller than patch {patch}")
        return _crop(img, _random_top_left(h, w, patch, rng), patch).copy()


@dataclass
class TrainingBatch:
    X: np.ndarray  # B×H×W×C clean
    Y: np.ndarray  # B×H×W×C noisy (adversarial real set)
    Y_pos: np.ndarray  # positive-pair noisy, same distribution as Y
    Y_ref: np.ndarray  # reference fed to the key encoder
    specs: list  # per-sample provenance: group id (str) or NoiseSpec


def make_batch(
    real_ds: PairedDataset | None,
    clean_pool: CleanPool | None,
    batch: int,
    patch: int,
    rng: np.random.Generator,
    real_fraction: float = 0.5,
    augment: bool = True,
    paired_ref: bool = True,
    spec_sampler=None,
    regime: str = "train",
) -> TrainingBatch:
    """Assemble one training batch; deterministic given the generator state.

    Real-sourced samples crop aligned (X, Y) at one position and the positive
    at another position of the same noisy image. Synthetic samples corrupt
    independent clean patches with one NoiseSpec per sample (fresh draws for
    Y and Y_pos). Y_ref is Y_pos in paired mode, otherwise a further patch
    from the same group / a further fresh draw.
    """
    if batch < 2 or batch % 2 != 0:
        raise ConfigError(f"batch size must be even and >= 2, got {batch}")
    if not 0.0 <= real_fraction <= 1.0:
        raise ConfigError(f"real_fraction must be in [0,1], got {real_fraction}")
    n_real = int(batch * real_fraction)
    n_synth = batch - n_real
    if n_real > 0 and (real_ds is None or len(real_ds) == 0):
        raise ConfigError("real samples requested but the paired dataset is empty")
    if n_synth > 0 and clean_pool is None:
        raise ConfigError("synthetic samples requested but the clean pool is empty")

    xs, ys, ypos, yref, specs = [], [], [], [], []

    for _ in range(n_real):
        idx = int(rng.integers(0, len(real_ds)))
        clean_p, noisy_p, gid = real_ds.records[idx]
        clean, noisy = real_ds.load_pair(idx)
        h, w = noisy.shape[:2]
        if h < patch or w < patch:
            raise DataError(f"image {noisy_p} is {h}x{w}, smaller than patch {patch}")
        t1 = _random_top_left(h, w, patch, rng)
        x, y = _crop(clean, t1, patch), _crop(noisy, t1, patch)
        if h == patch and w == patch:
            warnings.warn(f"image {noisy_p} admits a single {patch}-patch position")
            t2 = t1
        else:
            t2 = _random_top_left(h, w, patch, rng)
            while t2 == t1:
                t2 = _random_top_left(h, w, patch, rng)
        y_pos = _crop(noisy, t2, patch)
        if paired_ref:
            y_ref = y_pos
        else:
            peers = real_ds.group_indices(gid)
            pidx = peers[int(rng.integers(0, len(peers)))]
            _, peer_noisy = real_ds.load_pair(pidx)
            ph, pw = peer_noisy.shape[:2]
            y_ref = _crop(peer_noisy, _random_top_left(ph, pw, patch, rng), patch)
        xs.append(x); ys.append(y); ypos.append(y_pos); yref.append(y_ref)
        specs.append(gid)

    for _ in range(n_synth):
        spec = spec_sampler(rng) if spec_sampler is not None else sample_spec(regime, rng)
        x = clean_pool.sample_patch(patch, rng)
        y = sample_noisy(x, spec, rng)
        x2 = clean_pool.sample_patch(patch, rng)
        y_pos = sample_noisy(x2, spec, rng)
        if paired_ref:
            y_ref = y_pos
        else:
            x3 = clean_pool.sample_patch(patch, rng)
            y_ref = sample_noisy(x3, spec, rng)
        xs.append(x); ys.append(y); ypos.append(y_pos); yref.append(y_ref)
        specs.append(spec)

    if augment:
        for i in range(batch):
            # one transform per sample, shared by X and Y so pairs stay aligned
            k = int(rng.integers(0, 8))
            xs[i] = dihedral(xs[i], k)
            ys[i] = dihedral(ys[i], k)
            k2 = int(rng.integers(0, 8))
            ypos[i] = dihedral(ypos[i], k2)
            if paired_ref:
                yref[i] = ypos[i]
            else:
                yref[i] = dihedral(yref[i], int(rng.integers(0, 8)))

    stack = lambda lst: np.stack(lst).astype(np.float32)
    return TrainingBatch(stack(xs), stack(ys), stack(ypos), stack(yref), specs)


def to_torch(batch: TrainingBatch, device: str = "cpu") -> dict[str, torch.Tensor]:
    """NCHW float32 tensors keyed x, y, y_pos, y_ref."""
    def conv(a: np.ndarray) -> torch.Tensor:
        return torch.from_numpy(np.ascontiguousarray(a.transpose(0, 3, 1, 2))).to(device)

    return {
        "x": conv(batch.X),
        "y": conv(batch.Y),
        "y_pos": conv(batch.Y_pos),
        "y_ref": conv(batch.Y_ref),
    }

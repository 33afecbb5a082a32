"""Run configuration: nested sections, profiles, YAML files, env overrides.

A run config has one section per module family. Unknown keys are rejected
with their dotted path. The `paper` profile encodes the published training
settings verbatim; the `toy` profile is a desk-scale variant used by smoke
tests and examples.

Environment overrides use the prefix NOISETRANSFER_ with double underscores
between path components, e.g. NOISETRANSFER_TRAINER__LR=2e-4 or
NOISETRANSFER_TRAINER__WEIGHTS__W_RECON=50. Values are parsed as YAML
scalars. Overrides apply on top of the file, before validation.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields

import yaml

from .errors import ConfigError
from .losses import AblationFlags, LossWeights, ReconLossConfig
from .models import DiscriminatorConfig, GeneratorConfig
from .denoise import DenoiserConfig
from .noise import NoiseSpec
from .trainer import TrainerConfig

ENV_PREFIX = "NOISETRANSFER_"
PROFILES = ("paper", "toy")


@dataclass
class DataConfig:
    manifest: str | None = None  # paired real data (clean<TAB>noisy<TAB>group)
    clean_dir: str | None = None  # folder of clean images for synthetic corruption
    eval_manifest: str | None = None  # held-out pairs for AKLD/KS
    eval_limit: int | None = None
    synthetic_specs: list | None = None  # fixed NoiseSpec dicts; None = full regime

    def to_dict(self) -> dict:
        return dict(self.__dict__)


_NESTED_TRAINER = {
    "weights": LossWeights,
    "recon": ReconLossConfig,
    "ablation": AblationFlags,
}


def _build(cls, value: dict, path: str):
    """Construct a (possibly nested) dataclass, rejecting unknown keys."""
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(value).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(value) - known)
    if unknown:
        raise ConfigError(f"unknown config key: {path}.{unknown[0]}")
    kwargs = {}
    for key, val in value.items():
        if cls is TrainerConfig and key in _NESTED_TRAINER and isinstance(val, dict):
            kwargs[key] = _build(_NESTED_TRAINER[key], val, f"{path}.{key}")
        else:
            kwargs[key] = val
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}")


@dataclass
class RunConfig:
    profile: str = "toy"
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> None:
        if self.profile not in PROFILES:
            raise ConfigError(
                f"profile must be one of {PROFILES}, got {self.profile!r}"
            )
        self.generator.validate()
        self.discriminator.validate()
        self.trainer.validate()
        self.denoiser.validate()
        if self.generator.embed_dim != self.discriminator.embed_dim:
            raise ConfigError(
                "generator.embed_dim and discriminator.embed_dim must match"
            )
        div = 2**self.generator.depth
        if self.trainer.patch % div != 0:
            raise ConfigError(
                f"trainer.patch must be divisible by 2**generator.depth ({div})"
            )
        if self.data.synthetic_specs is not None:
            for i, spec in enumerate(self.data.synthetic_specs):
                NoiseSpec.from_dict(spec).validate()

    def to_dict(self) -> dict:
        return {
            "profile": self.profile,
            "generator": self.generator.to_dict(),
            "discriminator": self.discriminator.to_dict(),
            "trainer": self.trainer.to_dict(),
            "denoiser": self.denoiser.to_dict(),
            "data": self.data.to_dict(),
        }

    def spec_sampler(self):
        """Sampler over the configured fixed spec list, or None for the full regime."""
        specs = self.data.synthetic_specs
        if not specs:
            return None
        parsed = [NoiseSpec.from_dict(s) for s in specs]

        def sampler(rng):
            return parsed[int(rng.integers(0, len(parsed)))]

        return sampler


def profile_dict(profile: str) -> dict:
    """Baseline section values for a named profile."""
    if profile == "paper":
        return {
            "profile": "paper",
            "generator": {"base_channels": 64, "depth": 3, "z_dim": 32,
                          "embed_dim": 128, "spectral_norm": True},
            "discriminator": {"base_channels": 64, "embed_dim": 128,
                              "mlp_hidden": 256, "spectral_norm": True},
            "trainer": {
                "lr": 1e-4, "beta1": 0.5, "beta2": 0.99, "weight_decay": 1e-7,
                "steps_per_epoch": 2000, "epochs": 200, "batch": 32, "patch": 96,
                "tau": 0.1, "momentum": 0.999, "queue_capacity": 4096,
                "real_fraction": 0.5, "eval_draws": 50,
            },
        }
    if profile == "toy":
        return {
            "profile": "toy",
            "generator": {"base_channels": 16, "depth": 2, "z_dim": 8,
                          "embed_dim": 64, "spectral_norm": True},
            "discriminator": {"base_channels": 16, "embed_dim": 64,
                              "mlp_hidden": 128, "spectral_norm": True},
            "trainer": {
                "lr": 1e-4, "beta1": 0.5, "beta2": 0.99, "weight_decay": 1e-7,
                "steps_per_epoch": 100, "epochs": 4, "batch": 8, "patch": 32,
                "tau": 0.1, "momentum": 0.99, "queue_capacity": 512,
                "real_fraction": 0.0, "eval_draws": 8,
            },
            "denoiser": {"layers": 6, "channels": 24, "epochs": 3},
        }
    raise ConfigError(f"unknown profile {profile!r}; expected one of {PROFILES}")


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = val
    return out


def config_from_dict(raw: dict) -> RunConfig:
    """Strict RunConfig construction: profile baseline + user overrides."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    profile = raw.get("profile", "toy")
    merged = _deep_merge(profile_dict(profile), raw)
    sections = {
        "generator": GeneratorConfig,
        "discriminator": DiscriminatorConfig,
        "trainer": TrainerConfig,
        "denoiser": DenoiserConfig,
        "data": DataConfig,
    }
    unknown = sorted(set(merged) - set(sections) - {"profile"})
    if unknown:
        raise ConfigError(f"unknown config key: {unknown[0]}")
    kwargs = {"profile": profile}
    for name, cls in sections.items():
        kwargs[name] = _build(cls, merged.get(name, {}), name)
    cfg = RunConfig(**kwargs)
    try:
        cfg.validate()
    except TypeError as exc:
        raise ConfigError(f"invalid config value type: {exc}")
    return cfg


def env_overrides(environ: dict | None = None) -> dict:
    """Nested override dict read from NOISETRANSFER_SECTION__KEY variables."""
    environ = os.environ if environ is None else environ
    out: dict = {}
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        parts = key[len(ENV_PREFIX):].lower().split("__")
        if not all(parts):
            raise ConfigError(f"malformed override variable {key}")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            value = raw
        if isinstance(value, str):
            # YAML 1.1 leaves dot-less exponents like "2e-4" as strings
            try:
                value = int(value)
            except ValueError:
                try:
                    value = float(value)
                except ValueError:
                    pass
        node = out
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return out


def load_config(path: str | None = None, apply_env: bool = True,
                overrides: dict | None = None) -> RunConfig:
    """Load a YAML config file, apply env + explicit overrides, validate."""
    raw: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}")
    if apply_env:
        raw = _deep_merge(raw, env_overrides())
    if overrides:
        raw = _deep_merge(raw, overrides)
    return config_from_dict(raw)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def dry_run_shapes(cfg: RunConfig) -> dict:
    """Build the networks and push one zero batch through every path."""
    import torch

    from .models import NoiseDiscriminator, NoiseGenerator

    gen = NoiseGenerator(cfg.generator)
    disc = NoiseDiscriminator(cfg.discriminator)
    patch = cfg.trainer.patch
    x = torch.zeros(1, cfg.generator.in_channels, patch, patch)
    with torch.no_grad():
        gen.eval(), disc.eval()
        e, m_noise = disc.embed_noise(x)
        fake = gen(x, e, rng=torch.Generator().manual_seed(0))
        out = disc.score_gan(x, e, fake)
    return {
        "embedding": tuple(e.shape),
        "generated": tuple(fake.shape),
        "gan_scores": [tuple(s.shape) for s in out.gan_scores],
        "m_noise": [tuple(m.shape) for m in m_noise],
    }

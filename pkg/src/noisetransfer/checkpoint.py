"""Single-archive checkpoints with bit-exact round-trips.

A checkpoint is one .npz archive (a zip of named, shape- and dtype-tagged
arrays) holding a JSON metadata blob plus every tensor of every module and
optimizer, the RNG states, and optionally the negative queue. Float arrays
are stored little-endian; loading restores dtypes and values exactly, which
is what makes resumed training bit-identical to an uninterrupted run.
"""

from __future__ import annotations

import json
from collections import OrderedDict

import numpy as np
import torch

from .errors import ConfigError, DataError

FORMAT_VERSION = 1
_META_KEY = "__meta__"


def _to_le(arr: np.ndarray) -> np.ndarray:
    """Force little-endian byte order (no-op on LE hosts)."""
    dt = arr.dtype
    if dt.byteorder == ">" or (dt.byteorder == "=" and not np.little_endian):
        return arr.astype(dt.newbyteorder("<"))
    return arr


def save_archive(path: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    meta = dict(meta)
    meta.setdefault("format_version", FORMAT_VERSION)
    blob = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8).copy()
    if _META_KEY in arrays:
        raise ConfigError(f"array key {_META_KEY} is reserved")
    # write through a handle so numpy never appends its own extension
    with open(path, "wb") as fh:
        np.savez(fh, **{_META_KEY: blob}, **{k: _to_le(v) for k, v in arrays.items()})


def load_archive(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with np.load(path, allow_pickle=False) as zf:
            arrays = {k: zf[k] for k in zf.files}
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}")
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}")
    if _META_KEY not in arrays:
        raise DataError(f"{path} is not a checkpoint archive (missing metadata)")
    meta = json.loads(arrays.pop(_META_KEY).tobytes().decode("utf-8"))
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise ConfigError(
            f"checkpoint format version {version} unsupported (expected {FORMAT_VERSION})"
        )
    return meta, arrays


def arrays_from_state_dict(sd: dict[str, torch.Tensor], prefix: str) -> dict[str, np.ndarray]:
    return {f"{prefix}/{k}": v.detach().cpu().numpy() for k, v in sd.items()}


def state_dict_from_arrays(arrays: dict[str, np.ndarray], prefix: str) -> "OrderedDict[str, torch.Tensor]":
    pfx = prefix + "/"
    sd = OrderedDict()
    for key in arrays:
        if key.startswith(pfx):
            sd[key[len(pfx):]] = torch.from_numpy(arrays[key].copy())
    if not sd:
        raise DataError(f"checkpoint holds no entries under '{prefix}'")
    return sd


def optimizer_arrays(opt: torch.optim.Optimizer, prefix: str) -> tuple[dict[str, np.ndarray], dict]:
    """Flatten an optimizer state_dict into named arrays plus JSON metadata."""
    sd = opt.state_dict()
    arrays: dict[str, np.ndarray] = {}
    state_meta: dict[str, list[str]] = {}
    for idx, entry in sd["state"].items():
        keys = []
        for name, value in entry.items():
            tensor = value if torch.is_tensor(value) else torch.tensor(value)
            arrays[f"{prefix}/{idx}/{name}"] = tensor.detach().cpu().numpy()
            keys.append(name)
        state_meta[str(idx)] = keys
    meta = {"param_groups": sd["param_groups"], "state_keys": state_meta}
    return arrays, meta


def load_optimizer(
    opt: torch.optim.Optimizer, arrays: dict[str, np.ndarray], prefix: str, meta: dict
) -> None:
    state = {}
    for idx_str, keys in meta["state_keys"].items():
        entry = {}
        for name in keys:
            arr = arrays.get(f"{prefix}/{idx_str}/{name}")
            if arr is None:
                raise DataError(f"optimizer entry {prefix}/{idx_str}/{name} missing")
            entry[name] = torch.from_numpy(arr.copy())
        state[int(idx_str)] = entry
    groups = []
    for group in meta["param_groups"]:
        group = dict(group)
        for key, value in group.items():
            # JSON stores tuples (e.g. Adam betas) as lists; restore them
            if isinstance(value, list) and isinstance(opt.defaults.get(key), tuple):
                group[key] = tuple(value)
        groups.append(group)
    opt.load_state_dict({"state": state, "param_groups": groups})


def np_rng_meta(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def np_rng_from_meta(state: dict) -> np.random.Generator:
    bitgen_cls = getattr(np.random, state["bit_generator"])
    bitgen = bitgen_cls()
    bitgen.state = state
    return np.random.Generator(bitgen)


def torch_rng_array(gen: torch.Generator | None = None) -> np.ndarray:
    state = torch.get_rng_state() if gen is None else gen.get_state()
    return state.numpy()


def restore_torch_rng(arr: np.ndarray, gen: torch.Generator | None = None) -> torch.Generator | None:
    state = torch.from_numpy(arr.copy())
    if gen is None:
        torch.set_rng_state(state)
        return None
    gen.set_state(state)
    return gen

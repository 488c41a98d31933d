"""Checkpoint directory format.

A checkpoint is a directory holding `manifest.json` plus one raw
little-endian float32 file per named parameter under `params/`. The manifest
records the schema version, parameter names and shapes, storage dtype,
whether optimizer state is present, and the RNG bookkeeping needed to resume
a run deterministically. Adam moments, when saved, live under `opt/` in the
same raw format.
"""

from __future__ import annotations

import json
import os

import numpy as np

SCHEMA_VERSION = 1
DTYPE_TAG = "f32le"
_DTYPE = np.dtype("<f4")


def _write_raw(path: str, arr: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(np.ascontiguousarray(arr, dtype=_DTYPE).tobytes())


def _read_raw(path: str, shape) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    arr = np.frombuffer(buf, dtype=_DTYPE)
    expected = int(np.prod(shape)) if shape else 1
    if arr.size != expected:
        raise ValueError(f"{path}: expected {expected} float32 values, found {arr.size}")
    return arr.reshape(shape).copy()


def save_checkpoint(path: str, params: dict, model_config: dict | None = None,
                    optimizer_state: dict | None = None, rng_state: dict | None = None,
                    seed: int | None = None, step: int | None = None,
                    extra: dict | None = None) -> None:
    """Write parameters (name -> Node or ndarray) and metadata to `path`."""
    os.makedirs(os.path.join(path, "params"), exist_ok=True)
    arrays = {k: (v.value if hasattr(v, "value") else np.asarray(v)) for k, v in params.items()}
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "dtype": DTYPE_TAG,
        "params": [{"name": k, "shape": list(a.shape)} for k, a in sorted(arrays.items())],
        "has_optimizer": optimizer_state is not None,
        "seed": seed,
        "rng_state": rng_state,
        "model_config": model_config,
        "step": step,
        "extra": extra or {},
    }
    for name, arr in arrays.items():
        _write_raw(os.path.join(path, "params", name + ".bin"), arr)
    if optimizer_state is not None:
        opt_dir = os.path.join(path, "opt")
        os.makedirs(opt_dir, exist_ok=True)
        manifest["adam_t"] = int(optimizer_state["t"])
        for name, arr in optimizer_state["m"].items():
            _write_raw(os.path.join(opt_dir, name + ".m.bin"), arr)
        for name, arr in optimizer_state["v"].items():
            _write_raw(os.path.join(opt_dir, name + ".v.bin"), arr)
    tmp = os.path.join(path, "manifest.json.tmp")
    with open(tmp, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, os.path.join(path, "manifest.json"))


class Checkpoint:
    def __init__(self, manifest: dict, params: dict, optimizer_state: dict | None):
        self.manifest = manifest
        self.params = params
        self.optimizer_state = optimizer_state

    @property
    def model_config(self) -> dict | None:
        return self.manifest.get("model_config")

    @property
    def rng_state(self) -> dict | None:
        return self.manifest.get("rng_state")

    @property
    def step(self) -> int | None:
        return self.manifest.get("step")


def load_checkpoint(path: str) -> Checkpoint:
    with open(os.path.join(path, "manifest.json")) as f:
        manifest = json.load(f)
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(
            f"unsupported checkpoint schema {manifest.get('schema_version')}, "
            f"this build reads version {SCHEMA_VERSION}"
        )
    if manifest.get("dtype") != DTYPE_TAG:
        raise ValueError(f"unsupported parameter dtype {manifest.get('dtype')!r}")
    params = {}
    for entry in manifest["params"]:
        name, shape = entry["name"], tuple(entry["shape"])
        params[name] = _read_raw(os.path.join(path, "params", name + ".bin"), shape)
    optimizer_state = None
    if manifest.get("has_optimizer"):
        m, v = {}, {}
        for entry in manifest["params"]:
            name, shape = entry["name"], tuple(entry["shape"])
            m[name] = _read_raw(os.path.join(path, "opt", name + ".m.bin"), shape)
            v[name] = _read_raw(os.path.join(path, "opt", name + ".v.bin"), shape)
        optimizer_state = {"t": manifest["adam_t"], "m": m, "v": v}
    return Checkpoint(manifest, params, optimizer_state)

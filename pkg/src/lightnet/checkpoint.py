"""Checkpoints as ``<name>.manifest.json`` plus a raw ``<name>.bin`` blob.

The manifest carries the format version, model config, step counter and,
per tensor, its name, shape, dtype, byte offset and byte length. The blob
is every tensor's little-endian IEEE-754 bytes back to back in manifest
order: model parameters first, then the optimizer's first and second
moments under ``adam.m.<name>`` and ``adam.v.<name>``.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from lightnet.model import LightNetModel, ModelConfig
from lightnet.numerics import Tensor
from lightnet.optim import Adam

FORMAT = "lightnet-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def checkpoint_paths(path) -> tuple[Path, Path]:
    """``run`` or ``run.manifest.json`` or ``run.bin`` -> both file paths."""
    p = Path(path)
    name = p.name
    for suffix in (".manifest.json", ".bin"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
    return p.with_name(name + ".manifest.json"), p.with_name(name + ".bin")


def _le(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=a.dtype.newbyteorder("<"))


def save_checkpoint(model: LightNetModel, path, optimizer: Adam | None = None, step: int | None = None) -> tuple[Path, Path]:
    manifest_path, blob_path = checkpoint_paths(path)
    arrays: list[tuple[str, np.ndarray]] = [(k, t.data) for k, t in model.params.items()]
    if optimizer is not None:
        for name in model.params:
            if name in optimizer.m:
                arrays.append((f"adam.m.{name}", optimizer.m[name]))
                arrays.append((f"adam.v.{name}", optimizer.v[name]))
    entries, offset = [], 0
    for name, arr in arrays:
        le = _le(arr)
        entries.append({"name": name, "shape": list(arr.shape), "dtype": le.dtype.str, "offset": offset, "nbytes": le.nbytes})
        offset += le.nbytes
    manifest = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "step": int(optimizer.step_count if step is None and optimizer is not None else step or 0),
        "optimizer": None if optimizer is None else {"lr": optimizer.lr, "betas": list(optimizer.betas), "eps": optimizer.eps, "warmup": optimizer.warmup},
        "total_bytes": offset,
        "tensors": entries,
    }
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    tmp = blob_path.with_name(blob_path.name + ".tmp")
    with open(tmp, "wb") as fh:
        for _, arr in arrays:
            fh.write(_le(arr).tobytes())
    os.replace(tmp, blob_path)
    manifest_path.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return manifest_path, blob_path


def read_manifest(path) -> dict:
    manifest_path, _ = checkpoint_paths(path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header {manifest_path}: {exc}") from exc
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT:
        raise CheckpointError(f"corrupt checkpoint header {manifest_path}: not a {FORMAT} manifest")
    if manifest.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {manifest.get('version')} is not supported (expected {FORMAT_VERSION})")
    for key in ("config", "tensors", "total_bytes"):
        if key not in manifest:
            raise CheckpointError(f"corrupt checkpoint header {manifest_path}: missing {key!r}")
    return manifest


def load_checkpoint(path, expect: ModelConfig | None = None, with_optimizer: bool = False):
    """Load a model (and optionally a restored :class:`Adam`).

    ``expect`` rejects checkpoints whose config differs, naming the first
    differing field.
    """
    manifest_path, blob_path = checkpoint_paths(path)
    manifest = read_manifest(manifest_path)
    try:
        cfg = ModelConfig.from_dict(manifest["config"])
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint header {manifest_path}: bad config ({exc})") from exc
    if expect is not None:
        field = expect.first_difference(cfg)
        if field is not None:
            raise CheckpointError(
                f"checkpoint config differs in field {field!r}: expected {getattr(expect, field)!r}, found {getattr(cfg, field)!r}"
            )
    blob = blob_path.read_bytes()
    total = int(manifest["total_bytes"])
    if len(blob) < total:
        raise CheckpointError(f"truncated checkpoint {blob_path}: expected {total} bytes, found {len(blob)} ({total - len(blob)} bytes missing)")
    if len(blob) > total:
        raise CheckpointError(f"checkpoint {blob_path} has {len(blob) - total} unexpected trailing bytes")
    arrays = {}
    for e in manifest["tensors"]:
        dt = np.dtype(e["dtype"])
        count = int(np.prod(e["shape"], dtype=np.int64))
        if count * dt.itemsize != e["nbytes"] or e["offset"] + e["nbytes"] > total:
            raise CheckpointError(f"corrupt checkpoint header {manifest_path}: inconsistent entry for {e['name']}")
        a = np.frombuffer(blob, dtype=dt, count=count, offset=e["offset"]).reshape(e["shape"])
        arrays[e["name"]] = a.astype(dt.newbyteorder("="))
    params = {k: Tensor(a, requires_grad=True, name=k) for k, a in arrays.items() if not k.startswith("adam.")}
    model = LightNetModel(cfg, params)
    if not with_optimizer:
        return model
    opt_cfg = manifest.get("optimizer") or {}
    opt = Adam(opt_cfg.get("lr", 3e-4), tuple(opt_cfg.get("betas", (0.9, 0.98))), opt_cfg.get("eps", 1e-8), opt_cfg.get("warmup", 0))
    m = {k[len("adam.m."):]: a for k, a in arrays.items() if k.startswith("adam.m.")}
    v = {k[len("adam.v."):]: a for k, a in arrays.items() if k.startswith("adam.v.")}
    opt.load_state(manifest.get("step", 0), m, v)
    return model, opt

"""Byte-exact named-tensor checkpoints.

A checkpoint directory holds manifest.json — a list of
{name, dtype ("f32"|"f64"), shape, offset, length} entries — and
weights.bin, the little-endian raw arrays concatenated in manifest order.
Offsets and lengths are bytes. A subset of names (e.g. adapters only) can
be saved to keep artifacts small.
"""

import json
from pathlib import Path

import numpy as np

from .errors import FormatError

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


def save_checkpoint(directory, registry, names=None):
    """Write manifest.json + weights.bin for `registry` (name -> Tensor).

    `names`: optional iterable restricting which entries are saved,
    in registry order.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    keep = None if names is None else set(names)
    manifest = []
    offset = 0
    chunks = []
    for name, t in registry.items():
        if keep is not None and name not in keep:
            continue
        dtype_name = _NAMES.get(t.data.dtype)
        if dtype_name is None:
            raise FormatError(f"{name}: unsupported dtype {t.data.dtype}")
        raw = np.ascontiguousarray(t.data).astype(_DTYPES[dtype_name], copy=False).tobytes()
        manifest.append({
            "name": name,
            "dtype": dtype_name,
            "shape": list(t.data.shape),
            "offset": offset,
            "length": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    with open(directory / "weights.bin", "wb") as fh:
        for raw in chunks:
            fh.write(raw)


def load_checkpoint(directory):
    """Read a checkpoint directory -> ordered dict name -> float array."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"{directory}: no manifest.json")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if not isinstance(manifest, list):
        raise FormatError(f"{manifest_path}: manifest must be a list of entries")
    blob = (directory / "weights.bin").read_bytes()
    out = {}
    for entry in manifest:
        try:
            name, dtype = entry["name"], entry["dtype"]
            shape, offset, length = entry["shape"], entry["offset"], entry["length"]
        except (KeyError, TypeError) as exc:
            raise FormatError(f"{manifest_path}: malformed entry {entry!r}") from exc
        if dtype not in _DTYPES:
            raise FormatError(f"{name}: unknown dtype {dtype!r}")
        if offset + length > len(blob):
            raise FormatError(f"{name}: entry overruns weights.bin "
                              f"({offset}+{length} > {len(blob)})")
        arr = np.frombuffer(blob, dtype=_DTYPES[dtype], count=length // _DTYPES[dtype].itemsize,
                            offset=offset)
        expected = int(np.prod(shape)) if shape else 1
        if arr.size != expected:
            raise FormatError(f"{name}: length {length} inconsistent with shape {shape}")
        native = np.float32 if dtype == "f32" else np.float64
        out[name] = np.array(arr, dtype=native).reshape(shape)
    return out


def load_into_model(model, directory, strict=True):
    """Copy checkpoint arrays into matching registry tensors in place."""
    loaded = load_checkpoint(directory)
    missing = [n for n in model.registry if n not in loaded]
    unexpected = [n for n in loaded if n not in model.registry]
    if strict and (missing or unexpected):
        raise FormatError(f"checkpoint mismatch: missing {missing[:4]}..., "
                          f"unexpected {unexpected[:4]}...")
    for name, arr in loaded.items():
        if name not in model.registry:
            continue
        t = model.registry[name]
        if tuple(arr.shape) != t.data.shape:
            raise FormatError(f"{name}: checkpoint shape {arr.shape} != model {t.data.shape}")
        t.data[...] = arr.astype(t.data.dtype, copy=False)
    return loaded

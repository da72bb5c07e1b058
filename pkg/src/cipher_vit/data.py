"""CIFAR-10 binary ingestion and the fixed resize -> encrypt -> normalize pipeline.

Records are 3073 bytes: one label byte then 3072 pixel bytes, channel-planar
(1024 R, 1024 G, 1024 B), each plane row-major 32x32. Encryption, when
requested, derives a single block permutation from (key, P) and applies it
to every image; normalization always comes last because the scramble mixes
color channels and per-channel statistics must see the scrambled bytes.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import codec, kernels
from .errors import FormatError, GeometryError, ParameterError

RECORD_BYTES = 3073
TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
TEST_FILES = ["test_batch.bin"]


class Cifar10Record(NamedTuple):
    label: int
    pixels: np.ndarray  # (3, 32, 32) uint8


def read_batch_file(path):
    """One binary batch -> (labels uint8 (N,), images uint8 (N, 3, 32, 32))."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % RECORD_BYTES:
        complete = raw.size // RECORD_BYTES
        raise FormatError(
            f"{path}: truncated batch, {raw.size} bytes is not a multiple of "
            f"{RECORD_BYTES} (trailing fragment starts at byte offset {complete * RECORD_BYTES})")
    records = raw.reshape(-1, RECORD_BYTES)
    labels = records[:, 0].copy()
    if labels.size and labels.max() > 9:
        raise FormatError(f"{path}: label {labels.max()} outside [0, 9]")
    images = records[:, 1:].reshape(-1, 3, 32, 32).copy()
    return labels, images


def load_cifar10(path, split="train", limit=None):
    """Load a CIFAR-10 binary directory (or a single .bin file).

    Deterministic prefix order: files in the standard order, records as stored.
    """
    path = Path(path)
    if path.is_file():
        files = [path]
    else:
        names = TRAIN_FILES if split == "train" else TEST_FILES
        # partial archives are fine (subset fixtures); an empty one is not
        files = [path / name for name in names if (path / name).exists()]
        if not files:
            raise FileNotFoundError(f"{path}: none of {names} present")
    all_labels, all_images = [], []
    seen = 0
    for f in files:
        labels, images = read_batch_file(f)
        all_labels.append(labels)
        all_images.append(images)
        seen += labels.size
        if limit is not None and seen >= limit:
            break
    labels = np.concatenate(all_labels)
    images = np.concatenate(all_images)
    if limit is not None:
        labels, images = labels[:limit], images[:limit]
    return labels, images


def write_batch_file(path, labels, images):
    """Inverse of read_batch_file; used to build small fixture datasets."""
    labels = np.asarray(labels, dtype=np.uint8)
    images = np.asarray(images, dtype=np.uint8)
    records = np.empty((labels.size, RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = labels
    records[:, 1:] = images.reshape(labels.size, 3072)
    records.tofile(path)


def iter_records(path):
    labels, images = read_batch_file(path)
    for label, pixels in zip(labels, images):
        yield Cifar10Record(int(label), pixels)


# ------------------------------------------------------------------ resize

def resize(img, target, method="bilinear"):
    """uint8 (3, H, W) -> (3, target, target); half-pixel-centers sampling."""
    if target < 1:
        raise ParameterError(f"resize target must be >= 1, got {target}")
    if img.ndim != 3 or img.shape[0] != 3 or img.dtype != np.uint8:
        raise FormatError(f"resize expects uint8 (3, H, W), got {img.dtype} {img.shape}")
    if method == "bilinear":
        return kernels.bilinear_resize(img, target)
    if method == "nearest":
        return kernels.nearest_resize(img, target)
    raise ParameterError(f"unknown interpolation {method!r}")


# ------------------------------------------------------------- preprocessing

@dataclass(frozen=True)
class PreprocessSpec:
    target_size: int = 224
    interpolation: str = "bilinear"
    mean: tuple = (0.5, 0.5, 0.5)
    std: tuple = (0.5, 0.5, 0.5)
    encrypt_key: int | None = None
    encrypt_patch: int | None = None

    def __post_init__(self):
        if self.target_size < 1:
            raise ParameterError(f"target_size must be >= 1, got {self.target_size}")
        if self.interpolation not in ("nearest", "bilinear"):
            raise ParameterError(f"interpolation must be nearest or bilinear, "
                                 f"got {self.interpolation!r}")
        mean, std = tuple(self.mean), tuple(self.std)
        if len(mean) != 3 or len(std) != 3:
            raise ParameterError("mean and std must each have 3 channel entries")
        if any(s == 0 for s in std):
            raise ParameterError("std entries must be nonzero")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)
        if self.encrypt_key is not None and self.encrypt_patch is None:
            raise ParameterError("encrypt_key set without encrypt_patch")

    @property
    def encrypted(self):
        return self.encrypt_key is not None


def prepare(images, spec, dtype=np.float32, perm=None):
    """uint8 (N, 3, H, W) -> float (N, 3, T, T), resize -> encrypt -> normalize.

    A single permutation is shared by every image. Callers preparing several
    splits pass a precomputed perm so the key is expanded exactly once per
    run; otherwise one is derived here from the spec.
    """
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    if not spec.encrypted:
        perm = None
    else:
        if spec.target_size % spec.encrypt_patch:
            raise GeometryError(
                f"target size {spec.target_size} not divisible by encryption "
                f"patch {spec.encrypt_patch}")
        if perm is None:
            perm = codec.derive_permutation(spec.encrypt_key, spec.encrypt_patch)
        elif perm.patch_size != spec.encrypt_patch:
            raise GeometryError(
                f"permutation patch {perm.patch_size} does not match "
                f"spec encrypt_patch {spec.encrypt_patch}")
    out = np.empty((images.shape[0], 3, spec.target_size, spec.target_size), dtype=dtype)
    mean = np.asarray(spec.mean, dtype=dtype).reshape(3, 1, 1)
    std = np.asarray(spec.std, dtype=dtype).reshape(3, 1, 1)
    for i in range(images.shape[0]):
        img = resize(images[i], spec.target_size, spec.interpolation)
        if perm is not None:
            img = codec.encrypt_image(img, perm)
        out[i] = (img.astype(dtype) / dtype(255.0) - mean) / std
    return out

"""Keyed block-wise image scrambling.

An image is split into non-overlapping P x P blocks; inside every block the
3*P*P scalar values (flattened channel-major: c*P*P + y*P + x) are permuted
by one keyed shuffle shared across all blocks and all images. The shuffle is
pinned for portable golden vectors: a SplitMix64 stream seeded with the
64-bit key drives a descending Fisher-Yates with j = next_u64 mod (i+1).

Images are uint8, channel-major (3, H, W). PPM (P6, maxval 255) is the
on-disk interchange format.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import FormatError, GeometryError, ParameterError

_MASK64 = (1 << 64) - 1


def splitmix64(state):
    """One SplitMix64 draw; returns (next_state, output), both 64-bit."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True)
class EncryptionKey:
    """64-bit seed; any value is valid."""

    seed: int

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)


@dataclass(frozen=True)
class BlockPermutation:
    """Forward/inverse bijection on the 3*P*P in-block positions."""

    patch_size: int
    forward: np.ndarray
    inverse: np.ndarray
    key: EncryptionKey

    def __post_init__(self):
        n = 3 * self.patch_size * self.patch_size
        if sorted(self.forward.tolist()) != list(range(n)):
            raise ParameterError(f"forward is not a permutation of 0..{n - 1}")
        if not np.array_equal(self.forward[self.inverse], np.arange(n)):
            raise ParameterError("inverse does not invert forward")


def derive_permutation(key, patch_size):
    """Keyed Fisher-Yates shuffle of the 3*P*P in-block positions."""
    if not isinstance(key, EncryptionKey):
        key = EncryptionKey(key)
    if patch_size < 1:
        raise ParameterError(f"patch_size must be >= 1, got {patch_size}")
    n = 3 * patch_size * patch_size
    perm = np.arange(n, dtype=np.int64)
    state = key.seed
    for i in range(n - 1, 0, -1):
        state, draw = splitmix64(state)
        j = draw % (i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    inverse = np.empty(n, dtype=np.int64)
    inverse[perm] = np.arange(n, dtype=np.int64)
    return BlockPermutation(patch_size, perm, inverse, key)


def _check_geometry(img, patch_size):
    if img.ndim != 3 or img.shape[0] != 3:
        raise GeometryError(f"expected channel-major (3, H, W) image, got shape {img.shape}")
    if img.dtype != np.uint8:
        raise FormatError(f"codec operates on uint8 images, got {img.dtype}")
    _, h, w = img.shape
    if h % patch_size or w % patch_size:
        raise GeometryError(
            f"image {h}x{w} not divisible into {patch_size}x{patch_size} blocks")


def _to_blocks(img, p):
    """(3, H, W) -> (num_blocks, 3*p*p), rows ordered row-major over blocks,
    values flattened channel-major (c, y, x) within each block."""
    _, h, w = img.shape
    x = img.reshape(3, h // p, p, w // p, p)
    x = x.transpose(1, 3, 0, 2, 4)  # (by, bx, c, y, x)
    return np.ascontiguousarray(x.reshape(-1, 3 * p * p))


def _from_blocks(blocks, p, h, w):
    x = blocks.reshape(h // p, w // p, 3, p, p)
    x = x.transpose(2, 0, 3, 1, 4)
    return np.ascontiguousarray(x.reshape(3, h, w))


def _apply(img, perm_vector, patch_size):
    _check_geometry(img, patch_size)
    _, h, w = img.shape
    blocks = _to_blocks(img, patch_size)
    shuffled = kernels.permute_columns(blocks, perm_vector)
    return _from_blocks(shuffled, patch_size, h, w)


def encrypt_image(img, perm):
    """Scramble every block with the shared permutation: out[k] = in[forward[k]]."""
    return _apply(img, perm.forward, perm.patch_size)


def decrypt_image(img, perm):
    """Exact inverse of encrypt_image."""
    return _apply(img, perm.inverse, perm.patch_size)


def keyspace_bits(patch_size):
    """log2 of reachable permutations: min((3P^2)!, 2^64) in bits."""
    n = 3 * patch_size * patch_size
    log2_fact = math.lgamma(n + 1) / math.log(2.0)
    return min(log2_fact, 64.0)


# ----------------------------------------------------------------- perm files

def write_permutation(path, perm):
    """Plain text, one integer per line (convention: perm_<key>_<P>.txt)."""
    with open(path, "w") as fh:
        for v in perm.forward.tolist():
            fh.write(f"{v}\n")


def read_permutation_vector(path):
    with open(path) as fh:
        return np.array([int(line) for line in fh if line.strip()], dtype=np.int64)


# ----------------------------------------------------------------------- PPM

def read_ppm(path):
    """Binary PPM (P6, maxval 255) -> uint8 (3, H, W)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        if pos >= len(raw):
            raise FormatError(f"{path}: truncated PPM header")
        ch = raw[pos:pos + 1]
        if ch == b"#":  # comment to end of line
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(raw) and not raw[pos:pos + 1].isspace():
                pos += 1
            fields.append(raw[start:pos])
    if fields[0] != b"P6":
        raise FormatError(f"{path}: not a binary PPM (magic {fields[0]!r})")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise FormatError(f"{path}: maxval must be 255, got {maxval}")
    pos += 1  # single whitespace after maxval
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=pos)
    if pixels.size != 3 * h * w:
        raise FormatError(f"{path}: expected {3 * h * w} pixel bytes, got {pixels.size}")
    return np.ascontiguousarray(pixels.reshape(h, w, 3).transpose(2, 0, 1))


def write_ppm(path, img):
    if img.ndim != 3 or img.shape[0] != 3 or img.dtype != np.uint8:
        raise FormatError(f"write_ppm needs uint8 (3, H, W), got {img.dtype} {img.shape}")
    _, h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(img.transpose(1, 2, 0)).tobytes())
